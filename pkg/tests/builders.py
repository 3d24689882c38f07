"""Hand-constructed and randomized model builders shared across test modules."""
import numpy as np

from spnaqp.conditions import Condition, ConditionSet, DiscreteSet, IntervalUnion
from spnaqp.spn import LeafContinuous, LeafDiscrete, ProductNode, Spn, SumNode
from spnaqp.table import CONTINUOUS, DISCRETE, ColumnMeta

SALARY_CAP = 1_000_000.0


def _salary_leaf(rising: bool) -> LeafContinuous:
    breaks = np.array([0.0, 0.5 * SALARY_CAP, SALARY_CAP])
    if rising:
        dens = np.array([0.2e-6, 1.0e-6, 1.8e-6])
    else:
        dens = np.array([1.8e-6, 1.0e-6, 0.2e-6])
    # materialized sample via inverse transform on a dense grid
    xs = np.linspace(0.0, SALARY_CAP, 4001)
    pdf = np.interp(xs, breaks, dens)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(xs))])
    cdf = cdf / cdf[-1]
    qs = (np.arange(512) + 0.5) / 512
    return LeafContinuous("salary", breaks, dens, np.sort(np.interp(qs, cdf, xs)))


def two_branch_spn(row_count: int = 10_000) -> Spn:
    """Two-component mixture over (gender, salary) with known closed-form answers.

    P(gender=female AND salary in [500k, 1m]) = 0.3*0.8*0.7 + 0.7*0.3*0.3 = 0.231;
    conditioning on gender=female reweights the mixture to (8/15, 7/15).
    """
    left = ProductNode([
        LeafDiscrete("gender", ("female", "male"), np.array([0.8, 0.2])),
        _salary_leaf(rising=True),
    ])
    right = ProductNode([
        LeafDiscrete("gender", ("female", "male"), np.array([0.3, 0.7])),
        _salary_leaf(rising=False),
    ])
    root = SumNode([left, right], np.array([0.3, 0.7]))
    schema = [
        ColumnMeta("gender", DISCRETE, ("female", "male")),
        ColumnMeta("salary", CONTINUOUS, None, 0.0, SALARY_CAP),
    ]
    return Spn(root, schema, row_count)


def discrete_metas(domain_sizes=(2, 3, 4)) -> list:
    return [
        ColumnMeta(f"c{i}", DISCRETE, tuple(range(sz)))
        for i, sz in enumerate(domain_sizes)
    ]


def random_discrete_spn(rng: np.random.Generator, domain_sizes=(2, 3, 4),
                        row_count: int = 1000) -> Spn:
    """Random small tree over all-discrete columns; node count stays under 20."""
    metas = discrete_metas(domain_sizes)
    by_name = {m.name: m for m in metas}

    def leaf(col: str) -> LeafDiscrete:
        dom = by_name[col].domain
        masses = rng.dirichlet(np.ones(len(dom))) + 0.01
        return LeafDiscrete(col, dom, masses / masses.sum())

    def build(cols: list, depth: int):
        if len(cols) == 1:
            return leaf(cols[0])
        if depth <= 0 or rng.random() < 0.3:
            return ProductNode([leaf(c) for c in cols])
        if rng.random() < 0.5:
            w = rng.dirichlet(np.ones(2)) + 0.05
            w = w / w.sum()
            return SumNode([build(cols, depth - 1), build(cols, depth - 1)], w)
        order = list(cols)
        rng.shuffle(order)
        cut = int(rng.integers(1, len(order)))
        return ProductNode([build(sorted(order[:cut]), depth - 1),
                            build(sorted(order[cut:]), depth - 1)])

    root = build([m.name for m in metas], depth=2)
    if isinstance(root, (LeafDiscrete, LeafContinuous)):
        root = ProductNode([root, leaf(metas[1].name)])  # unreachable for >=2 cols
    return Spn(root, metas, row_count)


def random_condition_set(rng: np.random.Generator, metas,
                         include_prob: float = 0.5) -> ConditionSet:
    conds = []
    for m in metas:
        if rng.random() >= include_prob:
            continue
        if m.is_discrete():
            k = int(rng.integers(1, len(m.domain) + 1))
            picked = rng.choice(len(m.domain), size=k, replace=False)
            conds.append(Condition(m.name, DiscreteSet.of(m.domain[i] for i in picked)))
        else:
            a, b = sorted(rng.uniform(m.lo, m.hi, size=2))
            conds.append(Condition(m.name, IntervalUnion.single(float(a), float(b))))
    return ConditionSet.of(conds)
