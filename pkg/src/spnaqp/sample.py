"""Model-driven sample generation: plain, condition-biased, and stratified.

Conditioned sampling never rejects: sum-node weights are re-scaled by each
child's probability of the conditioning event, and leaves draw only admissible
values, so every generated row satisfies the condition by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditions import ConditionSet, DiscreteSet
from .infer import ZeroProbability, leaf_probability
from .spn import LEAF_KINDS, LeafContinuous, LeafDiscrete, ProductNode, Spn, SumNode
from .table import domain_is_numeric

RANDOM = "random"
RELEVANCE = "relevance"
STRATIFIED = "stratified"

_DENSITY_GRID = 513


@dataclass
class SampleBatch:
    """Columnar batch of generated rows over the model's (marginal) scope."""

    columns: dict
    order: list
    satisfied: ConditionSet
    seed: object = None

    def size(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def row(self, i: int) -> tuple:
        return tuple(self.columns[c][i] for c in self.order)


def _out_array(meta, n: int) -> np.ndarray:
    if meta.is_discrete():
        if domain_is_numeric(meta.domain):
            return np.zeros(n, dtype=np.int64)
        return np.empty(n, dtype=object)
    return np.zeros(n, dtype=np.float64)


def _draw_discrete(leaf: LeafDiscrete, cond, m: int, rng) -> np.ndarray:
    dset = cond.constraint if cond is not None else None
    vals, masses = leaf.restricted(dset)
    total = masses.sum()
    if not vals or total <= 0:
        raise ZeroProbability(f"leaf over {leaf.column!r} has no admissible values")
    picks = rng.choice(len(vals), size=m, p=masses / total)
    lookup = np.array(vals, dtype=np.int64 if domain_is_numeric(tuple(vals)) else object)
    return lookup[picks]


def _draw_continuous(leaf: LeafContinuous, cond, m: int, rng) -> np.ndarray:
    if cond is None:
        idx = rng.integers(0, len(leaf.sample), size=m)
        return leaf.sample[idx]
    iu = cond.constraint
    if isinstance(iu, DiscreteSet):
        raise ZeroProbability(f"point constraint on continuous column {leaf.column!r}")
    slices = leaf.sample_slices(iu)
    total = sum(b - a for a, b in slices)
    if total > 0:
        starts = np.cumsum([0] + [b - a for a, b in slices])
        flat = rng.integers(0, total, size=m)
        piece = np.searchsorted(starts, flat, side="right") - 1
        offsets = flat - starts[piece]
        bases = np.array([a for a, _ in slices])
        return leaf.sample[bases[piece] + offsets]
    return _inverse_transform(leaf, iu, m, rng)


def _inverse_transform(leaf: LeafContinuous, iu, m: int, rng) -> np.ndarray:
    """Fallback for an empty filtered sample over a positive-mass region."""
    lo_support, hi_support = leaf.support_range()
    pieces = []
    masses = []
    for piece in iu.intervals:
        lo = max(piece.lo, lo_support)
        hi = min(piece.hi, hi_support)
        if hi <= lo:
            continue
        mass = leaf._cdf(hi) - leaf._cdf(lo)
        if mass > 0:
            pieces.append((lo, hi))
            masses.append(mass)
    if not pieces:
        raise ZeroProbability(f"no admissible mass on continuous column {leaf.column!r}")
    masses = np.asarray(masses)
    choice = rng.choice(len(pieces), size=m, p=masses / masses.sum())
    out = np.empty(m, dtype=np.float64)
    for j, (lo, hi) in enumerate(pieces):
        take = choice == j
        count = int(take.sum())
        if not count:
            continue
        grid = np.linspace(lo, hi, _DENSITY_GRID)
        cdf = np.array([leaf._cdf(x) for x in grid])
        u = rng.uniform(cdf[0], cdf[-1], size=count)
        out[take] = np.interp(u, cdf, grid)
    return out


def _sample_into(node, idx: np.ndarray, out: dict, cs: ConditionSet, rng) -> None:
    if len(idx) == 0:
        return
    if isinstance(node, LeafDiscrete):
        out[node.column][idx] = _draw_discrete(node, cs.get(node.column), len(idx), rng)
        return
    if isinstance(node, LeafContinuous):
        out[node.column][idx] = _draw_continuous(node, cs.get(node.column), len(idx), rng)
        return
    if isinstance(node, ProductNode):
        for child in node.children:
            _sample_into(child, idx, out, cs, rng)
        return
    picks = rng.choice(len(node.children), size=len(idx), p=node.weights)
    for j, child in enumerate(node.children):
        _sample_into(child, idx[picks == j], out, cs, rng)


def _generate(spn: Spn, cs: ConditionSet, n: int, rng) -> dict:
    out = {m.name: _out_array(m, n) for m in spn.columns}
    _sample_into(spn.root, np.arange(n), out, cs, rng)
    return out


def sample_random(spn: Spn, n: int, seed) -> SampleBatch:
    """n unconditioned rows; sum nodes branch by weight, continuous leaves
    draw uniformly from their materialized samples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cs = ConditionSet.empty()
    return SampleBatch(_generate(spn, cs, n, rng), spn.column_names(), cs, seed)


def condition_weights(spn: Spn, cs: ConditionSet) -> Spn:
    """Re-scale every sum weight by its child's probability of cs, renormalized.

    Children whose branch loses all mass are dropped; a sum left with one
    live child collapses into it.
    """

    def walk(node):
        if isinstance(node, LEAF_KINDS):
            return node, leaf_probability(node, cs.get(node.column))
        if isinstance(node, ProductNode):
            pairs = [walk(c) for c in node.children]
            p = 1.0
            for _, cp in pairs:
                p *= cp
            return ProductNode([c for c, _ in pairs]), p
        pairs = [walk(c) for c in node.children]
        scaled = np.array([w * cp for w, (_, cp) in zip(node.weights, pairs)])
        total = float(scaled.sum())
        if total <= 0.0:
            return node, 0.0
        live = [(child, sw) for (child, _), sw in zip(pairs, scaled) if sw > 0.0]
        if len(live) == 1:
            return live[0][0], total
        children = [c for c, _ in live]
        weights = np.array([sw for _, sw in live]) / total
        return SumNode(children, weights), total

    root, p = walk(spn.root)
    if p <= 0.0:
        raise ZeroProbability("conditioning event has zero probability under the model")
    meta = dict(spn.metadata)
    meta["conditioned_on"] = cs.describe()
    return Spn(root, list(spn.columns), spn.row_count, meta)


def sample_conditioned(spn: Spn, cs: ConditionSet, n: int, seed) -> SampleBatch:
    """n rows that all satisfy cs, drawn without rejection."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    biased = condition_weights(spn, cs)
    return SampleBatch(_generate(biased, cs, n, rng), spn.column_names(), cs, seed)


def plain_sampler(spn: Spn):
    """Reusable draw(n, rng) closure over the unconditioned model."""
    cs = ConditionSet.empty()

    def draw(n: int, rng) -> dict:
        return _generate(spn, cs, n, rng)

    return draw


def conditioned_sampler(spn: Spn, cs: ConditionSet):
    """Reusable draw(n, rng) closure; reweights sums once, up front."""
    biased = condition_weights(spn, cs)

    def draw(n: int, rng) -> dict:
        return _generate(biased, cs, n, rng)

    return draw


@dataclass
class StratAllocation:
    per_group: dict  # group tuple -> sample count
    budget: int

    def total(self) -> int:
        return sum(self.per_group.values())


def _even_split(budget: int, keys: list) -> dict:
    base, rem = divmod(budget, len(keys))
    return {g: base + (1 if i < rem else 0) for i, g in enumerate(keys)}


def allocate_stratified(spn: Spn, group_cols, groups, E: ConditionSet, budget: int,
                        group_conditions=None) -> StratAllocation:
    """Spread the budget evenly across groups, capped by each group's estimated
    row support round(P(E and g) * row_count); cut-off excess re-spreads evenly
    over uncapped groups until nothing moves."""
    from .infer import probability
    from .conditions import Condition

    caps = {}
    for g in groups:
        if group_conditions is not None and g in group_conditions:
            joint = group_conditions[g]
        else:
            conds = [Condition(c, DiscreteSet.of([v])) for c, v in zip(group_cols, g)]
            joint = E.conjoin(ConditionSet.of(conds))
        caps[g] = int(round(probability(spn, joint) * spn.row_count))

    live = sorted(g for g in groups if caps[g] > 0)
    if not live:
        return StratAllocation({}, budget)
    alloc = _even_split(budget, live)
    frozen: dict = {}
    while True:
        over = [g for g in alloc if alloc[g] > caps[g]]
        if not over:
            break
        excess = 0
        for g in over:
            excess += alloc[g] - caps[g]
            frozen[g] = caps[g]
            del alloc[g]
        if not alloc or excess == 0:
            break
        extra = _even_split(excess, sorted(alloc))
        for g, add in extra.items():
            alloc[g] += add
    out = dict(frozen)
    out.update(alloc)
    return StratAllocation({g: out[g] for g in sorted(out) if out[g] > 0}, budget)


def multipliers(kind: str, row_count: int, sample_count: int, probability: float | None = None) -> float:
    """Scale-up factor from retained sample aggregates to table-level numbers."""
    if sample_count <= 0:
        raise ValueError("sample count must be positive")
    m = row_count / sample_count
    if kind == RANDOM:
        return m
    if kind in (RELEVANCE, STRATIFIED):
        if probability is None:
            raise ValueError(f"{kind} multiplier needs the event probability")
        return m * probability
    raise ValueError(f"unknown sampler kind {kind!r}")
