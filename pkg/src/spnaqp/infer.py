"""Bottom-up inference: event probabilities, conditional means, group listing.

Probabilities evaluate leaves against their column's condition (1 when
unconstrained), then combine child values multiplicatively at product nodes
and as weighted sums at sum nodes. Conditional expectations propagate
(mass-weighted mean, mass) pairs so a zero-mass branch contributes nothing
instead of dividing by zero.
"""
from __future__ import annotations

import itertools

from .conditions import Condition, ConditionSet, DiscreteSet, IntervalUnion
from .queries import linear_terms
from .spn import LEAF_KINDS, LeafContinuous, LeafDiscrete, ProductNode, Spn, SumNode, scope


class ZeroProbability(Exception):
    """The conditioning event has no mass under the model."""


def leaf_probability(leaf, condition: Condition | None) -> float:
    """P(condition) under one leaf; unconstrained columns contribute 1."""
    if condition is None:
        return 1.0
    if condition.column != leaf.column:
        raise ValueError(
            f"condition on {condition.column!r} applied to leaf over {leaf.column!r}"
        )
    c = condition.constraint
    if isinstance(leaf, LeafDiscrete):
        if not isinstance(c, DiscreteSet):
            raise TypeError(f"discrete column {leaf.column!r} needs a value-set condition")
        return leaf.probability(c)
    if isinstance(c, DiscreteSet):
        return 0.0  # a point set carries no mass under a density
    return leaf.probability(c)


def _check_columns(spn: Spn, cs: ConditionSet) -> None:
    modeled = set(spn.column_names())
    unknown = [c for c in cs.columns() if c not in modeled]
    if unknown:
        raise KeyError(f"columns not modeled: {unknown}")


def probability(spn: Spn, cs: ConditionSet) -> float:
    """P(cs) under the model; the empty condition set has probability 1."""
    _check_columns(spn, cs)

    def walk(node) -> float:
        if isinstance(node, LEAF_KINDS):
            return leaf_probability(node, cs.get(node.column))
        if isinstance(node, ProductNode):
            p = 1.0
            for c in node.children:
                p *= walk(c)
                if p == 0.0:
                    return 0.0
            return p
        total = 0.0
        for w, c in zip(node.weights, node.children):
            total += w * walk(c)
        return total

    return float(min(max(walk(spn.root), 0.0), 1.0))


def _moment(node, column: str, cs: ConditionSet) -> tuple[float, float]:
    """(E[X * 1_cs], P(cs)) for the target column under this subtree."""
    if isinstance(node, LeafDiscrete):
        if node.column != column:
            return 0.0, leaf_probability(node, cs.get(node.column))
        cond = cs.get(column)
        dset = cond.constraint if cond is not None else None
        if dset is not None and not isinstance(dset, DiscreteSet):
            raise TypeError(f"discrete column {column!r} needs a value-set condition")
        return node.mean(dset)
    if isinstance(node, LeafContinuous):
        if node.column != column:
            return 0.0, leaf_probability(node, cs.get(node.column))
        cond = cs.get(column)
        iu = cond.constraint if cond is not None else None
        if iu is not None and isinstance(iu, DiscreteSet):
            return 0.0, 0.0
        return node.mean(iu)
    if isinstance(node, ProductNode):
        e_target, p_target = None, 1.0
        p_others = 1.0
        for child in node.children:
            if column in scope(child):
                e_target, p_target = _moment(child, column, cs)
            else:
                p_others *= _subtree_probability(child, cs)
        if e_target is None:
            return 0.0, p_others
        return e_target * p_others, p_target * p_others
    e = 0.0
    p = 0.0
    for w, child in zip(node.weights, node.children):
        ce, cp = _moment(child, column, cs)
        e += w * ce
        p += w * cp
    return e, p


def _subtree_probability(node, cs: ConditionSet) -> float:
    if isinstance(node, LEAF_KINDS):
        return leaf_probability(node, cs.get(node.column))
    if isinstance(node, ProductNode):
        p = 1.0
        for c in node.children:
            p *= _subtree_probability(c, cs)
        return p
    return float(sum(w * _subtree_probability(c, cs) for w, c in zip(node.weights, node.children)))


def column_expectation(spn: Spn, column: str, cs: ConditionSet) -> float:
    """E[column | cs]; raises ZeroProbability when P(cs) = 0."""
    _check_columns(spn, cs)
    if column not in spn.column_names():
        raise KeyError(f"column {column!r} not modeled")
    e, p = _moment(spn.root, column, cs)
    if p <= 0.0:
        raise ZeroProbability("conditioning event has zero probability")
    return e / p


def expectation(spn: Spn, target, cs: ConditionSet) -> float:
    """E[target | cs] for a +/- linear target expression over numeric columns."""
    coeffs, const = linear_terms(target)
    value = const
    for column, coeff in sorted(coeffs.items()):
        if coeff == 0.0:
            continue
        value += coeff * column_expectation(spn, column, cs)
    return value


def group_values(spn: Spn, group_cols, cs: ConditionSet) -> list[tuple]:
    """Group tuples with positive mass under cs, in lexicographic order."""
    _check_columns(spn, cs)
    supports = []
    for col in group_cols:
        meta = spn.meta_for(col)
        if not meta.is_discrete():
            raise TypeError(f"cannot enumerate groups of continuous column {col!r}")
        support: set = set()
        for node in _leaves_of(spn.root, col):
            support.update(node.support())
        cond = cs.get(col)
        if cond is not None:
            support = {v for v in support if cond.constraint.contains(v)}
        supports.append(sorted(support))
    out = []
    for combo in itertools.product(*supports):
        conds = [Condition(c, DiscreteSet.of([v])) for c, v in zip(group_cols, combo)]
        joint = cs.conjoin(ConditionSet.of(conds))
        if probability(spn, joint) > 0.0:
            out.append(tuple(combo))
    return out


def _leaves_of(node, column: str):
    if isinstance(node, LEAF_KINDS):
        if node.column == column:
            yield node
        return
    for c in node.children:
        yield from _leaves_of(c, column)
