"""Filter compilation and execution-strategy selection.

WHERE trees become signed lists of per-column ConditionSets: conjunctions
intersect per column, same-column disjunctions merge into one constraint, and
cross-column disjunctions expand through the addition rule
(A OR B -> +A, +B, -(A AND B)), recursively, capped so pathological filters
fall back to row sampling instead of exploding.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import table as tbl
from .conditions import Condition, ConditionSet, DiscreteSet, IntervalUnion
from .queries import (
    AGGREGATES,
    AVG,
    COUNT,
    And,
    NonLinear,
    Or,
    Pred,
    QuerySpec,
    SqlError,
    UnsupportedFeature,
    coerce_constant,
    expr_columns,
    linear_terms,
    query_columns,
)

EXPANSION_CAP = 64

PROBABILITY = "probability"
SAMPLE = "sample"


class CompileTooLarge(Exception):
    """Disjunction expansion exceeded the signed-term cap."""


@dataclass(frozen=True)
class SignedConditionSets:
    """Signed conjunctive terms; the filter's mass is the sign-weighted sum."""

    terms: tuple  # of (sign, ConditionSet)

    def positive(self):
        return [cs for sign, cs in self.terms if sign > 0]

    def single_positive(self):
        return len(self.terms) == 1 and self.terms[0][0] > 0

    def has_degenerate(self) -> bool:
        return any(cs.has_degenerate() for _, cs in self.terms)


def validate_query(q: QuerySpec, schema: list[tbl.ColumnMeta]) -> None:
    """Shape checks shared by every executor: columns, aggregate, group kinds."""
    metas = {m.name: m for m in schema}
    if q.aggregate not in AGGREGATES:
        raise UnsupportedFeature(f"aggregate {q.aggregate}")
    for c in sorted(query_columns(q)):
        if c not in metas:
            raise SqlError(f"unknown column {c!r}")
    for c in q.group_by:
        if not metas[c].is_discrete():
            raise UnsupportedFeature(f"GROUP BY on continuous column {c!r}")
    if q.aggregate != COUNT:
        if q.target is None:
            raise SqlError(f"{q.aggregate} requires a target expression")
        if not expr_columns(q.target):
            raise SqlError(f"{q.aggregate} target must reference at least one column")
        for c in expr_columns(q.target):
            m = metas[c]
            if m.is_discrete() and not tbl.domain_is_numeric(m.domain):
                raise UnsupportedFeature(
                    f"arithmetic over string-domain column {c!r}"
                )
    if q.filter is not None:
        _validate_filter(q.filter, metas)


def _validate_filter(node, metas) -> None:
    if isinstance(node, Pred):
        meta = metas[node.column]
        coerce_constant(node.value, meta)  # raises on type mismatch
        if (
            node.op in ("<", "<=", ">", ">=")
            and meta.is_discrete()
            and not tbl.domain_is_numeric(meta.domain)
        ):
            raise UnsupportedFeature(
                f"ordering comparison on unordered domain of column {node.column!r}"
            )
        return
    _validate_filter(node.left, metas)
    _validate_filter(node.right, metas)


def compile_predicate(pred: Pred, meta: tbl.ColumnMeta) -> Condition:
    """A single comparison as a value set (discrete) or interval union."""
    value = coerce_constant(pred.value, meta)
    if meta.is_discrete():
        domain = meta.domain
        if pred.op == "=":
            allowed = [v for v in domain if v == value]
        elif pred.op == "!=":
            allowed = [v for v in domain if v != value]
        else:
            if not tbl.domain_is_numeric(domain):
                raise UnsupportedFeature(
                    f"ordering comparison on unordered domain of column {pred.column!r}"
                )
            if pred.op == "<":
                allowed = [v for v in domain if v < value]
            elif pred.op == "<=":
                allowed = [v for v in domain if v <= value]
            elif pred.op == ">":
                allowed = [v for v in domain if v > value]
            else:
                allowed = [v for v in domain if v >= value]
        return Condition(pred.column, DiscreteSet.of(allowed))

    lo, hi = meta.lo, meta.hi
    if pred.op == "=":
        return Condition(
            pred.column,
            IntervalUnion.single(value, value).clip(lo, hi),
            degenerate=True,
        )
    if pred.op == "!=":
        # a removed point carries no mass; the density-model answer is the full range
        return Condition(pred.column, IntervalUnion.single(lo, hi))
    if pred.op == "<":
        iu = IntervalUnion.single(float("-inf"), value, hi_open=True)
    elif pred.op == "<=":
        iu = IntervalUnion.single(float("-inf"), value)
    elif pred.op == ">":
        iu = IntervalUnion.single(value, float("inf"), lo_open=True)
    else:
        iu = IntervalUnion.single(value, float("inf"))
    return Condition(pred.column, iu.clip(lo, hi))


def _conjoin_signed(a: list, b: list) -> list:
    out = []
    for sa, ca in a:
        for sb, cb in b:
            out.append((sa * sb, ca.conjoin(cb)))
    return out


def _compile_node(node, metas) -> list:
    if isinstance(node, Pred):
        cond = compile_predicate(node, metas[node.column])
        return [(1, ConditionSet.of([cond]))]
    if isinstance(node, And):
        terms = _conjoin_signed(
            _compile_node(node.left, metas), _compile_node(node.right, metas)
        )
        if len(terms) > EXPANSION_CAP:
            raise CompileTooLarge(f"{len(terms)} signed terms exceed cap {EXPANSION_CAP}")
        return terms
    if isinstance(node, Or):
        left = _compile_node(node.left, metas)
        right = _compile_node(node.right, metas)
        merged = _try_merge_same_column(left, right)
        if merged is not None:
            return merged
        both = [(-s, cs) for s, cs in _conjoin_signed(left, right)]
        terms = left + right + both
        if len(terms) > EXPANSION_CAP:
            raise CompileTooLarge(f"{len(terms)} signed terms exceed cap {EXPANSION_CAP}")
        return terms
    raise TypeError(f"not a boolean node: {node!r}")


def _try_merge_same_column(left: list, right: list):
    """OR of two positive single-column terms on one column is a plain union."""
    if len(left) != 1 or len(right) != 1:
        return None
    (sl, cl), (sr, cr) = left[0], right[0]
    if sl != 1 or sr != 1:
        return None
    if len(cl.conditions) != 1 or len(cr.conditions) != 1:
        return None
    a, b = cl.conditions[0], cr.conditions[0]
    if a.column != b.column or type(a.constraint) is not type(b.constraint):
        return None
    cond = Condition(
        a.column, a.constraint.union(b.constraint), a.degenerate and b.degenerate
    )
    return [(1, ConditionSet.of([cond]))]


def compile_filter(filt, schema: list[tbl.ColumnMeta]) -> SignedConditionSets:
    """The whole WHERE tree; None compiles to a single unconstrained term."""
    metas = {m.name: m for m in schema}
    if filt is None:
        return SignedConditionSets(((1, ConditionSet.empty()),))
    return SignedConditionSets(tuple(_compile_node(filt, metas)))


def choose_strategy(q: QuerySpec, schema: list[tbl.ColumnMeta]) -> str:
    """PROBABILITY when direct inference can serve the query, else SAMPLE.

    Direct inference needs a COUNT(*) or +/- linear target, a filter that
    compiles within the expansion cap, no zero-mass point constraints on
    continuous columns, and (for AVG) a single conjunctive term.
    """
    validate_query(q, schema)
    if q.target is not None:
        try:
            linear_terms(q.target)
        except NonLinear:
            return SAMPLE
    try:
        scs = compile_filter(q.filter, schema)
    except CompileTooLarge:
        return SAMPLE
    if scs.has_degenerate():
        return SAMPLE
    if q.aggregate == AVG and not scs.single_positive():
        return SAMPLE
    return PROBABILITY
