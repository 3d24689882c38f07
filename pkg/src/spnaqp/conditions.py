"""Per-column constraint algebra: discrete value sets and interval unions.

A Condition restricts one column; a ConditionSet is a conjunction of at most
one Condition per column. These are the compiled form of WHERE / GROUP BY
clauses and the evaluation currency of the inference and sampling layers.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Interval:
    """A single real interval with independently open/closed endpoints."""

    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def is_empty(self) -> bool:
        if self.lo > self.hi:
            return True
        return self.lo == self.hi and (self.lo_open or self.hi_open)

    def contains(self, x: float) -> bool:
        if x < self.lo or x > self.hi:
            return False
        if x == self.lo and self.lo_open:
            return False
        if x == self.hi and self.hi_open:
            return False
        return True

    def intersect(self, other: "Interval") -> "Interval":
        if self.lo > other.lo or (self.lo == other.lo and self.lo_open):
            lo, lo_open = self.lo, self.lo_open
        else:
            lo, lo_open = other.lo, other.lo_open
        if self.hi < other.hi or (self.hi == other.hi and self.hi_open):
            hi, hi_open = self.hi, self.hi_open
        else:
            hi, hi_open = other.hi, other.hi_open
        return Interval(lo, hi, lo_open, hi_open)


def _mergeable(a: Interval, b: Interval) -> bool:
    # assumes a.lo <= b.lo after sorting
    if b.lo < a.hi:
        return True
    if b.lo == a.hi:
        return not (a.hi_open and b.lo_open)
    return False


@dataclass(frozen=True)
class IntervalUnion:
    """Disjoint, sorted, merged intervals. Construct via of_intervals."""

    intervals: tuple[Interval, ...] = ()

    @staticmethod
    def of_intervals(items) -> "IntervalUnion":
        live = [iv for iv in items if not iv.is_empty()]
        live.sort(key=lambda iv: (iv.lo, iv.lo_open))
        merged: list[Interval] = []
        for iv in live:
            if merged and _mergeable(merged[-1], iv):
                last = merged[-1]
                if iv.hi > last.hi or (iv.hi == last.hi and not iv.hi_open):
                    merged[-1] = Interval(last.lo, iv.hi, last.lo_open, iv.hi_open)
            else:
                merged.append(iv)
        return IntervalUnion(tuple(merged))

    @staticmethod
    def single(lo, hi, lo_open=False, hi_open=False) -> "IntervalUnion":
        return IntervalUnion.of_intervals([Interval(lo, hi, lo_open, hi_open)])

    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, x: float) -> bool:
        return any(iv.contains(x) for iv in self.intervals)

    def intersect(self, other: "IntervalUnion") -> "IntervalUnion":
        pieces = []
        for a in self.intervals:
            for b in other.intervals:
                pieces.append(a.intersect(b))
        return IntervalUnion.of_intervals(pieces)

    def union(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion.of_intervals(list(self.intervals) + list(other.intervals))

    def clip(self, lo: float, hi: float) -> "IntervalUnion":
        return self.intersect(IntervalUnion.single(lo, hi))


@dataclass(frozen=True)
class DiscreteSet:
    """An unordered set of admissible discrete values."""

    values: frozenset = frozenset()

    @staticmethod
    def of(items) -> "DiscreteSet":
        return DiscreteSet(frozenset(items))

    def is_empty(self) -> bool:
        return not self.values

    def contains(self, x) -> bool:
        return x in self.values

    def intersect(self, other: "DiscreteSet") -> "DiscreteSet":
        return DiscreteSet(self.values & other.values)

    def union(self, other: "DiscreteSet") -> "DiscreteSet":
        return DiscreteSet(self.values | other.values)

    def sorted_values(self) -> list:
        return sorted(self.values)


@dataclass(frozen=True)
class Condition:
    """One column's constraint.

    degenerate marks a zero-mass constraint under a density model (an equality
    predicate on a continuous column); the planner uses it to route the query
    away from the probability strategy.
    """

    column: str
    constraint: object  # DiscreteSet | IntervalUnion
    degenerate: bool = False

    def is_empty(self) -> bool:
        return self.constraint.is_empty()

    def intersect(self, other: "Condition") -> "Condition":
        if self.column != other.column:
            raise ValueError("cannot intersect conditions on different columns")
        a, b = self.constraint, other.constraint
        if type(a) is not type(b):
            raise ValueError(
                f"mixed constraint kinds on column {self.column!r}: "
                f"{type(a).__name__} vs {type(b).__name__}"
            )
        return Condition(
            self.column, a.intersect(b), self.degenerate or other.degenerate
        )


@dataclass(frozen=True)
class ConditionSet:
    """Conjunction of per-column conditions; an absent column is unconstrained."""

    conditions: tuple[Condition, ...] = ()

    @staticmethod
    def of(conds) -> "ConditionSet":
        by_col: dict[str, Condition] = {}
        for c in conds:
            by_col[c.column] = by_col[c.column].intersect(c) if c.column in by_col else c
        return ConditionSet(tuple(by_col[k] for k in sorted(by_col)))

    @staticmethod
    def empty() -> "ConditionSet":
        return ConditionSet(())

    def get(self, column: str) -> Condition | None:
        for c in self.conditions:
            if c.column == column:
                return c
        return None

    def columns(self) -> list[str]:
        return [c.column for c in self.conditions]

    def conjoin(self, other: "ConditionSet") -> "ConditionSet":
        return ConditionSet.of(list(self.conditions) + list(other.conditions))

    def with_condition(self, cond: Condition) -> "ConditionSet":
        return self.conjoin(ConditionSet((cond,)))

    def has_empty(self) -> bool:
        return any(c.is_empty() for c in self.conditions)

    def has_degenerate(self) -> bool:
        return any(c.degenerate for c in self.conditions)

    def describe(self) -> dict:
        out = {}
        for c in self.conditions:
            if isinstance(c.constraint, DiscreteSet):
                out[c.column] = {"values": c.constraint.sorted_values()}
            else:
                out[c.column] = {
                    "intervals": [
                        [iv.lo, iv.hi, iv.lo_open, iv.hi_open]
                        for iv in c.constraint.intervals
                    ]
                }
        return out
