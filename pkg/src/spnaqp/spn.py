"""Sum-product network model: node types, validity, marginalization, storage.

The network is a tree: sum nodes mix same-scope children, product nodes join
disjoint-scope children, and leaves hold one column's distribution. Discrete
leaves are smoothed frequency tables; continuous leaves are piecewise-linear
densities fitted at histogram break points, carrying a materialized sorted
sample of the rows that reached the leaf.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .conditions import DiscreteSet, IntervalUnion
from .table import CONTINUOUS, DISCRETE, ColumnMeta, domain_is_numeric

FORMAT_VERSION = 1


class InvalidModel(Exception):
    """Structural violations found while building or loading a model."""


@dataclass(eq=False)
class LeafDiscrete:
    column: str
    values: tuple  # domain order
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self._mass_of = dict(zip(self.values, self.masses))

    def mass(self, value) -> float:
        return float(self._mass_of.get(value, 0.0))

    def probability(self, dset: DiscreteSet) -> float:
        return float(sum(self._mass_of.get(v, 0.0) for v in dset.values))

    def restricted(self, dset: DiscreteSet | None) -> tuple[list, np.ndarray]:
        """Admissible values and their unnormalized masses."""
        if dset is None:
            return list(self.values), self.masses
        vals = [v for v in self.values if dset.contains(v)]
        return vals, np.array([self._mass_of[v] for v in vals], dtype=np.float64)

    def mean(self, dset: DiscreteSet | None) -> tuple[float, float]:
        """(sum of value*mass, total mass) over the admissible values."""
        if not domain_is_numeric(self.values):
            raise InvalidModel(f"column {self.column!r} has a non-numeric domain")
        vals, masses = self.restricted(dset)
        total = float(masses.sum())
        weighted = float(sum(v * m for v, m in zip(vals, masses)))
        return weighted, total

    def support(self) -> list:
        return [v for v, m in zip(self.values, self.masses) if m > 0.0]


@dataclass(eq=False)
class LeafContinuous:
    column: str
    breaks: np.ndarray  # strictly increasing, length >= 2
    densities: np.ndarray  # same length, non-negative, trapezoid integral 1
    sample: np.ndarray  # sorted materialized values within [breaks[0], breaks[-1]]

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=np.float64)
        self.densities = np.asarray(self.densities, dtype=np.float64)
        self.sample = np.asarray(self.sample, dtype=np.float64)
        widths = np.diff(self.breaks)
        seg = 0.5 * (self.densities[:-1] + self.densities[1:]) * widths
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])

    def _cdf(self, x: float) -> float:
        b = self.breaks
        if x <= b[0]:
            return 0.0
        if x >= b[-1]:
            return float(self._cum[-1])
        i = int(np.searchsorted(b, x, side="right")) - 1
        w = b[i + 1] - b[i]
        t = (x - b[i]) / w
        d0, d1 = self.densities[i], self.densities[i + 1]
        return float(self._cum[i] + w * (d0 * t + 0.5 * (d1 - d0) * t * t))

    def _x_moment(self, a: float, b_hi: float) -> float:
        """Integral of x * density(x) over [a, b_hi] intersected with support."""
        b = self.breaks
        a = max(a, float(b[0]))
        b_hi = min(b_hi, float(b[-1]))
        if a >= b_hi:
            return 0.0
        total = 0.0
        i0 = max(int(np.searchsorted(b, a, side="right")) - 1, 0)
        for i in range(i0, len(b) - 1):
            lo, hi = float(b[i]), float(b[i + 1])
            if lo >= b_hi:
                break
            s, e = max(lo, a), min(hi, b_hi)
            if s >= e:
                continue
            w = hi - lo
            d0, d1 = float(self.densities[i]), float(self.densities[i + 1])
            dd = d1 - d0
            t0, t1 = (s - lo) / w, (e - lo) / w

            def F(t):
                return w * (
                    lo * (d0 * t + 0.5 * dd * t * t)
                    + w * (0.5 * d0 * t * t + dd * t * t * t / 3.0)
                )

            total += F(t1) - F(t0)
        return total

    def probability(self, iu: IntervalUnion) -> float:
        p = 0.0
        for piece in iu.intervals:
            p += self._cdf(piece.hi) - self._cdf(piece.lo)
        return float(min(max(p, 0.0), 1.0))

    def sample_slices(self, iu: IntervalUnion) -> list[tuple[int, int]]:
        """Index ranges of the sorted sample falling inside each interval."""
        out = []
        for piece in iu.intervals:
            lo_side = "right" if piece.lo_open else "left"
            hi_side = "left" if piece.hi_open else "right"
            a = int(np.searchsorted(self.sample, piece.lo, side=lo_side))
            b = int(np.searchsorted(self.sample, piece.hi, side=hi_side))
            if b > a:
                out.append((a, b))
        return out

    def restricted_count(self, iu: IntervalUnion) -> int:
        return sum(b - a for a, b in self.sample_slices(iu))

    def mean(self, iu: IntervalUnion | None) -> tuple[float, float]:
        """(conditional mean * mass, mass) under the interval union.

        The materialized sample is the primary estimate; an empty filtered
        sample with positive density mass falls back to the analytic mean of
        the restricted piecewise-linear density.
        """
        if iu is None:
            return float(self.sample.mean()), 1.0
        mass = self.probability(iu)
        if mass < 1e-12:
            return 0.0, 0.0
        slices = self.sample_slices(iu)
        n = sum(b - a for a, b in slices)
        if n > 0:
            s = sum(float(self.sample[a:b].sum()) for a, b in slices)
            return (s / n) * mass, mass
        xm = sum(self._x_moment(p.lo, p.hi) for p in iu.intervals)
        return (xm / mass) * mass, mass

    def support_range(self) -> tuple[float, float]:
        return float(self.breaks[0]), float(self.breaks[-1])


@dataclass(eq=False)
class SumNode:
    children: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)


@dataclass(eq=False)
class ProductNode:
    children: list


LEAF_KINDS = (LeafDiscrete, LeafContinuous)


@dataclass(eq=False)
class Spn:
    root: object
    columns: list[ColumnMeta]
    row_count: int
    metadata: dict = field(default_factory=dict)

    def meta_for(self, name: str) -> ColumnMeta:
        for m in self.columns:
            if m.name == name:
                return m
        raise KeyError(f"column {name!r} not modeled")

    def column_names(self) -> list[str]:
        return [m.name for m in self.columns]


def scope(node) -> frozenset:
    if isinstance(node, LEAF_KINDS):
        return frozenset((node.column,))
    out: set = set()
    for c in node.children:
        out |= scope(c)
    return frozenset(out)


def iter_nodes(node):
    yield node
    if not isinstance(node, LEAF_KINDS):
        for c in node.children:
            yield from iter_nodes(c)


def node_count(spn: Spn) -> int:
    return sum(1 for _ in iter_nodes(spn.root))


def validate(spn: Spn) -> list[str]:
    """Structural violations; an empty list means the model is sound."""
    problems: list[str] = []
    modeled = set(spn.column_names())
    seen: set[int] = set()

    def walk(node, path: str):
        if id(node) in seen:
            problems.append(f"{path}: node is shared; the graph must be a tree")
            return frozenset()
        seen.add(id(node))
        if isinstance(node, LeafDiscrete):
            if node.column not in modeled:
                problems.append(f"{path}: leaf column {node.column!r} not in schema")
                return frozenset((node.column,))
            meta = spn.meta_for(node.column)
            if not meta.is_discrete():
                problems.append(f"{path}: discrete leaf on continuous column {node.column!r}")
            elif not set(node.values) <= set(meta.domain):
                problems.append(f"{path}: leaf values outside domain of {node.column!r}")
            if np.any(node.masses < 0):
                problems.append(f"{path}: negative mass")
            if abs(float(node.masses.sum()) - 1.0) > 1e-9:
                problems.append(f"{path}: masses sum to {float(node.masses.sum())!r}, not 1")
            return frozenset((node.column,))
        if isinstance(node, LeafContinuous):
            if node.column not in modeled:
                problems.append(f"{path}: leaf column {node.column!r} not in schema")
                return frozenset((node.column,))
            if spn.meta_for(node.column).is_discrete():
                problems.append(f"{path}: continuous leaf on discrete column {node.column!r}")
            if len(node.breaks) < 2 or np.any(np.diff(node.breaks) <= 0):
                problems.append(f"{path}: breaks must be strictly increasing, length >= 2")
            if np.any(node.densities < 0):
                problems.append(f"{path}: negative density")
            total = float(node._cum[-1])
            if abs(total - 1.0) > 1e-6:
                problems.append(f"{path}: density integrates to {total!r}, not 1")
            if node.sample.size == 0:
                problems.append(f"{path}: materialized sample is empty")
            elif node.sample[0] < node.breaks[0] - 1e-9 or node.sample[-1] > node.breaks[-1] + 1e-9:
                problems.append(f"{path}: sample values outside the density support")
            if np.any(np.diff(node.sample) < 0):
                problems.append(f"{path}: materialized sample is not sorted")
            return frozenset((node.column,))
        if isinstance(node, SumNode):
            if len(node.children) < 2 or len(node.children) != len(node.weights):
                problems.append(f"{path}: sum node needs >= 2 children matching weights")
            if np.any(node.weights <= 0):
                problems.append(f"{path}: sum weights must be positive")
            if len(node.weights) and abs(float(node.weights.sum()) - 1.0) > 1e-9:
                problems.append(f"{path}: weights sum to {float(node.weights.sum())!r}, not 1")
            scopes = [walk(c, f"{path}.{i}") for i, c in enumerate(node.children)]
            if len({s for s in scopes}) > 1:
                problems.append(f"{path}: sum children scopes differ (incomplete)")
            return scopes[0] if scopes else frozenset()
        if isinstance(node, ProductNode):
            if len(node.children) < 2:
                problems.append(f"{path}: product node needs >= 2 children")
            union: set = set()
            for i, c in enumerate(node.children):
                s = walk(c, f"{path}.{i}")
                if union & s:
                    problems.append(f"{path}: product children scopes overlap (not decomposable)")
                union |= s
            return frozenset(union)
        problems.append(f"{path}: unknown node type {type(node).__name__}")
        return frozenset()

    root_scope = walk(spn.root, "root")
    if not problems and root_scope != modeled:
        problems.append(
            f"root scope {sorted(root_scope)} does not cover schema {sorted(modeled)}"
        )
    return problems


def marginalize(spn: Spn, keep) -> Spn:
    """Structurally drop all leaves outside `keep`; answers over kept columns
    are preserved."""
    keep = set(keep)
    if not keep:
        raise ValueError("keep set must be non-empty")
    unknown = keep - set(spn.column_names())
    if unknown:
        raise KeyError(f"columns not modeled: {sorted(unknown)}")

    def prune(node):
        if isinstance(node, LEAF_KINDS):
            return node if node.column in keep else None
        if isinstance(node, ProductNode):
            kids = [prune(c) for c in node.children]
            kids = [k for k in kids if k is not None]
            if not kids:
                return None
            if len(kids) == 1:
                return kids[0]
            return ProductNode(kids)
        kids = [prune(c) for c in node.children]
        if all(k is None for k in kids):
            return None
        return SumNode(kids, np.array(node.weights, dtype=np.float64))

    root = prune(spn.root)
    columns = [m for m in spn.columns if m.name in keep]
    return Spn(root, columns, spn.row_count, dict(spn.metadata))


# ------------------------------------------------------------------- storage

def _column_doc(m: ColumnMeta) -> dict:
    if m.is_discrete():
        return {"name": m.name, "kind": m.kind, "domain": list(m.domain)}
    return {"name": m.name, "kind": m.kind, "lo": m.lo, "hi": m.hi}


def _node_doc(node) -> dict:
    if isinstance(node, LeafDiscrete):
        return {
            "kind": "leaf_discrete",
            "column": node.column,
            "values": list(node.values),
            "masses": node.masses.tolist(),
        }
    if isinstance(node, LeafContinuous):
        return {
            "kind": "leaf_continuous",
            "column": node.column,
            "breaks": node.breaks.tolist(),
            "densities": node.densities.tolist(),
            "sample": node.sample.tolist(),
        }
    if isinstance(node, SumNode):
        return {
            "kind": "sum",
            "weights": node.weights.tolist(),
            "children": [_node_doc(c) for c in node.children],
        }
    return {"kind": "product", "children": [_node_doc(c) for c in node.children]}


def serialize(spn: Spn) -> bytes:
    doc = {
        "version": FORMAT_VERSION,
        "columns": [_column_doc(m) for m in spn.columns],
        "row_count": spn.row_count,
        "learner_params": spn.metadata.get("learner_params", {}),
        "root": _node_doc(spn.root),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _node_from_doc(doc: dict):
    kind = doc.get("kind")
    if kind == "leaf_discrete":
        return LeafDiscrete(doc["column"], tuple(doc["values"]), np.array(doc["masses"]))
    if kind == "leaf_continuous":
        return LeafContinuous(
            doc["column"],
            np.array(doc["breaks"]),
            np.array(doc["densities"]),
            np.array(doc["sample"]),
        )
    if kind == "sum":
        return SumNode([_node_from_doc(c) for c in doc["children"]], np.array(doc["weights"]))
    if kind == "product":
        return ProductNode([_node_from_doc(c) for c in doc["children"]])
    raise InvalidModel(f"unknown node kind {kind!r}")


def deserialize(payload: bytes) -> Spn:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidModel(f"unreadable model payload: {e}") from None
    if doc.get("version") != FORMAT_VERSION:
        raise InvalidModel(
            f"model format version {doc.get('version')!r} != {FORMAT_VERSION}"
        )
    try:
        columns = []
        for c in doc["columns"]:
            if c["kind"] == DISCRETE:
                columns.append(ColumnMeta(c["name"], DISCRETE, domain=tuple(c["domain"])))
            else:
                columns.append(ColumnMeta(c["name"], CONTINUOUS, lo=c["lo"], hi=c["hi"]))
        spn = Spn(
            _node_from_doc(doc["root"]),
            columns,
            int(doc["row_count"]),
            {"learner_params": doc.get("learner_params", {})},
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidModel(f"malformed model document: {e}") from None
    problems = validate(spn)
    if problems:
        raise InvalidModel("; ".join(problems))
    return spn


def save_model(spn: Spn, path: str) -> None:
    with open(path, "wb") as f:
        f.write(serialize(spn))


def load_model(path: str) -> Spn:
    with open(path, "rb") as f:
        return deserialize(f.read())
