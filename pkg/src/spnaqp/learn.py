"""Structure learning: recursive row clustering and column-independence splits.

The recursion mirrors the classic cluster-or-factorize scheme: a slice with one
column becomes a leaf; a slice smaller than min_instance_slice is factored into
per-column leaves; otherwise the columns are partitioned by a pairwise
dependence test and, when no split exists, the rows are clustered into a
mixture. Sum-node weights are the exact row fractions of their partitions.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .spn import LeafContinuous, LeafDiscrete, ProductNode, Spn, SumNode
from .table import ColumnMeta, DataError, Table

DEPENDENCE_TEST_ROWS = 10000
KMEANS_FIT_ROWS = 10000
KMEANS_MAX_ITERS = 30
LEAF_SAMPLE_CAP = 100000
LAPLACE_PSEUDO_COUNT = 0.01
MAX_ONE_HOT_DOMAIN = 50
MAX_HISTOGRAM_BINS = 64


@dataclass(frozen=True)
class LearnParams:
    rdc_threshold: float = 0.3
    min_instance_slice: int | None = None
    seed: int = 0
    cluster_k: int = 8

    def __post_init__(self):
        if not (0.0 < self.rdc_threshold < 1.0):
            raise ValueError("rdc_threshold must be in (0, 1)")
        if self.min_instance_slice is not None and self.min_instance_slice < 1:
            raise ValueError("min_instance_slice must be >= 1")
        if self.cluster_k < 1:
            raise ValueError("cluster_k must be >= 1")

    def resolved_slice(self, row_count: int) -> int:
        if self.min_instance_slice is not None:
            return self.min_instance_slice
        return max(200, row_count // 100)


def _rng(seed: int, path: tuple, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, tag) + path))


def dependence_score(meta_a: ColumnMeta, a: np.ndarray, meta_b: ColumnMeta, b: np.ndarray) -> float:
    """Pairwise dependence in [0, 1], comparable across column-kind pairs.

    Rank correlation covers any pair with an ordered side; two discrete
    columns use mutual information mapped through sqrt(1 - exp(-2*MI)), the
    correlation a bivariate normal with that MI would have, so one threshold
    works for both families.
    """
    if meta_a.is_discrete() and meta_b.is_discrete():
        na, nb = len(meta_a.domain), len(meta_b.domain)
        joint = np.zeros((na, nb), dtype=np.float64)
        np.add.at(joint, (a, b), 1.0)
        joint /= joint.sum()
        pa = joint.sum(axis=1, keepdims=True)
        pb = joint.sum(axis=0, keepdims=True)
        nz = joint > 0
        mi = float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))
        return math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * max(mi, 0.0))))
    if np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    rho = stats.spearmanr(a, b).correlation
    if rho is None or math.isnan(rho):
        return 0.0
    return abs(float(rho))


def split_columns(table: Table, row_idx: np.ndarray, cols: list[str], threshold: float,
                  rng: np.random.Generator) -> list[list[str]]:
    """Connected components of the pairwise dependence graph over `cols`."""
    if len(row_idx) > DEPENDENCE_TEST_ROWS:
        row_idx = rng.choice(row_idx, DEPENDENCE_TEST_ROWS, replace=False)
    data = {c: table.columns[c][row_idx] for c in cols}
    parent = {c: c for c in cols}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for i, ca in enumerate(cols):
        for cb in cols[i + 1:]:
            score = dependence_score(table.meta(ca), data[ca], table.meta(cb), data[cb])
            if score > threshold:
                ra, rb = find(ca), find(cb)
                if ra != rb:
                    parent[ra] = rb
    groups: dict[str, list[str]] = {}
    for c in cols:
        groups.setdefault(find(c), []).append(c)
    comps = list(groups.values())
    order = {c: i for i, c in enumerate(cols)}
    comps.sort(key=lambda comp: order[comp[0]])
    return comps


def _feature_matrix(table: Table, row_idx: np.ndarray, cols: list[str]) -> np.ndarray:
    """One-hot discrete codes plus raw continuous values, every dim z-scored.

    Normalizing the one-hot dims too keeps rare category indicators visible
    to the row clustering; unscaled, a value carried by a sliver of rows adds
    almost nothing to squared distance and its conditional behaviour gets
    averaged into whatever cluster the bulk lands in.
    """
    feats = []
    for c in cols:
        meta = table.meta(c)
        arr = table.columns[c][row_idx]
        if meta.is_discrete() and len(meta.domain) <= MAX_ONE_HOT_DOMAIN:
            hot = np.zeros((len(row_idx), len(meta.domain)), dtype=np.float64)
            hot[np.arange(len(row_idx)), arr] = 1.0
            feats.append(hot)
        else:
            feats.append(np.asarray(arr, dtype=np.float64)[:, None])
    X = np.concatenate(feats, axis=1)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return (X - mu) / np.where(sd > 0, sd, 1.0)


def _kmeans(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means (k-means++ init, Lloyd iterations); returns labels."""
    n = len(X)
    fit_idx = np.arange(n)
    if n > KMEANS_FIT_ROWS:
        fit_idx = rng.choice(n, KMEANS_FIT_ROWS, replace=False)
    F = X[fit_idx]

    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = F[rng.integers(len(F))]
    d2 = ((F - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = centers[0]
            break
        pick = rng.choice(len(F), p=d2 / total)
        centers[j] = F[pick]
        d2 = np.minimum(d2, ((F - centers[j]) ** 2).sum(axis=1))

    def assign(points, cs):
        dists = ((points[:, None, :] - cs[None, :, :]) ** 2).sum(axis=2)
        return dists.argmin(axis=1)

    labels = assign(F, centers)
    for _ in range(KMEANS_MAX_ITERS):
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = F[mask].mean(axis=0)
        new_labels = assign(F, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return assign(X, centers)


def cluster_rows(table: Table, row_idx: np.ndarray, cols: list[str], k: int,
                 rng: np.random.Generator) -> list[np.ndarray]:
    """Partition the slice's rows into at most k non-empty clusters."""
    if len(row_idx) < k:
        return [row_idx]
    X = _feature_matrix(table, row_idx, cols)
    labels = _kmeans(X, k, rng)
    parts = [row_idx[labels == j] for j in range(k)]
    return [p for p in parts if len(p)]


def fit_leaf(table: Table, row_idx: np.ndarray, meta: ColumnMeta,
             rng: np.random.Generator):
    if len(row_idx) < 1:
        raise DataError("cannot fit a leaf on an empty slice")
    if meta.is_discrete():
        counts = np.bincount(table.columns[meta.name][row_idx], minlength=len(meta.domain))
        masses = counts + LAPLACE_PSEUDO_COUNT
        masses = masses / masses.sum()
        return LeafDiscrete(meta.name, tuple(meta.domain), masses)
    values = table.columns[meta.name][row_idx]
    return fit_continuous_leaf(meta.name, values, rng)


def fit_continuous_leaf(column: str, values: np.ndarray, rng: np.random.Generator) -> LeafContinuous:
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        width = max(1e-6, 1e-3 * abs(lo))
        breaks = np.array([lo - width / 2.0, lo + width / 2.0])
        densities = np.array([1.0 / width, 1.0 / width])
        return LeafContinuous(column, breaks, densities, np.sort(values))

    bins = min(MAX_HISTOGRAM_BINS, max(2, int(math.isqrt(n))))
    edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, bins + 1)))
    if len(edges) < 2:
        edges = np.array([lo, hi])
    counts, edges = np.histogram(values, bins=edges)
    widths = np.diff(edges)
    heights = counts / (n * widths)
    densities = np.empty(len(edges))
    densities[0] = heights[0]
    densities[-1] = heights[-1]
    densities[1:-1] = 0.5 * (heights[:-1] + heights[1:])
    integral = float(np.sum(0.5 * (densities[:-1] + densities[1:]) * widths))
    densities /= integral

    sample = values
    if n > LEAF_SAMPLE_CAP:
        sample = values[rng.choice(n, LEAF_SAMPLE_CAP, replace=False)]
    return LeafContinuous(column, edges, densities, np.sort(sample))


def _leaf_product(table: Table, row_idx: np.ndarray, cols: list[str], seed: int, path: tuple):
    leaves = [
        fit_leaf(table, row_idx, table.meta(c), _rng(seed, path + (i,), 2))
        for i, c in enumerate(cols)
    ]
    return leaves[0] if len(leaves) == 1 else ProductNode(leaves)


def learn(table: Table, params: LearnParams) -> Spn:
    """Fit a full model of the table's joint distribution."""
    if table.row_count < 1:
        raise DataError("cannot learn from an empty table")
    if not table.schema:
        raise DataError("cannot learn from a table with no columns")
    min_slice = params.resolved_slice(table.row_count)

    def build(row_idx: np.ndarray, cols: list[str], path: tuple):
        if len(cols) == 1:
            return fit_leaf(table, row_idx, table.meta(cols[0]), _rng(params.seed, path, 2))
        if len(row_idx) < min_slice:
            return _leaf_product(table, row_idx, cols, params.seed, path)
        comps = split_columns(
            table, row_idx, cols, params.rdc_threshold, _rng(params.seed, path, 0)
        )
        if len(comps) >= 2:
            return ProductNode(
                [build(row_idx, comp, path + (i,)) for i, comp in enumerate(comps)]
            )
        parts = cluster_rows(
            table, row_idx, cols, params.cluster_k, _rng(params.seed, path, 1)
        )
        if len(parts) < 2:
            return _leaf_product(table, row_idx, cols, params.seed, path)
        weights = np.array([len(p) / len(row_idx) for p in parts])
        children = [build(p, cols, path + (i,)) for i, p in enumerate(parts)]
        return SumNode(children, weights)

    all_rows = np.arange(table.row_count, dtype=np.int64)
    root = build(all_rows, [m.name for m in table.schema], ())
    return Spn(
        root,
        list(table.schema),
        table.row_count,
        {
            "learner_params": {
                "rdc_threshold": params.rdc_threshold,
                "min_instance_slice": min_slice,
                "seed": params.seed,
                "cluster_k": params.cluster_k,
            },
            "built_at": time.time(),
        },
    )


def learn_independence_baseline(table: Table) -> Spn:
    """One leaf per column under a single product: every column independent."""
    if table.row_count < 1:
        raise DataError("cannot learn from an empty table")
    all_rows = np.arange(table.row_count, dtype=np.int64)
    root = _leaf_product(table, all_rows, [m.name for m in table.schema], 0, ())
    return Spn(
        root,
        list(table.schema),
        table.row_count,
        {"learner_params": {"independence_baseline": True}, "built_at": time.time()},
    )
