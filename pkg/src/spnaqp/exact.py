"""Ground-truth execution over raw rows, plus classical online sampling.

exact_query is the reference every estimator is judged against; it scans all
rows. online_sample_query is the traditional baseline: draw rows uniformly
without replacement, discard non-matching ones, and scale counts by the
sampled fraction, emitting a progressive result per batch.
"""
from __future__ import annotations

import time

import numpy as np

from .plan import validate_query
from .queries import AVG, COUNT, SUM, AggregateResult, QuerySpec, eval_expr, eval_filter_mask
from .table import Table

ONLINE_BATCH = 1000


def _env_for(table: Table, cols) -> dict:
    return {c: table.values(c) for c in cols}


def _group_codes(table: Table, group_by) -> tuple[np.ndarray, list]:
    """Rows as flat group indices plus the decoder from index to value tuple."""
    dims = [len(table.meta(c).domain) for c in group_by]
    code_arrays = [table.columns[c] for c in group_by]
    flat = np.ravel_multi_index(code_arrays, dims) if group_by else np.zeros(
        table.row_count, dtype=np.int64
    )
    return flat, dims


def _decode_group(flat_index: int, dims, table: Table, group_by) -> tuple:
    codes = np.unravel_index(flat_index, dims) if group_by else ()
    return tuple(table.meta(c).domain[int(k)] for c, k in zip(group_by, codes))


def _aggregate_rows(table: Table, q: QuerySpec, row_idx: np.ndarray, scale: float) -> list:
    """Grouped aggregate over the given rows; COUNT/SUM scaled, AVG not."""
    flat, dims = _group_codes(table, q.group_by)
    sel = flat[row_idx]
    size = int(np.prod(dims)) if q.group_by else 1
    counts = np.bincount(sel, minlength=size)
    if q.aggregate == COUNT:
        sums = None
    else:
        env = {c: table.values(c)[row_idx] for c in sorted(qcols_target(q))}
        vals = np.asarray(eval_expr(q.target, env), dtype=np.float64)
        if vals.ndim == 0:
            vals = np.full(len(row_idx), float(vals))
        sums = np.bincount(sel, weights=vals, minlength=size)

    groups = []
    for flat_index in np.nonzero(counts)[0]:
        key = _decode_group(int(flat_index), dims, table, q.group_by)
        n = counts[flat_index]
        if q.aggregate == COUNT:
            groups.append((key, float(n) * scale))
        elif q.aggregate == SUM:
            groups.append((key, float(sums[flat_index]) * scale))
        else:
            groups.append((key, float(sums[flat_index]) / float(n)))
    groups.sort(key=lambda gv: gv[0])
    if not q.group_by and q.aggregate == COUNT and not groups:
        groups = [((), 0.0)]
    return groups


def qcols_target(q: QuerySpec) -> set:
    from .queries import expr_columns

    return expr_columns(q.target) if q.target is not None else set()


def _matching_rows(table: Table, q: QuerySpec, candidate_idx: np.ndarray) -> np.ndarray:
    if q.filter is None:
        return candidate_idx
    from .queries import filter_columns

    cols = sorted(filter_columns(q.filter))
    env = {c: table.values(c)[candidate_idx] for c in cols}
    metas = {c: table.meta(c) for c in cols}
    mask = eval_filter_mask(q.filter, env, metas)
    return candidate_idx[mask]


def exact_query(table: Table, q: QuerySpec) -> AggregateResult:
    """Exact relational semantics; zero-match groups are absent."""
    t0 = time.perf_counter()
    validate_query(q, table.schema)
    all_rows = np.arange(table.row_count, dtype=np.int64)
    kept = _matching_rows(table, q, all_rows)
    groups = _aggregate_rows(table, q, kept, scale=1.0)
    elapsed = (time.perf_counter() - t0) * 1000.0
    return AggregateResult(
        groups,
        meta={
            "strategy": "exact",
            "samples_used": table.row_count,
            "elapsed_ms": elapsed,
            "final": True,
        },
    )


def online_sample_query(table: Table, q: QuerySpec, budget: int, seed: int,
                        batch: int = ONLINE_BATCH):
    """Progressive uniform-row-sampling estimates; yields one result per batch.

    Rows are drawn without replacement via a seeded shuffle prefix; COUNT and
    SUM estimates are scaled by row_count / rows_drawn.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if batch < 1:
        raise ValueError("batch must be at least 1")
    validate_query(q, table.schema)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    take = min(budget, table.row_count)
    order = rng.permutation(table.row_count)[:take]

    retained_parts = []
    drawn = 0
    while drawn < take:
        chunk = order[drawn : drawn + batch]
        drawn += len(chunk)
        retained_parts.append(_matching_rows(table, q, chunk))
        retained = np.concatenate(retained_parts) if retained_parts else chunk[:0]
        scale = table.row_count / drawn
        groups = _aggregate_rows(table, q, retained, scale=scale)
        elapsed = (time.perf_counter() - t0) * 1000.0
        yield AggregateResult(
            groups,
            meta={
                "strategy": "online_data",
                "samples_used": int(drawn),
                "elapsed_ms": elapsed,
                "seed": seed,
                "final": drawn >= take,
            },
        )
