"""Query execution against a learned model.

Two strategies: direct inference (COUNT from event mass, AVG from conditional
expectation, SUM from their product) and model-driven sampling with plain,
condition-biased, or per-group stratified draws. Sampled COUNT and SUM scale
as (retained / drawn) * row_count * P(event); with conditioned draws nothing
is rejected, which makes the ungrouped sampled COUNT coincide with the direct
answer bit for bit.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .conditions import Condition, ConditionSet, DiscreteSet
from .infer import expectation, group_values, probability
from .plan import (
    PROBABILITY,
    CompileTooLarge,
    choose_strategy,
    compile_filter,
    validate_query,
)
from .queries import (
    AVG,
    COUNT,
    SUM,
    AggregateResult,
    QuerySpec,
    eval_expr,
    eval_filter_mask,
    query_columns,
)
from .sample import (
    RANDOM,
    RELEVANCE,
    STRATIFIED,
    allocate_stratified,
    conditioned_sampler,
    plain_sampler,
)
from .spn import Spn, marginalize


class StrategyUnsupported(Exception):
    """The probability strategy cannot serve this query's shape."""


@dataclass(frozen=True)
class StopRule:
    max_samples: int = 100000
    target_avg_rel_error: float | None = None
    emit_every: int = 1000

    def __post_init__(self):
        if not (self.max_samples >= self.emit_every >= 1):
            raise ValueError("need max_samples >= emit_every >= 1")


def _query_model(spn: Spn, q: QuerySpec) -> Spn:
    cols = query_columns(q)
    return marginalize(spn, cols) if cols else spn


def _group_condition(group_cols, key) -> ConditionSet:
    return ConditionSet.of(
        [Condition(c, DiscreteSet.of([v])) for c, v in zip(group_cols, key)]
    )


def _native(value):
    return value.item() if isinstance(value, np.generic) else value


def exec_probability(spn: Spn, row_count: int, q: QuerySpec) -> AggregateResult:
    """Answer by direct inference; requires a shape choose_strategy accepts."""
    t0 = time.perf_counter()
    if choose_strategy(q, spn.columns) != PROBABILITY:
        raise StrategyUnsupported(
            "query needs sampling: non-linear target, zero-mass point filter, "
            "or a disjunction the probability strategy cannot serve"
        )
    model = _query_model(spn, q)
    scs = compile_filter(q.filter, spn.columns)

    if q.group_by:
        keys: set = set()
        for sign, cs in scs.terms:
            if sign > 0 and not cs.has_empty():
                keys.update(group_values(model, q.group_by, cs))
        ordered = sorted(keys)
    else:
        ordered = [()]

    groups = []
    for key in ordered:
        gcs = _group_condition(q.group_by, key)
        total_p = 0.0
        count_val = 0.0
        sum_val = 0.0
        avg_val = None
        for sign, cs in scs.terms:
            joint = cs.conjoin(gcs)
            if joint.has_empty():
                continue
            p = probability(model, joint)
            total_p += sign * p
            if p <= 0.0:
                continue
            # term-by-term scaling keeps sampled COUNT/SUM answers, whose
            # per-term draws are never rejected, equal to these bit for bit
            count_val += sign * (p * row_count)
            if q.aggregate in (AVG, SUM):
                e = expectation(model, q.target, joint)
                if q.aggregate == SUM:
                    sum_val += sign * (e * (p * row_count))
                else:
                    avg_val = e
        if q.aggregate == COUNT:
            if q.group_by and total_p <= 0.0:
                continue
            groups.append((key, count_val))
        elif q.aggregate == SUM:
            if total_p <= 0.0:
                continue
            groups.append((key, sum_val))
        else:
            if total_p <= 0.0 or avg_val is None:
                continue
            groups.append((key, avg_val))
    if not q.group_by and q.aggregate == COUNT and not groups:
        groups = [((), 0.0)]

    elapsed = (time.perf_counter() - t0) * 1000.0
    return AggregateResult(
        groups,
        meta={
            "strategy": "probability",
            "samples_used": 0,
            "elapsed_ms": elapsed,
            "final": True,
        },
    )


class _GroupAccumulator:
    """Running per-group retained counts and target sums."""

    def __init__(self):
        self.counts: dict = {}
        self.sums: dict = {}

    def add(self, keys, values) -> None:
        if values is None:
            for k in keys:
                self.counts[k] = self.counts.get(k, 0) + 1
        else:
            for k, v in zip(keys, values):
                self.counts[k] = self.counts.get(k, 0) + 1
                self.sums[k] = self.sums.get(k, 0.0) + float(v)


def _batch_keys(batch_cols: dict, group_by, mask=None) -> list:
    if not group_by:
        n = len(mask.nonzero()[0]) if mask is not None else len(
            next(iter(batch_cols.values()), [])
        )
        return [()] * n
    arrays = [batch_cols[c] for c in group_by]
    if mask is not None:
        arrays = [a[mask] for a in arrays]
    return [tuple(_native(a[i]) for a in arrays) for i in range(len(arrays[0]))]


def _emit(q, agg_by_term, samples_by_term, signs, probs, row_count, kind, drawn,
          t0, seed, final) -> AggregateResult:
    keys: set = set()
    for term_i, agg in enumerate(agg_by_term):
        if signs[term_i] > 0:
            keys.update(agg.counts)
    values = {}
    for key in sorted(keys):
        total = 0.0
        avg_parts = None
        for term_i, agg in enumerate(agg_by_term):
            drawn_t = samples_by_term[term_i]
            if drawn_t <= 0:
                continue
            cnt = agg.counts.get(key, 0)
            if q.aggregate == COUNT:
                total += signs[term_i] * (
                    (cnt / drawn_t) * row_count * probs[term_i]
                )
            elif q.aggregate == SUM:
                s = agg.sums.get(key, 0.0)
                total += signs[term_i] * (
                    (s / drawn_t) * row_count * probs[term_i]
                )
            else:
                if signs[term_i] > 0 and cnt > 0:
                    avg_parts = agg.sums.get(key, 0.0) / cnt
        if q.aggregate == AVG:
            if avg_parts is not None:
                values[key] = avg_parts
        else:
            values[key] = total

    groups = [(k, v) for k, v in sorted(values.items())]
    if q.group_by:
        groups = [(k, v) for k, v in groups if not (q.aggregate == COUNT and v <= 0.0)]
    elif q.aggregate == COUNT and not groups:
        groups = [((), 0.0)]
    elapsed = (time.perf_counter() - t0) * 1000.0
    return AggregateResult(
        groups,
        meta={
            "strategy": kind,
            "samples_used": int(drawn),
            "elapsed_ms": elapsed,
            "seed": seed,
            "final": bool(final),
        },
    )


def _eval_target(q, batch_cols, mask, udfs):
    if q.aggregate == COUNT:
        return None
    env = {c: (arr[mask] if mask is not None else arr) for c, arr in batch_cols.items()}
    vals = eval_expr(q.target, env, udfs)
    n = len(next(iter(env.values()), []))
    if np.ndim(vals) == 0:
        vals = np.full(n, float(vals))
    return vals


def exec_sample(spn: Spn, row_count: int, q: QuerySpec, kind: str, stop: StopRule,
                seed, stop_check=None, udfs=None):
    """Progressive sampled answers; yields one AggregateResult per batch.

    stop_check, when given, sees each emission and returns True to finish
    early (the benchmark harness uses it to stop at a target error).
    """
    validate_query(q, spn.columns)
    if kind not in (RANDOM, RELEVANCE, STRATIFIED):
        raise ValueError(f"unknown sampler kind {kind!r}")
    model = _query_model(spn, q)
    t0 = time.perf_counter()

    compiled = None
    if kind in (RELEVANCE, STRATIFIED):
        try:
            compiled = compile_filter(q.filter, spn.columns)
        except CompileTooLarge:
            compiled = None
        if compiled is not None and compiled.has_degenerate():
            compiled = None
        if compiled is not None and q.aggregate == AVG and not compiled.single_positive():
            compiled = None
        if compiled is None:
            kind = RANDOM  # per-row filtering still answers the query
    if kind == STRATIFIED and (not q.group_by or not compiled.single_positive()):
        kind = RELEVANCE
    if kind == STRATIFIED:
        yield from _run_stratified(
            model, row_count, q, compiled.terms[0][1], stop, seed, stop_check, udfs, t0
        )
        return
    if kind == RELEVANCE:
        yield from _run_relevance(
            model, row_count, q, compiled, stop, seed, stop_check, udfs, t0
        )
        return
    yield from _run_random(model, row_count, q, stop, seed, stop_check, udfs, t0)


def _run_random(model, row_count, q, stop, seed, stop_check, udfs, t0):
    rng = np.random.default_rng(seed)
    draw = plain_sampler(model)
    agg = _GroupAccumulator()
    drawn = 0
    metas = {m.name: m for m in model.columns}
    while drawn < stop.max_samples:
        n = min(stop.emit_every, stop.max_samples - drawn)
        batch = draw(n, rng)
        drawn += n
        mask = None
        if q.filter is not None:
            mask = eval_filter_mask(q.filter, batch, metas)
        keys = _batch_keys(batch, q.group_by, mask)
        agg.add(keys, _eval_target(q, batch, mask, udfs))
        result = _emit_random(q, agg, drawn, row_count, RANDOM, t0, seed,
                              drawn >= stop.max_samples)
        if stop_check is not None and not result.meta["final"] and stop_check(result):
            result.meta["final"] = True
            yield result
            return
        yield result
        if result.meta["final"]:
            return


def _emit_random(q, agg, drawn, row_count, kind, t0, seed, final) -> AggregateResult:
    scale = row_count / drawn
    groups = []
    for key in sorted(agg.counts):
        cnt = agg.counts[key]
        if q.aggregate == COUNT:
            groups.append((key, cnt * scale))
        elif q.aggregate == SUM:
            groups.append((key, agg.sums[key] * scale))
        else:
            groups.append((key, agg.sums[key] / cnt))
    if not q.group_by and q.aggregate == COUNT and not groups:
        groups = [((), 0.0)]
    elapsed = (time.perf_counter() - t0) * 1000.0
    return AggregateResult(
        groups,
        meta={
            "strategy": kind,
            "samples_used": int(drawn),
            "elapsed_ms": elapsed,
            "seed": seed,
            "final": bool(final),
        },
    )


def _run_relevance(model, row_count, q, compiled, stop, seed, stop_check, udfs, t0):
    terms = [(sign, cs) for sign, cs in compiled.terms]
    signs = [s for s, _ in terms]
    probs = []
    samplers = []
    for _, cs in terms:
        if cs.has_empty():
            probs.append(0.0)
            samplers.append(None)
            continue
        p = probability(model, cs)
        probs.append(p)
        samplers.append(conditioned_sampler(model, cs) if p > 0.0 else None)

    live = [i for i, s in enumerate(samplers) if s is not None]
    if not live:
        yield _emit(q, [_GroupAccumulator() for _ in terms], [0] * len(terms), signs,
                    probs, row_count, RELEVANCE, 0, t0, seed, True)
        return

    ss = np.random.SeedSequence(seed)
    streams = {i: np.random.default_rng(child) for i, child in zip(live, ss.spawn(len(live)))}
    aggs = [_GroupAccumulator() for _ in terms]
    samples_by_term = [0] * len(terms)
    drawn = 0
    while drawn < stop.max_samples:
        room = stop.max_samples - drawn
        batch_total = min(stop.emit_every, room)
        share, extra = divmod(batch_total, len(live))
        for rank, i in enumerate(live):
            n = share + (1 if rank < extra else 0)
            if n <= 0:
                continue
            batch = samplers[i](n, streams[i])
            samples_by_term[i] += n
            drawn += n
            keys = _batch_keys(batch, q.group_by)
            aggs[i].add(keys, _eval_target(q, batch, None, udfs))
        result = _emit(q, aggs, samples_by_term, signs, probs, row_count, RELEVANCE,
                       drawn, t0, seed, drawn >= stop.max_samples)
        if stop_check is not None and not result.meta["final"] and stop_check(result):
            result.meta["final"] = True
            yield result
            return
        yield result
        if result.meta["final"]:
            return


def _run_stratified(model, row_count, q, event_cs, stop, seed, stop_check, udfs, t0):
    groups = [] if event_cs.has_empty() else group_values(model, q.group_by, event_cs)
    group_cs = {g: event_cs.conjoin(_group_condition(q.group_by, g)) for g in groups}
    alloc = allocate_stratified(
        model, q.group_by, groups, event_cs, stop.max_samples, group_conditions=group_cs
    )
    live = sorted(alloc.per_group)
    if not live:
        elapsed = (time.perf_counter() - t0) * 1000.0
        yield AggregateResult(
            [],
            meta={"strategy": STRATIFIED, "samples_used": 0, "elapsed_ms": elapsed,
                  "seed": seed, "final": True},
        )
        return

    probs = {g: probability(model, group_cs[g]) for g in live}
    samplers = {g: conditioned_sampler(model, group_cs[g]) for g in live}
    ss = np.random.SeedSequence(seed)
    streams = dict(zip(live, (np.random.default_rng(c) for c in ss.spawn(len(live)))))

    total_alloc = alloc.total()
    rounds = max(1, math.ceil(total_alloc / stop.emit_every))
    shares = {}
    for g in live:
        base, rem = divmod(alloc.per_group[g], rounds)
        shares[g] = [base + (1 if r < rem else 0) for r in range(rounds)]

    agg = {g: _GroupAccumulator() for g in live}
    drawn_by_group = {g: 0 for g in live}
    drawn = 0
    for r in range(rounds):
        for g in live:
            n = shares[g][r]
            if n <= 0:
                continue
            batch = samplers[g](n, streams[g])
            drawn_by_group[g] += n
            drawn += n
            agg[g].add([g] * n, _eval_target(q, batch, None, udfs))
        groups_out = []
        for g in live:
            m_g = drawn_by_group[g]
            if m_g <= 0:
                continue
            cnt = agg[g].counts.get(g, 0)
            if q.aggregate == COUNT:
                value = (cnt / m_g) * row_count * probs[g]
            elif q.aggregate == SUM:
                value = (agg[g].sums.get(g, 0.0) / m_g) * row_count * probs[g]
            else:
                value = agg[g].sums.get(g, 0.0) / cnt if cnt else None
            if value is not None:
                groups_out.append((g, value))
        elapsed = (time.perf_counter() - t0) * 1000.0
        result = AggregateResult(
            sorted(groups_out, key=lambda kv: kv[0]),
            meta={"strategy": STRATIFIED, "samples_used": int(drawn),
                  "elapsed_ms": elapsed, "seed": seed, "final": r == rounds - 1},
        )
        if stop_check is not None and not result.meta["final"] and stop_check(result):
            result.meta["final"] = True
            yield result
            return
        yield result
        if result.meta["final"]:
            return


def resolve_strategy(q: QuerySpec, schema, requested: str = "auto") -> str:
    """Map a user-requested strategy onto what the engine will actually run."""
    auto = choose_strategy(q, schema)
    if requested == "auto":
        return "probability" if auto == PROBABILITY else RELEVANCE
    if requested == "probability":
        if auto != PROBABILITY:
            raise StrategyUnsupported(
                "the probability strategy cannot serve this query"
            )
        return "probability"
    if requested in (RANDOM, RELEVANCE, STRATIFIED):
        return requested
    raise ValueError(f"unknown strategy {requested!r}")
