"""Benchmark harness: synthetic data, quality metrics, comparative runs.

The synthetic table has a discrete filter column (4 uniform values), a
discrete grouping column A whose conditional distribution ranges from
uniform to heavily skewed depending on filter, and a continuous column B
normally distributed around a mean that rises with A.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .engine import StopRule, exec_probability, exec_sample
from .exact import exact_query, online_sample_query
from .queries import AggregateResult, QuerySpec, parse
from .spn import Spn
from .table import CONTINUOUS, DISCRETE, ColumnMeta, Table

_UNIFORM = (0.2, 0.2, 0.2, 0.2, 0.2)
_SKEW_MILD = (0.70, 0.20, 0.06, 0.03, 0.01)
_SKEW_STRONG = (0.90, 0.06, 0.03, 0.009, 0.001)
_SKEW_EXTREME = (0.99, 0.006, 0.003, 0.0009, 0.0001)


@dataclass(frozen=True)
class SyntheticParams:
    n: int = 200000
    seed: int = 0
    filter_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    a_given_filter: tuple = (_UNIFORM, _SKEW_MILD, _SKEW_STRONG, _SKEW_EXTREME)
    b_given_a: tuple = ((100.0, 20.0), (110.0, 20.0), (120.0, 20.0),
                        (130.0, 20.0), (140.0, 20.0))

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if abs(sum(self.filter_probs) - 1.0) > 1e-9:
            raise ValueError("filter_probs must sum to 1")
        if len(self.a_given_filter) != len(self.filter_probs):
            raise ValueError("need one A distribution per filter value")
        for row in self.a_given_filter:
            if len(row) != len(self.b_given_a):
                raise ValueError("each A distribution needs one entry per A value")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError("A distributions must sum to 1")
        for _, sd in self.b_given_a:
            if sd <= 0:
                raise ValueError("stddevs must be > 0")


def gen_synthetic(p: SyntheticParams) -> Table:
    """Deterministic draw of (filter, A, B) rows for fixed params."""
    rng = np.random.default_rng(p.seed)
    n_filter = len(p.filter_probs)
    n_a = len(p.b_given_a)
    filt = rng.choice(n_filter, size=p.n, p=np.asarray(p.filter_probs))
    a = np.zeros(p.n, dtype=np.int64)
    for fi in range(n_filter):
        idx = np.nonzero(filt == fi)[0]
        if idx.size:
            a[idx] = rng.choice(n_a, size=idx.size, p=np.asarray(p.a_given_filter[fi]))
    means = np.array([m for m, _ in p.b_given_a])
    sds = np.array([s for _, s in p.b_given_a])
    b = rng.normal(means[a], sds[a]) if p.n else np.zeros(0)
    lo = float(b.min()) if p.n else 0.0
    hi = float(b.max()) if p.n else 0.0
    schema = [
        ColumnMeta("filter", DISCRETE, tuple(range(1, n_filter + 1))),
        ColumnMeta("A", DISCRETE, tuple(range(1, n_a + 1))),
        ColumnMeta("B", CONTINUOUS, None, lo, hi),
    ]
    return Table(schema, {"filter": filt, "A": a, "B": b})


def synthetic_workload() -> list:
    """(id, sql) pairs: grouped and ungrouped COUNT/AVG over each filter value."""
    out = []
    for i in range(1, 5):
        out.append((f"S1.{i}", f"SELECT A, COUNT(*) FROM syn WHERE filter = {i} GROUP BY A"))
    for i in range(1, 5):
        out.append((f"S2.{i}", f"SELECT A, AVG(B) FROM syn WHERE filter = {i} GROUP BY A"))
    for i in range(1, 5):
        out.append((f"S3.{i}", f"SELECT COUNT(*) FROM syn WHERE filter = {i} AND A = 4"))
    for i in range(1, 5):
        out.append((f"S4.{i}", f"SELECT AVG(B) FROM syn WHERE filter = {i} AND A = 4"))
    return out


def metric_bin_missing(truth: AggregateResult, approx: AggregateResult) -> float:
    """Fraction of ground-truth groups with no approximate value; 0 = full coverage."""
    g = set(truth.group_keys())
    if not g:
        raise ValueError("ground truth has no groups")
    return len(g - set(approx.group_keys())) / len(g)


def metric_avg_rel_error(truth: AggregateResult, approx: AggregateResult) -> float:
    """Mean relative deviation over groups present in both results."""
    gv = dict(truth.groups)
    av = dict(approx.groups)
    shared = [k for k in gv if k in av]
    if not shared:
        raise ValueError("no shared groups between truth and approximation")
    errs = []
    for k in shared:
        if gv[k] == 0:
            warnings.warn(f"group {k!r} has zero ground truth; excluded from error")
            continue
        errs.append(abs(gv[k] - av[k]) / abs(gv[k]))
    if not errs:
        raise ValueError("all shared groups have zero ground truth")
    return float(np.mean(errs))


def metric_skewness(y) -> float:
    """Third standardized moment with population std; 0 when std is 0."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need at least two values")
    centered = arr - arr.mean()
    std = float(np.sqrt(np.mean(centered**2)))
    if std == 0.0:
        return 0.0
    return float(np.mean(centered**3) / std**3)


def resample_scale(table: Table, target_n: int, seed) -> Table:
    """IID resample with replacement to target_n rows."""
    if table.row_count < 1:
        raise ValueError("source table is empty")
    if target_n < 0:
        raise ValueError("target_n must be >= 0")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, table.row_count, size=target_n)
    cols = {m.name: table.columns[m.name][idx] for m in table.schema}
    return Table(list(table.schema), cols)


PROBABILITY_ENGINE = "probability"
ONLINE_DATA = "online_data"
SAMPLER_ENGINES = ("random", "relevance", "stratified")
ALL_ENGINES = (PROBABILITY_ENGINE, ONLINE_DATA) + SAMPLER_ENGINES


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)

    def cell(self, model: str, query_id: str, engine: str):
        return [r for r in self.rows
                if r["model"] == model and r["query_id"] == query_id
                and r["engine"] == engine]

    def summary_cell(self, model: str, query_id: str, engine: str):
        for r in self.summary:
            if (r["model"], r["query_id"], r["engine"]) == (model, query_id, engine):
                return r
        return None


def _safe_metrics(truth: AggregateResult, approx: AggregateResult):
    missing = metric_bin_missing(truth, approx)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            err = metric_avg_rel_error(truth, approx)
    except ValueError:
        err = math.nan
    return missing, err


def _rep_seed(base: int, *path) -> int:
    ss = np.random.SeedSequence((base,) + tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])


def _stop_check(truth, target):
    if target is None:
        return None

    def check(result: AggregateResult) -> bool:
        missing, err = _safe_metrics(truth, result)
        return missing == 0.0 and not math.isnan(err) and err <= target

    return check


def _run_cell(table, spn, q, engine, stop, seed, truth):
    """One (query, engine) execution; returns (final result, trajectory)."""
    traj = []
    if engine == PROBABILITY_ENGINE:
        res = exec_probability(spn, table.row_count, q)
        missing, err = _safe_metrics(truth, res)
        traj.append((0, err, missing))
        return res, traj
    if engine == ONLINE_DATA:
        check = _stop_check(truth, stop.target_avg_rel_error)
        last = None
        for res in online_sample_query(table, q, stop.max_samples, seed,
                                       batch=stop.emit_every):
            missing, err = _safe_metrics(truth, res)
            traj.append((res.meta["samples_used"], err, missing))
            last = res
            if check is not None and check(res):
                break
        return last, traj
    check = _stop_check(truth, stop.target_avg_rel_error)
    last = None
    for res in exec_sample(spn, table.row_count, q, engine, stop, seed,
                           stop_check=check):
        missing, err = _safe_metrics(truth, res)
        traj.append((res.meta["samples_used"], err, missing))
        last = res
    return last, traj


def run_workload(table: Table, models: dict, queries: list, engines: list,
                 stop: StopRule, repetitions: int = 10, seed: int = 0,
                 udfs=None) -> MetricsReport:
    """Run every (model, query, engine) cell with derived per-repetition seeds.

    models maps name -> Spn; queries holds (id, sql) pairs; engines draws
    from ALL_ENGINES. Ground truth comes from exact execution against table.
    """
    report = MetricsReport()
    for engine in engines:
        if engine not in ALL_ENGINES:
            raise ValueError(f"unknown engine {engine!r}")
    parsed = [(qid, parse(sql, udfs)) for qid, sql in queries]
    truths = {qid: exact_query(table, q) for qid, q in parsed}

    for m_i, (model_name, spn) in enumerate(models.items()):
        for q_i, (qid, q) in enumerate(parsed):
            truth = truths[qid]
            if not truth.groups:
                warnings.warn(f"query {qid}: empty ground truth; skipped")
                continue
            for e_i, engine in enumerate(engines):
                reps = 1 if engine == PROBABILITY_ENGINE else repetitions
                for rep in range(reps):
                    rep_seed = _rep_seed(seed, m_i, q_i, e_i, rep)
                    t0 = time.perf_counter()
                    try:
                        res, traj = _run_cell(table, spn, q, engine, stop,
                                              rep_seed, truth)
                    except Exception as exc:  # noqa: BLE001 - recorded per cell
                        report.rows.append({
                            "model": model_name, "query_id": qid,
                            "engine": engine, "repetition": rep,
                            "error": f"{type(exc).__name__}: {exc}",
                            "bin_missing": math.nan,
                            "avg_rel_error": math.nan,
                            "samples_used": 0, "elapsed_ms": 0.0,
                        })
                        continue
                    elapsed = (time.perf_counter() - t0) * 1000.0
                    missing, err = _safe_metrics(truth, res)
                    report.rows.append({
                        "model": model_name, "query_id": qid, "engine": engine,
                        "repetition": rep, "error": "",
                        "bin_missing": missing, "avg_rel_error": err,
                        "samples_used": res.meta.get("samples_used", 0),
                        "elapsed_ms": elapsed,
                    })
                    report.trajectories[(model_name, qid, engine, rep)] = traj

    for model_name in models:
        for qid, _ in parsed:
            for engine in engines:
                cell = [r for r in report.cell(model_name, qid, engine)
                        if not r["error"]]
                if not cell:
                    continue
                errs = [r["avg_rel_error"] for r in cell
                        if not math.isnan(r["avg_rel_error"])]
                report.summary.append({
                    "model": model_name, "query_id": qid, "engine": engine,
                    "repetitions": len(cell),
                    "bin_missing": float(np.mean([r["bin_missing"] for r in cell])),
                    "avg_rel_error": float(np.mean(errs)) if errs else math.nan,
                    "samples_used": float(np.mean([r["samples_used"] for r in cell])),
                    "elapsed_ms": float(np.mean([r["elapsed_ms"] for r in cell])),
                })
    return report


_ROW_FIELDS = ["model", "query_id", "engine", "repetition", "error",
               "bin_missing", "avg_rel_error", "samples_used", "elapsed_ms"]
_SUMMARY_FIELDS = ["model", "query_id", "engine", "repetitions",
                   "bin_missing", "avg_rel_error", "samples_used", "elapsed_ms"]


def write_report(report: MetricsReport, outdir: str) -> None:
    """report.csv, summary.csv, report.json, trajectories/*.csv under outdir."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "report.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=_ROW_FIELDS)
        w.writeheader()
        w.writerows(report.rows)
    with open(os.path.join(outdir, "summary.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=_SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(report.summary)
    doc = {"rows": report.rows, "summary": report.summary}
    with open(os.path.join(outdir, "report.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True, allow_nan=True)
    tdir = os.path.join(outdir, "trajectories")
    os.makedirs(tdir, exist_ok=True)
    for (model, qid, engine, rep), traj in report.trajectories.items():
        name = f"{model}_{qid}_{engine}_{rep}.csv".replace("/", "-")
        with open(os.path.join(tdir, name), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["samples", "avg_rel_error", "bin_missing"])
            w.writerows(traj)


def load_workload(path: str):
    """JSON {queries: [{id, sql}], engines, stop: {...}, repetitions} -> parts."""
    with open(path) as f:
        doc = json.load(f)
    queries = [(entry["id"], entry["sql"]) for entry in doc["queries"]]
    engines = list(doc.get("engines", list(ALL_ENGINES)))
    stop_doc = doc.get("stop", {})
    stop = StopRule(
        max_samples=int(stop_doc.get("max_samples", 100000)),
        target_avg_rel_error=stop_doc.get("target_avg_rel_error"),
        emit_every=int(stop_doc.get("emit_every", 1000)),
    )
    repetitions = int(doc.get("repetitions", 10))
    return queries, engines, stop, repetitions
