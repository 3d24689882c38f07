"""Command-line front end: ingest, learn, query, bench, synth, serve."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import (
    SyntheticParams,
    gen_synthetic,
    load_workload,
    run_workload,
    write_report,
)
from .engine import (
    StopRule,
    StrategyUnsupported,
    exec_probability,
    exec_sample,
    resolve_strategy,
)
from .exact import exact_query
from .infer import ZeroProbability
from .learn import LearnParams, learn
from .queries import SqlError, UnsupportedFeature, parse
from .spn import InvalidModel, load_model, node_count, save_model
from .table import DataError, load_csv, load_table, parse_schema, save_table

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ENGINE = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _data_path(path: str) -> str:
    data_dir = os.environ.get("DATA_DIR")
    if data_dir and not os.path.isabs(path) and not os.path.exists(path):
        candidate = os.path.join(data_dir, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _print_result(result, fmt: str) -> None:
    if fmt == "json":
        doc = {
            "groups": [
                {"key": [_jsonable(v) for v in k], "value": value}
                for k, value in result.groups
            ],
            "meta": {k: _jsonable(v) for k, v in result.meta.items()},
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return
    if result.groups and result.groups[0][0]:
        width = max(len(_key_text(k)) for k, _ in result.groups)
        for key, value in result.groups:
            print(f"{_key_text(key):<{width}}  {value:.6g}")
    else:
        for _, value in result.groups:
            print(f"{value:.6g}")
        if not result.groups:
            print("(no matching groups)")
    meta = result.meta
    print(
        f"-- strategy={meta.get('strategy')} samples={meta.get('samples_used')} "
        f"elapsed={meta.get('elapsed_ms', 0.0):.1f}ms"
        + (f" seed={meta['seed']}" if meta.get("seed") is not None else "")
    )


def _key_text(key) -> str:
    return ",".join(str(v) for v in key)


def _jsonable(v):
    return v.item() if isinstance(v, np.generic) else v


def cmd_ingest(args) -> int:
    with open(args.schema) as f:
        schema = parse_schema(f.read())
    table = load_csv(args.csv, schema)
    save_table(table, args.out)
    print(f"ingested {table.row_count} rows, {len(table.schema)} columns -> {args.out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    table = load_table(_data_path(args.dataset))
    params = LearnParams(
        rdc_threshold=args.rdc_threshold,
        min_instance_slice=args.min_instance_slice,
        seed=args.seed,
        cluster_k=args.cluster_k,
    )
    spn = learn(table, params)
    save_model(spn, args.out)
    print(
        f"learned model with {node_count(spn)} nodes over {table.row_count} rows "
        f"(seed={args.seed}) -> {args.out}"
    )
    return EXIT_OK


def cmd_query(args) -> int:
    spn = load_model(_data_path(args.model))
    q = parse(args.sql)
    strategy = resolve_strategy(q, spn.columns, args.strategy)
    truth = None
    if args.compare_exact:
        if not args.table:
            return _fail(EXIT_USAGE, "--compare-exact needs --table")
        table = load_table(_data_path(args.table))
        truth = exact_query(table, q)

    if strategy == "probability":
        result = exec_probability(spn, spn.row_count, q)
    else:
        stop = StopRule(
            max_samples=args.max_samples,
            emit_every=min(args.emit_every, args.max_samples),
        )
        result = None
        for result in exec_sample(spn, spn.row_count, q, strategy, stop, args.seed):
            if args.progressive:
                _print_result(result, args.format)
    if not args.progressive or strategy == "probability":
        _print_result(result, args.format)
    if truth is not None:
        print("-- exact:")
        _print_result(truth, args.format)
    return EXIT_OK


def cmd_synth(args) -> int:
    params = SyntheticParams(n=args.n, seed=args.seed)
    table = gen_synthetic(params)
    save_table(table, args.out)
    print(f"generated {table.row_count} synthetic rows (seed={args.seed}) -> {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    table = load_table(_data_path(args.table))
    models = {}
    for spec_item in args.models:
        if "=" not in spec_item:
            return _fail(EXIT_USAGE, f"--models needs name=path entries, got {spec_item!r}")
        name, path = spec_item.split("=", 1)
        models[name] = load_model(_data_path(path))
    queries, engines, stop, repetitions = load_workload(args.workload)
    if args.repetitions is not None:
        repetitions = args.repetitions
    report = run_workload(
        table, models, queries, engines, stop, repetitions=repetitions, seed=args.seed
    )
    write_report(report, args.out)
    print(
        f"ran {len(queries)} queries x {len(models)} models x {len(engines)} engines "
        f"({repetitions} reps, seed={args.seed}) -> {args.out}"
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, args.max_upload_bytes)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spnaqp",
        description="approximate aggregate queries over a learned model",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a CSV into a columnar table file")
    p.add_argument("--csv", required=True, help="input CSV path")
    p.add_argument("--schema", required=True, help="JSON schema path")
    p.add_argument("--out", required=True, help="output table file (.npz)")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("learn", help="learn a model from a table file")
    p.add_argument("--dataset", required=True, help="table file from ingest/synth")
    p.add_argument("--out", required=True, help="output model file (.json)")
    p.add_argument("--rdc-threshold", type=float, default=0.3)
    p.add_argument("--min-instance-slice", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cluster-k", type=int, default=8)
    p.set_defaults(fn=cmd_learn)

    p = sub.add_parser("query", help="answer an aggregate query with a model")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--sql", required=True, help="query text")
    p.add_argument(
        "--strategy",
        default="auto",
        choices=["auto", "probability", "random", "relevance", "stratified"],
    )
    p.add_argument("--max-samples", type=int, default=10000)
    p.add_argument("--emit-every", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--progressive", action="store_true",
                   help="print every progressive estimate, not just the final one")
    p.add_argument("--compare-exact", action="store_true")
    p.add_argument("--table", help="table file for --compare-exact")
    p.add_argument("--format", default="text", choices=["text", "json"])
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("synth", help="generate the synthetic benchmark table")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("bench", help="run a benchmark workload")
    p.add_argument("--workload", required=True, help="workload JSON file")
    p.add_argument("--table", required=True, help="ground-truth table file")
    p.add_argument("--models", required=True, nargs="+", metavar="NAME=PATH")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=int, default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=int(os.environ.get("PORT", 8000)))
    p.add_argument("--data-dir", default=os.environ.get("DATA_DIR"))
    p.add_argument(
        "--max-upload-bytes",
        type=int,
        default=int(os.environ.get("MAX_UPLOAD_BYTES", 16 * 1024 * 1024)),
    )
    p.set_defaults(fn=cmd_serve)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_DATA, f"file not found: {exc.filename}")
    except (DataError, InvalidModel, SqlError, UnsupportedFeature) as exc:
        return _fail(EXIT_DATA, str(exc))
    except (StrategyUnsupported, ZeroProbability) as exc:
        return _fail(EXIT_ENGINE, str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))


if __name__ == "__main__":
    sys.exit(main())
