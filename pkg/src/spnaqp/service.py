"""HTTP facade over datasets, models, and query execution.

Uploads carry the CSV text in the JSON body. Model learning runs on a
background thread; sampled query strategies stream newline-delimited JSON
events over a chunked response, with the final event flagged.
"""
from __future__ import annotations

import json
import os
import secrets
import threading
import time
import uuid

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .bench import metric_avg_rel_error, metric_bin_missing
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
from .spn import deserialize, node_count, serialize
from .table import DataError, Table, load_csv_text, load_table, save_table

DEFAULT_MAX_UPLOAD = 16 * 1024 * 1024


def _native(value):
    return value.item() if isinstance(value, np.generic) else value


def _groups_doc(result) -> list:
    return [
        {"key": [_native(v) for v in key], "value": float(value)}
        for key, value in result.groups
    ]


def _meta_doc(meta: dict) -> dict:
    return {k: _native(v) for k, v in meta.items()}


def _column_doc(meta) -> dict:
    doc = {"name": meta.name, "kind": meta.kind}
    if meta.is_discrete():
        doc["domain"] = [_native(v) for v in meta.domain]
    else:
        doc["lo"] = meta.lo
        doc["hi"] = meta.hi
    return doc


def _compare_doc(truth, approx) -> dict:
    exact_groups = _groups_doc(truth)
    tv = dict(truth.groups)
    errors = []
    for key, value in approx.groups:
        if key in tv and tv[key] != 0:
            errors.append({
                "key": [_native(v) for v in key],
                "rel_error": abs(tv[key] - value) / abs(tv[key]),
            })
    doc = {"exact_groups": exact_groups, "errors": errors}
    if truth.groups:
        doc["missing_fraction"] = metric_bin_missing(truth, approx)
        try:
            doc["avg_rel_error"] = metric_avg_rel_error(truth, approx)
        except ValueError:
            doc["avg_rel_error"] = None
    return doc


class _Registry:
    """Datasets and models keyed by generated ids; mutation under one lock."""

    def __init__(self, data_dir=None):
        self.lock = threading.Lock()
        self.datasets: dict = {}
        self.models: dict = {}
        self.data_dir = data_dir
        if data_dir:
            os.makedirs(os.path.join(data_dir, "datasets"), exist_ok=True)
            os.makedirs(os.path.join(data_dir, "models"), exist_ok=True)
            self._restore()

    def _restore(self) -> None:
        ddir = os.path.join(self.data_dir, "datasets")
        for fn in sorted(os.listdir(ddir)):
            if not fn.endswith(".npz"):
                continue
            did = fn[:-4]
            table = load_table(os.path.join(ddir, fn))
            name = did
            meta_path = os.path.join(ddir, did + ".json")
            if os.path.exists(meta_path):
                with open(meta_path) as f:
                    name = json.load(f).get("name", did)
            self.datasets[did] = {"name": name, "table": table}
        mdir = os.path.join(self.data_dir, "models")
        for fn in sorted(os.listdir(mdir)):
            if not fn.endswith(".spn.json"):
                continue
            mid = fn[: -len(".spn.json")]
            with open(os.path.join(mdir, fn), "rb") as f:
                spn = deserialize(f.read())
            self.models[mid] = {
                "status": "ready",
                "spn": spn,
                "dataset_id": spn.metadata.get("dataset_id"),
                "params": spn.metadata.get("learner_params", {}),
                "error": None,
            }

    def persist_dataset(self, did: str) -> None:
        if not self.data_dir:
            return
        entry = self.datasets[did]
        base = os.path.join(self.data_dir, "datasets", did)
        save_table(entry["table"], base + ".npz")
        with open(base + ".json", "w") as f:
            json.dump({"name": entry["name"]}, f)

    def persist_model(self, mid: str) -> None:
        if not self.data_dir:
            return
        entry = self.models[mid]
        path = os.path.join(self.data_dir, "models", mid + ".spn.json")
        with open(path, "wb") as f:
            f.write(serialize(entry["spn"]))


def _error(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse({"error": message, **extra}, status_code=status)


def create_app(data_dir=None, max_upload_bytes: int = DEFAULT_MAX_UPLOAD) -> FastAPI:
    app = FastAPI(title="model-backed approximate query service")
    reg = _Registry(data_dir)
    app.state.registry = reg

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/datasets", status_code=201)
    async def create_dataset(request: Request):
        body = await request.body()
        if len(body) > max_upload_bytes:
            return _error(413, "upload exceeds size limit")
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            return _error(400, "request body is not valid JSON")
        name = doc.get("name")
        csv_text = doc.get("csv")
        schema = doc.get("schema")
        if not name or not isinstance(csv_text, str) or not isinstance(schema, list):
            return _error(400, "need name, csv text, and schema list")
        with reg.lock:
            if any(e["name"] == name for e in reg.datasets.values()):
                return _error(409, f"dataset name {name!r} already exists")
        try:
            table = load_csv_text(csv_text, schema)
        except DataError as exc:
            return _error(400, str(exc))
        did = uuid.uuid4().hex[:12]
        with reg.lock:
            reg.datasets[did] = {"name": name, "table": table}
            reg.persist_dataset(did)
        return {
            "dataset_id": did,
            "name": name,
            "row_count": table.row_count,
            "columns": [_column_doc(m) for m in table.schema],
        }

    @app.get("/datasets")
    def list_datasets():
        with reg.lock:
            items = [
                {
                    "dataset_id": did,
                    "name": e["name"],
                    "row_count": e["table"].row_count,
                    "columns": [_column_doc(m) for m in e["table"].schema],
                }
                for did, e in sorted(reg.datasets.items())
            ]
        return {"datasets": items}

    def _learn_job(mid: str, table: Table, params: LearnParams, did: str):
        try:
            spn = learn(table, params)
            spn.metadata["dataset_id"] = did
            with reg.lock:
                reg.models[mid].update(status="ready", spn=spn)
                reg.persist_model(mid)
        except Exception as exc:  # noqa: BLE001 - reported via status
            with reg.lock:
                reg.models[mid].update(status="failed", error=f"{type(exc).__name__}: {exc}")

    @app.post("/models", status_code=202)
    async def create_model(request: Request):
        doc = await request.json()
        did = doc.get("dataset_id")
        raw = doc.get("params") or {}
        with reg.lock:
            entry = reg.datasets.get(did)
        if entry is None:
            return _error(404, f"unknown dataset {did!r}")
        try:
            params = LearnParams(
                rdc_threshold=raw.get("rdc_threshold", 0.3),
                min_instance_slice=raw.get("min_instance_slice"),
                seed=raw.get("seed", 0),
                cluster_k=raw.get("cluster_k", 8),
            )
        except (TypeError, ValueError) as exc:
            return _error(400, f"invalid learning params: {exc}")
        with reg.lock:
            building = any(
                m["dataset_id"] == did and m["status"] == "building"
                for m in reg.models.values()
            )
            if building:
                return _error(409, "a model is already building for this dataset")
            mid = uuid.uuid4().hex[:12]
            reg.models[mid] = {
                "status": "building",
                "spn": None,
                "dataset_id": did,
                "params": {
                    "rdc_threshold": params.rdc_threshold,
                    "min_instance_slice": params.min_instance_slice,
                    "seed": params.seed,
                    "cluster_k": params.cluster_k,
                },
                "error": None,
            }
        threading.Thread(
            target=_learn_job, args=(mid, entry["table"], params, did), daemon=True
        ).start()
        return {"model_id": mid, "status": "building"}

    def _model_doc(mid: str, entry: dict) -> dict:
        doc = {
            "model_id": mid,
            "dataset_id": entry["dataset_id"],
            "status": entry["status"],
            "params": entry["params"],
        }
        if entry["status"] == "ready":
            spn = entry["spn"]
            doc["node_count"] = node_count(spn)
            doc["row_count"] = spn.row_count
            doc["columns"] = [_column_doc(m) for m in spn.columns]
        if entry["error"]:
            doc["error"] = entry["error"]
        return doc

    @app.get("/models")
    def list_models():
        with reg.lock:
            items = [_model_doc(mid, e) for mid, e in sorted(reg.models.items())]
        return {"models": items}

    @app.get("/models/{model_id}")
    def get_model(model_id: str):
        with reg.lock:
            entry = reg.models.get(model_id)
            if entry is None:
                return _error(404, f"unknown model {model_id!r}")
            return _model_doc(model_id, entry)

    @app.post("/query")
    async def run_query(request: Request):
        doc = await request.json()
        mid = doc.get("model_id")
        sql = doc.get("sql")
        requested = doc.get("strategy", "auto")
        compare = bool(doc.get("compare_exact", False))
        with reg.lock:
            entry = reg.models.get(mid)
            if entry is None:
                return _error(404, f"unknown model {mid!r}")
            if entry["status"] == "building":
                return _error(409, "model is still building")
            if entry["status"] == "failed":
                return _error(409, f"model build failed: {entry['error']}")
            spn = entry["spn"]
            source = reg.datasets.get(entry["dataset_id"])
        if not isinstance(sql, str):
            return _error(400, "need sql text")

        try:
            q = parse(sql)
        except UnsupportedFeature as exc:
            return _error(400, str(exc), pos=exc.pos)
        except SqlError as exc:
            return _error(400, str(exc), pos=exc.pos)
        try:
            strategy = resolve_strategy(q, spn.columns, requested)
        except StrategyUnsupported as exc:
            return _error(422, str(exc))
        except UnsupportedFeature as exc:
            return _error(400, str(exc), pos=exc.pos)
        except (SqlError, ValueError) as exc:
            return _error(400, str(exc))

        truth = None
        if compare:
            if source is None:
                return _error(409, "source table unavailable for compare_exact")
            try:
                truth = exact_query(source["table"], q)
            except (DataError, ValueError) as exc:
                return _error(400, str(exc))

        if strategy == "probability":
            try:
                result = exec_probability(spn, spn.row_count, q)
            except (ValueError, DataError) as exc:
                return _error(400, str(exc))
            payload = {"groups": _groups_doc(result), "meta": _meta_doc(result.meta)}
            if truth is not None:
                payload["compare"] = _compare_doc(truth, result)
            return JSONResponse(payload)

        seed = doc.get("seed")
        if seed is None:
            seed = secrets.randbelow(2**31)
        max_samples = int(doc.get("max_samples", 10000))
        emit_every = int(doc.get("emit_every", 1000))
        try:
            stop = StopRule(max_samples=max_samples, emit_every=min(emit_every, max_samples))
        except ValueError as exc:
            return _error(400, str(exc))

        def stream():
            try:
                for result in exec_sample(spn, spn.row_count, q, strategy, stop, seed):
                    event = {
                        "groups": _groups_doc(result),
                        "meta": _meta_doc(result.meta),
                    }
                    if truth is not None:
                        event["compare"] = _compare_doc(truth, result)
                    yield json.dumps(event) + "\n"
            except (ValueError, DataError, ZeroProbability) as exc:
                yield json.dumps({"error": str(exc), "meta": {"final": True}}) + "\n"

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    return app


def main() -> None:
    import argparse

    import uvicorn

    ap = argparse.ArgumentParser(description="serve the query API")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=int(os.environ.get("PORT", 8000)))
    ap.add_argument("--data-dir", default=os.environ.get("DATA_DIR"))
    ap.add_argument(
        "--max-upload-bytes",
        type=int,
        default=int(os.environ.get("MAX_UPLOAD_BYTES", DEFAULT_MAX_UPLOAD)),
    )
    args = ap.parse_args()
    uvicorn.run(
        create_app(args.data_dir, args.max_upload_bytes),
        host=args.host,
        port=args.port,
    )


if __name__ == "__main__":
    main()
