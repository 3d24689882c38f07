"""Columnar in-memory tables: schema, CSV ingestion, and dataset files.

Discrete columns are dictionary-encoded to dense int64 codes; the dictionary
(domain) lives in ColumnMeta. Continuous columns are float64. Cells must be
present: an empty value is an ingestion error, not a NULL.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

DISCRETE = "discrete"
CONTINUOUS = "continuous"


class DataError(Exception):
    """Malformed input data: parse failures, domain violations, bad schema."""


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str
    domain: tuple = None  # discrete only: ordered distinct values (str or int)
    lo: float = None  # continuous only: observed minimum
    hi: float = None  # continuous only: observed maximum

    def __post_init__(self):
        if not self.name:
            raise DataError("column name must be non-empty")
        if self.kind not in (DISCRETE, CONTINUOUS):
            raise DataError(f"unknown column kind {self.kind!r}")
        if self.kind == DISCRETE:
            if not self.domain:
                raise DataError(f"column {self.name!r}: discrete domain must be non-empty")
            if len(set(self.domain)) != len(self.domain):
                raise DataError(f"column {self.name!r}: duplicate domain values")
        else:
            if self.lo is None or self.hi is None or self.lo > self.hi:
                raise DataError(f"column {self.name!r}: continuous range must satisfy lo <= hi")

    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    def code_of(self, value) -> int:
        try:
            return self.domain.index(value)
        except ValueError:
            raise DataError(f"column {self.name!r}: value {value!r} not in domain") from None


class Table:
    """Immutable columnar relation. columns maps name -> codes/values array."""

    def __init__(self, schema: list[ColumnMeta], columns: dict[str, np.ndarray]):
        names = [m.name for m in schema]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in schema")
        if set(columns) != set(names):
            raise DataError("column arrays do not match schema names")
        lengths = {len(columns[n]) for n in names} or {0}
        if len(lengths) != 1:
            raise DataError("column arrays have unequal lengths")
        self.schema = list(schema)
        self.row_count = lengths.pop()
        self.columns = {}
        for m in schema:
            arr = columns[m.name]
            if m.is_discrete():
                arr = np.asarray(arr, dtype=np.int64)
                if arr.size and (arr.min() < 0 or arr.max() >= len(m.domain)):
                    raise DataError(f"column {m.name!r}: code outside domain range")
            else:
                arr = np.asarray(arr, dtype=np.float64)
            arr.setflags(write=False)
            self.columns[m.name] = arr
        self._by_name = {m.name: m for m in self.schema}

    def meta(self, name: str) -> ColumnMeta:
        if name not in self._by_name:
            raise DataError(f"unknown column {name!r}")
        return self._by_name[name]

    def has_column(self, name: str) -> bool:
        return name in self._by_name

    def values(self, name: str) -> np.ndarray:
        """Column as original values (decoded for discrete columns)."""
        m = self.meta(name)
        arr = self.columns[name]
        if not m.is_discrete():
            return arr
        dom = domain_array(m.domain)
        return dom[arr]

    @staticmethod
    def from_values(schema: list[ColumnMeta], values: dict[str, list]) -> "Table":
        cols = {}
        for m in schema:
            if m.is_discrete():
                lookup = {v: i for i, v in enumerate(m.domain)}
                try:
                    cols[m.name] = np.array([lookup[v] for v in values[m.name]], dtype=np.int64)
                except KeyError as e:
                    raise DataError(
                        f"column {m.name!r}: value {e.args[0]!r} not in domain"
                    ) from None
            else:
                cols[m.name] = np.asarray(values[m.name], dtype=np.float64)
        return Table(schema, cols)


def domain_array(domain: tuple) -> np.ndarray:
    """Domain as an indexable array; int domains stay int64, else object."""
    if all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) for v in domain):
        return np.array(domain, dtype=np.int64)
    return np.array(list(domain), dtype=object)


def domain_is_numeric(domain: tuple) -> bool:
    return all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) for v in domain)


def parse_schema(text: str) -> list[dict]:
    """Schema file: JSON list of {name, kind, domain?}; domain may be "infer"."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"schema is not valid JSON: {e}") from None
    if not isinstance(raw, list) or not raw:
        raise DataError("schema must be a non-empty JSON list")
    out = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise DataError(f"schema entry {i}: need name and kind")
        kind = entry["kind"]
        if kind not in (DISCRETE, CONTINUOUS):
            raise DataError(f"schema entry {i}: unknown kind {kind!r}")
        out.append({"name": entry["name"], "kind": kind, "domain": entry.get("domain", "infer")})
    return out


def _coerce_discrete(raw: list[str], declared, colname: str):
    """Map CSV strings onto a declared or inferred domain; returns (domain, values)."""
    if declared == "infer":
        try:
            vals = [int(s) for s in raw]
            domain = tuple(sorted(set(vals)))
            return domain, vals
        except ValueError:
            domain = tuple(sorted(set(raw)))
            return domain, list(raw)
    domain = tuple(declared)
    as_int = domain_is_numeric(domain)
    vals = []
    for s in raw:
        v = s
        if as_int:
            try:
                v = int(s)
            except ValueError:
                raise DataError(f"column {colname!r}: value {s!r} not in domain") from None
        if v not in domain:
            raise DataError(f"column {colname!r}: value {v!r} not in domain")
        vals.append(v)
    return domain, vals


def load_csv(path, schema: list[dict]) -> Table:
    """Ingest an RFC-4180 CSV file with a header row matching the schema order.

    schema entries are dicts from parse_schema; discrete domains declared
    "infer" are collected from the data (ints when every value parses as int).
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        return load_csv_text(f.read(), schema)


def load_csv_text(text: str, schema: list[dict]) -> Table:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("missing header row") from None
    names = [e["name"] for e in schema]
    if header != names:
        raise DataError(f"header {header!r} does not match schema columns {names!r}")

    raw_cols: list[list[str]] = [[] for _ in names]
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(names):
            raise DataError(f"line {lineno}: expected {len(names)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            if cell == "":
                raise DataError(f"line {lineno}: empty value for column {names[j]!r}")
            raw_cols[j].append(cell)

    metas = []
    values = {}
    for j, entry in enumerate(schema):
        name, kind = entry["name"], entry["kind"]
        if kind == DISCRETE:
            domain, vals = _coerce_discrete(raw_cols[j], entry["domain"], name)
            metas.append(ColumnMeta(name, DISCRETE, domain=domain))
            values[name] = vals
        else:
            out = []
            for i, s in enumerate(raw_cols[j]):
                try:
                    out.append(float(s))
                except ValueError:
                    raise DataError(
                        f"line {i + 2}: column {name!r}: {s!r} is not a number"
                    ) from None
            arr = np.asarray(out, dtype=np.float64)
            lo = float(arr.min()) if arr.size else 0.0
            hi = float(arr.max()) if arr.size else 0.0
            metas.append(ColumnMeta(name, CONTINUOUS, lo=lo, hi=hi))
            values[name] = arr
    return Table.from_values(metas, values)


def save_table(table: Table, path: str) -> None:
    """Dataset file: npz with code/value arrays plus a JSON schema blob."""
    doc = []
    for m in table.schema:
        if m.is_discrete():
            doc.append({"name": m.name, "kind": m.kind, "domain": list(m.domain)})
        else:
            doc.append({"name": m.name, "kind": m.kind, "lo": m.lo, "hi": m.hi})
    arrays = {f"col_{i}": table.columns[m.name] for i, m in enumerate(table.schema)}
    np.savez_compressed(path, schema=json.dumps(doc), **arrays)


def load_table(path: str) -> Table:
    try:
        data = np.load(path, allow_pickle=False)
    except Exception as e:
        raise DataError(f"cannot read dataset file {path!r}: {e}") from None
    doc = json.loads(str(data["schema"]))
    metas = []
    cols = {}
    for i, entry in enumerate(doc):
        if entry["kind"] == DISCRETE:
            m = ColumnMeta(entry["name"], DISCRETE, domain=tuple(entry["domain"]))
        else:
            m = ColumnMeta(entry["name"], CONTINUOUS, lo=entry["lo"], hi=entry["hi"])
        metas.append(m)
        cols[m.name] = data[f"col_{i}"]
    return Table(metas, cols)
