"""Aggregate query texts: AST, parser, renderer, and expression evaluation.

The supported shape is a single-table aggregate:

    SELECT [group_cols,] AGG FROM table [WHERE boolexpr] [GROUP BY cols]

with AGG one of COUNT(*), AVG(expr), SUM(expr); predicates are
column-op-constant joined by AND/OR. Anything else is rejected with a
position-carrying error so callers can surface it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

COUNT, AVG, SUM = "COUNT", "AVG", "SUM"
AGGREGATES = (COUNT, AVG, SUM)
REJECTED_AGGREGATES = ("MIN", "MAX", "MEDIAN", "STDDEV", "VARIANCE")
KEYWORDS = {"SELECT", "FROM", "WHERE", "GROUP", "BY", "AND", "OR", "JOIN", "HAVING"}
BUILTIN_FUNCS = ("abs", "log", "min", "max")


class SqlError(Exception):
    """Syntax or shape problem in a query text; pos is a byte offset."""

    def __init__(self, message: str, pos: int = 0):
        super().__init__(f"{message} (at offset {pos})")
        self.message = message
        self.pos = pos


class UnsupportedFeature(SqlError):
    def __init__(self, feature: str, pos: int = 0):
        super().__init__(f"unsupported feature: {feature}", pos)
        self.feature = feature


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Col:
    name: str


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Bin:
    op: str  # + - * /
    left: object
    right: object


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


@dataclass(frozen=True)
class Pred:
    column: str
    op: str  # = != < <= > >=
    value: object  # str or float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class Udf:
    """A registered pure scalar expression, inlined at evaluation time."""

    name: str
    params: tuple
    body: object  # Expr over the params


@dataclass(frozen=True)
class QuerySpec:
    aggregate: str
    target: object  # Expr, or None for COUNT(*)
    filter: object  # boolean tree, or None
    group_by: tuple = ()
    table: str = "t"


@dataclass
class AggregateResult:
    """Ordered (group tuple, value) pairs plus execution metadata."""

    groups: list
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {g: v for g, v in self.groups}

    def group_keys(self) -> set:
        return {g for g, _ in self.groups}


# ------------------------------------------------------------------ tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<string>'(?:[^']|'')*')
  | (?P<op><=|>=|!=|<>|=|<|>|\+|-|\*|/|\(|\)|,)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str  # number ident string op keyword agg end
    text: str
    pos: int


def _tokenize(sql: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if not m:
            raise SqlError(f"unexpected character {sql[pos]!r}", pos)
        if m.lastgroup != "ws":
            text = m.group()
            kind = m.lastgroup
            if kind == "ident":
                up = text.upper()
                if up in KEYWORDS:
                    kind, text = "keyword", up
                elif up in AGGREGATES or up in REJECTED_AGGREGATES:
                    kind, text = "agg", up
            toks.append(_Tok(kind, text, pos))
        pos = m.end()
    toks.append(_Tok("end", "", len(sql)))
    return toks


class _Parser:
    def __init__(self, sql: str, udfs: dict | None):
        self.sql = sql
        self.toks = _tokenize(sql)
        self.i = 0
        self.udfs = udfs or {}

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise SqlError(f"expected {want}, found {t.text or 'end of input'!r}", t.pos)
        return self.next()

    def at_keyword(self, word: str) -> bool:
        t = self.peek()
        return t.kind == "keyword" and t.text == word

    # SELECT list: plain column idents plus exactly one aggregate call
    def parse_query(self) -> QuerySpec:
        self.expect("keyword", "SELECT")
        select_cols: list[str] = []
        aggregate = None
        target = None
        while True:
            t = self.peek()
            if t.kind == "agg":
                if aggregate is not None:
                    raise SqlError("only one aggregate per query", t.pos)
                aggregate, target = self.parse_aggregate()
            elif t.kind == "ident":
                select_cols.append(self.next().text)
            else:
                raise SqlError(f"expected column or aggregate, found {t.text!r}", t.pos)
            if self.peek().kind == "op" and self.peek().text == ",":
                self.next()
                continue
            break
        if aggregate is None:
            raise SqlError("query must contain an aggregate", self.peek().pos)

        self.expect("keyword", "FROM")
        table_tok = self.peek()
        if table_tok.kind == "op" and table_tok.text == "(":
            raise UnsupportedFeature("subquery", table_tok.pos)
        table = self.expect("ident").text
        if self.at_keyword("JOIN"):
            raise UnsupportedFeature("JOIN", self.peek().pos)
        if self.peek().kind == "ident":
            raise UnsupportedFeature("multiple tables", self.peek().pos)

        filt = None
        if self.at_keyword("WHERE"):
            self.next()
            filt = self.parse_or()

        group_by: tuple = ()
        if self.at_keyword("GROUP"):
            self.next()
            self.expect("keyword", "BY")
            cols = [self.expect("ident").text]
            while self.peek().kind == "op" and self.peek().text == ",":
                self.next()
                cols.append(self.expect("ident").text)
            group_by = tuple(cols)

        if self.at_keyword("HAVING"):
            raise UnsupportedFeature("HAVING", self.peek().pos)
        t = self.peek()
        if t.kind != "end":
            raise SqlError(f"unexpected trailing input {t.text!r}", t.pos)

        for c in select_cols:
            if c not in group_by:
                raise SqlError(f"selected column {c!r} is not in GROUP BY", 0)
        return QuerySpec(aggregate, target, filt, group_by, table)

    def parse_aggregate(self):
        t = self.next()
        name = t.text
        if name in REJECTED_AGGREGATES:
            raise UnsupportedFeature(f"aggregate {name}", t.pos)
        self.expect("op", "(")
        if name == COUNT:
            star = self.peek()
            if not (star.kind == "op" and star.text == "*"):
                raise UnsupportedFeature("COUNT over an expression (use COUNT(*))", star.pos)
            self.next()
            self.expect("op", ")")
            return COUNT, None
        expr = self.parse_additive()
        self.expect("op", ")")
        return name, expr

    # boolean grammar: or := and (OR and)* ; and := atom (AND atom)*
    def parse_or(self):
        node = self.parse_and()
        while self.at_keyword("OR"):
            self.next()
            node = Or(node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_bool_atom()
        while self.at_keyword("AND"):
            self.next()
            node = And(node, self.parse_bool_atom())
        return node

    def parse_bool_atom(self):
        t = self.peek()
        if t.kind == "op" and t.text == "(":
            self.next()
            node = self.parse_or()
            self.expect("op", ")")
            return node
        col_tok = self.expect("ident")
        op_tok = self.expect("op")
        op = {"<>": "!="}.get(op_tok.text, op_tok.text)
        if op not in ("=", "!=", "<", "<=", ">", ">="):
            raise SqlError(f"expected comparison operator, found {op_tok.text!r}", op_tok.pos)
        val_tok = self.next()
        if val_tok.kind == "number":
            value: object = float(val_tok.text)
        elif val_tok.kind == "string":
            value = val_tok.text[1:-1].replace("''", "'")
        elif val_tok.kind == "op" and val_tok.text == "-" and self.peek().kind == "number":
            value = -float(self.next().text)
        else:
            raise SqlError(f"expected constant, found {val_tok.text!r}", val_tok.pos)
        return Pred(col_tok.text, op, value, col_tok.pos)

    # arithmetic grammar over the aggregate target
    def parse_additive(self):
        node = self.parse_multiplicative()
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            op = self.next().text
            node = Bin(op, node, self.parse_multiplicative())
        return node

    def parse_multiplicative(self):
        node = self.parse_unary()
        while self.peek().kind == "op" and self.peek().text in ("*", "/"):
            op = self.next().text
            node = Bin(op, node, self.parse_unary())
        return node

    def parse_unary(self):
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.next()
            return Neg(self.parse_unary())
        return self.parse_atom()

    def parse_atom(self):
        t = self.next()
        if t.kind == "number":
            return Num(float(t.text))
        if t.kind == "op" and t.text == "(":
            node = self.parse_additive()
            self.expect("op", ")")
            return node
        if t.kind == "ident":
            if self.peek().kind == "op" and self.peek().text == "(":
                fname = t.text
                if fname not in BUILTIN_FUNCS and fname not in self.udfs:
                    raise SqlError(f"unknown function {fname!r}", t.pos)
                self.next()
                args = [self.parse_additive()]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.next()
                    args.append(self.parse_additive())
                self.expect("op", ")")
                if fname in self.udfs and len(args) != len(self.udfs[fname].params):
                    raise SqlError(
                        f"function {fname!r} expects {len(self.udfs[fname].params)} arguments",
                        t.pos,
                    )
                return Call(fname, tuple(args))
            return Col(t.text)
        if t.kind == "agg":
            raise UnsupportedFeature("nested aggregate", t.pos)
        raise SqlError(f"expected expression, found {t.text or 'end of input'!r}", t.pos)


def parse(sql: str, udfs: dict | None = None) -> QuerySpec:
    return _Parser(sql, udfs).parse_query()


# ------------------------------------------------------------------- renderer

def _render_value(v) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, float) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _render_expr(e, parent_prec: int = 0) -> str:
    prec = {"+": 1, "-": 1, "*": 2, "/": 2}
    if isinstance(e, Num):
        return _render_value(e.value)
    if isinstance(e, Col):
        return e.name
    if isinstance(e, Neg):
        return "-" + _render_expr(e.operand, 3)
    if isinstance(e, Call):
        return e.func + "(" + ", ".join(_render_expr(a) for a in e.args) + ")"
    if isinstance(e, Bin):
        p = prec[e.op]
        inner = f"{_render_expr(e.left, p)} {e.op} {_render_expr(e.right, p + 1)}"
        return f"({inner})" if p < parent_prec else inner
    raise TypeError(f"not an expression node: {e!r}")


def _render_bool(node, parent_is_and: bool = False) -> str:
    if isinstance(node, Pred):
        return f"{node.column} {node.op} {_render_value(node.value)}"
    if isinstance(node, And):
        return f"{_render_bool(node.left, True)} AND {_render_bool(node.right, True)}"
    if isinstance(node, Or):
        inner = f"{_render_bool(node.left)} OR {_render_bool(node.right)}"
        return f"({inner})" if parent_is_and else inner
    raise TypeError(f"not a boolean node: {node!r}")


def render(q: QuerySpec) -> str:
    agg = "COUNT(*)" if q.aggregate == COUNT else f"{q.aggregate}({_render_expr(q.target)})"
    select = ", ".join(list(q.group_by) + [agg])
    parts = [f"SELECT {select} FROM {q.table}"]
    if q.filter is not None:
        parts.append(f"WHERE {_render_bool(q.filter)}")
    if q.group_by:
        parts.append("GROUP BY " + ", ".join(q.group_by))
    return " ".join(parts)


# ------------------------------------------------------- analysis and eval

def expr_columns(e) -> set:
    if isinstance(e, Col):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return expr_columns(e.operand)
    if isinstance(e, Bin):
        return expr_columns(e.left) | expr_columns(e.right)
    if isinstance(e, Call):
        out = set()
        for a in e.args:
            out |= expr_columns(a)
        return out
    raise TypeError(f"not an expression node: {e!r}")


def filter_columns(node) -> set:
    if node is None:
        return set()
    if isinstance(node, Pred):
        return {node.column}
    return filter_columns(node.left) | filter_columns(node.right)


def query_columns(q: QuerySpec) -> set:
    cols = filter_columns(q.filter) | set(q.group_by)
    if q.target is not None:
        cols |= expr_columns(q.target)
    return cols


class NonLinear(Exception):
    """Target expression is not a +/- combination of columns and constants."""


def linear_terms(e) -> tuple[dict, float]:
    """Decompose a linear target into per-column coefficients and a constant."""
    if isinstance(e, Num):
        return {}, e.value
    if isinstance(e, Col):
        return {e.name: 1.0}, 0.0
    if isinstance(e, Neg):
        coeffs, const = linear_terms(e.operand)
        return {c: -v for c, v in coeffs.items()}, -const
    if isinstance(e, Bin) and e.op in ("+", "-"):
        lc, lk = linear_terms(e.left)
        rc, rk = linear_terms(e.right)
        sign = 1.0 if e.op == "+" else -1.0
        out = dict(lc)
        for c, v in rc.items():
            out[c] = out.get(c, 0.0) + sign * v
        return out, lk + sign * rk
    raise NonLinear(f"not a linear expression: {e!r}")


def is_linear(e) -> bool:
    try:
        linear_terms(e)
        return True
    except NonLinear:
        return False


def eval_expr(e, env: dict, udfs: dict | None = None):
    """Vectorized evaluation over an environment of column/parameter arrays."""
    udfs = udfs or {}
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Col):
        if e.name not in env:
            raise KeyError(f"unknown column {e.name!r}")
        return env[e.name]
    if isinstance(e, Neg):
        return -eval_expr(e.operand, env, udfs)
    if isinstance(e, Bin):
        l = eval_expr(e.left, env, udfs)
        r = eval_expr(e.right, env, udfs)
        if e.op == "+":
            return l + r
        if e.op == "-":
            return l - r
        if e.op == "*":
            return l * r
        return l / r
    if isinstance(e, Call):
        args = [eval_expr(a, env, udfs) for a in e.args]
        if e.func == "abs":
            return np.abs(args[0])
        if e.func == "log":
            return np.log(args[0])
        if e.func == "min":
            out = args[0]
            for a in args[1:]:
                out = np.minimum(out, a)
            return out
        if e.func == "max":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        udf = udfs[e.func]
        bound = dict(zip(udf.params, args))
        return eval_expr(udf.body, bound, udfs)
    raise TypeError(f"not an expression node: {e!r}")


def _compare(arr, op: str, value):
    if op == "=":
        return arr == value
    if op == "!=":
        return arr != value
    if op == "<":
        return arr < value
    if op == "<=":
        return arr <= value
    if op == ">":
        return arr > value
    return arr >= value


def coerce_constant(value, meta):
    """Align a parsed constant with a column's value type.

    Continuous columns take floats; int-domain discrete columns accept numeric
    strings and whole floats; string domains take the literal as-is.
    """
    from . import table as _table

    if not meta.is_discrete():
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise SqlError(
                    f"column {meta.name!r} is continuous; {value!r} is not numeric"
                ) from None
        return float(value)
    if _table.domain_is_numeric(meta.domain):
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                raise SqlError(
                    f"column {meta.name!r} has an integer domain; cannot compare to {value!r}"
                ) from None
        if isinstance(value, float):
            if value != int(value):
                return value  # never equal to any domain int; comparisons still work
            return int(value)
        return value
    if not isinstance(value, str):
        raise SqlError(f"column {meta.name!r} has a string domain; cannot compare to {value!r}")
    return value


def eval_filter_mask(node, env: dict, metas: dict) -> np.ndarray:
    """Boolean mask of rows satisfying the filter tree; env holds decoded values."""
    if isinstance(node, Pred):
        if node.column not in env:
            raise KeyError(f"unknown column {node.column!r}")
        value = coerce_constant(node.value, metas[node.column])
        return _compare(env[node.column], node.op, value)
    if isinstance(node, And):
        return eval_filter_mask(node.left, env, metas) & eval_filter_mask(node.right, env, metas)
    if isinstance(node, Or):
        return eval_filter_mask(node.left, env, metas) | eval_filter_mask(node.right, env, metas)
    raise TypeError(f"not a boolean node: {node!r}")
