"""Slow reference implementations the fast paths are checked against.

Queries are answered by scanning decoded rows one at a time in pure Python;
probabilities and expectations on small all-discrete models come from
exhaustive enumeration of the joint domain. Nothing here shares evaluation
code with the vectorized or recursive implementations under test.
"""
import itertools
import math

from spnaqp.conditions import DiscreteSet
from spnaqp.queries import AVG, COUNT, SUM, And, Bin, Call, Col, Neg, Num, Or, Pred
from spnaqp.spn import LeafDiscrete, SumNode


def eval_scalar(expr, row, udfs=None):
    if isinstance(expr, Num):
        return float(expr.value)
    if isinstance(expr, Col):
        return float(row[expr.name])
    if isinstance(expr, Neg):
        return -eval_scalar(expr.operand, row, udfs)
    if isinstance(expr, Bin):
        a = eval_scalar(expr.left, row, udfs)
        b = eval_scalar(expr.right, row, udfs)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        return a / b
    if isinstance(expr, Call):
        args = [eval_scalar(a, row, udfs) for a in expr.args]
        if expr.func == "abs":
            return abs(args[0])
        if expr.func == "log":
            return math.log(args[0])
        if expr.func == "min":
            return min(args)
        if expr.func == "max":
            return max(args)
        if udfs and expr.func in udfs:
            u = udfs[expr.func]
            return eval_scalar(u.body, dict(zip(u.params, args)), udfs)
    raise TypeError(f"cannot evaluate {expr!r}")


def _pred_holds(pred: Pred, row) -> bool:
    v = row[pred.column]
    rhs = pred.value
    if isinstance(v, str):
        if not isinstance(rhs, str):
            return False
    else:
        v = float(v)
        rhs = float(rhs)
    if pred.op == "=":
        return v == rhs
    if pred.op == "!=":
        return v != rhs
    if pred.op == "<":
        return v < rhs
    if pred.op == "<=":
        return v <= rhs
    if pred.op == ">":
        return v > rhs
    return v >= rhs


def filter_holds(node, row) -> bool:
    if isinstance(node, Pred):
        return _pred_holds(node, row)
    if isinstance(node, And):
        return filter_holds(node.left, row) and filter_holds(node.right, row)
    if isinstance(node, Or):
        return filter_holds(node.left, row) or filter_holds(node.right, row)
    raise TypeError(f"unknown filter node {node!r}")


def scan_query(columns: dict, q, udfs=None) -> list:
    """Row-at-a-time aggregate over decoded column values.

    Returns sorted (group key tuple, value) pairs with the same zero-match
    convention as the exact executor: an ungrouped COUNT with no matching
    rows is [((), 0.0)]; any other empty result is [].
    """
    names = list(columns)
    n = len(columns[names[0]]) if names else 0
    acc: dict = {}
    for i in range(n):
        row = {c: columns[c][i] for c in names}
        if q.filter is not None and not filter_holds(q.filter, row):
            continue
        key = tuple(row[c] for c in q.group_by)
        cnt, tot = acc.get(key, (0, 0.0))
        if q.aggregate != COUNT:
            tot += eval_scalar(q.target, row, udfs)
        acc[key] = (cnt + 1, tot)
    out = []
    for key, (cnt, tot) in acc.items():
        if q.aggregate == COUNT:
            out.append((key, float(cnt)))
        elif q.aggregate == SUM:
            out.append((key, tot))
        else:
            out.append((key, tot / cnt))
    out.sort(key=lambda gv: gv[0])
    if not q.group_by and q.aggregate == COUNT and not out:
        out = [((), 0.0)]
    return out


# ------------------------------------------- exhaustive discrete enumeration

def _joint_density(node, assignment: dict) -> float:
    if isinstance(node, LeafDiscrete):
        lookup = dict(zip(node.values, (float(m) for m in node.masses)))
        return lookup.get(assignment[node.column], 0.0)
    if isinstance(node, SumNode):
        return sum(
            float(w) * _joint_density(c, assignment)
            for w, c in zip(node.weights, node.children)
        )
    prod = 1.0
    for c in node.children:
        prod *= _joint_density(c, assignment)
    return prod


def joint_table(spn) -> list:
    """Every full assignment of a small all-discrete model with its probability."""
    cols = spn.column_names()
    domains = [spn.meta_for(c).domain for c in cols]
    out = []
    for combo in itertools.product(*domains):
        out.append((dict(zip(cols, combo)), _joint_density(spn.root, dict(zip(cols, combo)))))
    return out


def row_satisfies(cs, row: dict) -> bool:
    for cond in cs.conditions:
        v = row[cond.column]
        if isinstance(cond.constraint, DiscreteSet):
            if v not in cond.constraint.values:
                return False
        else:
            if not any(iv.contains(float(v)) for iv in cond.constraint.intervals):
                return False
    return True


def enum_probability(spn, cs) -> float:
    return sum(p for row, p in joint_table(spn) if row_satisfies(cs, row))


def enum_expectation(spn, column: str, cs) -> float:
    num = 0.0
    den = 0.0
    for row, p in joint_table(spn):
        if row_satisfies(cs, row):
            num += float(row[column]) * p
            den += p
    if den <= 0.0:
        raise ZeroDivisionError("conditioning event has zero probability")
    return num / den
