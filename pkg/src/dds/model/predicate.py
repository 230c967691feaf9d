"""Closed, side-effect-free predicate expressions for workflow conditions.

A predicate is a tree of comparisons over a finished work's output keys,
state equality tests, and boolean combinators. Evaluation is total: a
comparison that references a missing output key, or that compares
incompatible types, evaluates to False rather than raising. This keeps
condition evaluation from ever wedging a workflow on an absent optional
metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

from dds.model.states import WorkState

_OPS = ("eq", "ne", "lt", "le", "gt", "ge")


@dataclass(frozen=True)
class Cmp:
    """Compare an output key's value against a literal."""

    key: str
    op: str  # one of eq, ne, lt, le, gt, ge
    value: object

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparison op {self.op!r}")


@dataclass(frozen=True)
class StateIs:
    state: WorkState


@dataclass(frozen=True)
class And:
    args: tuple["PredicateExpr", ...]


@dataclass(frozen=True)
class Or:
    args: tuple["PredicateExpr", ...]


@dataclass(frozen=True)
class Not:
    arg: "PredicateExpr"


PredicateExpr = Union[Cmp, StateIs, And, Or, Not]


def _compare(op: str, left, right) -> bool:
    try:
        if op == "eq":
            return bool(left == right)
        if op == "ne":
            return bool(left != right)
        if isinstance(left, bool) != isinstance(right, bool):
            return False  # no bool/number ordering surprises
        if op == "lt":
            return bool(left < right)
        if op == "le":
            return bool(left <= right)
        if op == "gt":
            return bool(left > right)
        return bool(left >= right)
    except TypeError:
        return False


_MISSING = object()


def evaluate_predicate(expr: PredicateExpr, state: WorkState, outputs: Mapping[str, object]) -> bool:
    if isinstance(expr, Cmp):
        value = outputs.get(expr.key, _MISSING)
        if value is _MISSING:
            return False
        return _compare(expr.op, value, expr.value)
    if isinstance(expr, StateIs):
        return state == expr.state
    if isinstance(expr, And):
        return all(evaluate_predicate(a, state, outputs) for a in expr.args)
    if isinstance(expr, Or):
        return any(evaluate_predicate(a, state, outputs) for a in expr.args)
    if isinstance(expr, Not):
        return not evaluate_predicate(expr.arg, state, outputs)
    raise TypeError(f"not a predicate node: {expr!r}")


def predicate_to_dict(expr: PredicateExpr) -> dict:
    if isinstance(expr, Cmp):
        return {"op": "cmp", "key": expr.key, "cmp": expr.op, "value": expr.value}
    if isinstance(expr, StateIs):
        return {"op": "state", "equals": expr.state.value}
    if isinstance(expr, And):
        return {"op": "and", "args": [predicate_to_dict(a) for a in expr.args]}
    if isinstance(expr, Or):
        return {"op": "or", "args": [predicate_to_dict(a) for a in expr.args]}
    if isinstance(expr, Not):
        return {"op": "not", "arg": predicate_to_dict(expr.arg)}
    raise TypeError(f"not a predicate node: {expr!r}")


def predicate_from_dict(doc: Mapping) -> PredicateExpr:
    op = doc.get("op")
    if op == "cmp":
        return Cmp(key=doc["key"], op=doc["cmp"], value=doc["value"])
    if op == "state":
        return StateIs(WorkState(doc["equals"]))
    if op == "and":
        return And(tuple(predicate_from_dict(a) for a in doc["args"]))
    if op == "or":
        return Or(tuple(predicate_from_dict(a) for a in doc["args"]))
    if op == "not":
        return Not(predicate_from_dict(doc["arg"]))
    raise ValueError(f"unknown predicate node op {op!r}")
