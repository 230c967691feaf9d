"""Condition evaluation over a finished work's state and outputs."""

from __future__ import annotations

from dds.model.graph import Condition
from dds.model.predicate import evaluate_predicate
from dds.model.states import WorkState
from dds.model.work import WorkMetadata


def evaluate_condition(cond: Condition, source_meta: WorkMetadata, source_state: WorkState) -> bool:
    """True branch iff the predicate holds. Total and deterministic."""
    return evaluate_predicate(cond.predicate, source_state, source_meta.outputs)
