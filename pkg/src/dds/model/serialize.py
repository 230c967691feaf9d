"""Versioned graph documents: the canonical submission payload.

Documents are UTF-8 JSON carrying an integer ``schema_version``. The current
writer emits version 2; the reader accepts versions 2 and 1 (1 predates loop
blocks). Anything newer raises UnsupportedVersion. The full document schema
is described in docs/graph-format.md.
"""

from __future__ import annotations

import json
from typing import Mapping

from dds.errors import UnsupportedVersion
from dds.model.graph import Condition, Edge, LoopBlock, WorkflowGraph
from dds.model.predicate import predicate_from_dict, predicate_to_dict
from dds.model.states import WorkState
from dds.model.work import (
    parameter_from_dict,
    parameter_to_dict,
    work_from_dict,
    work_to_dict,
)

SCHEMA_VERSION = 2
ACCEPTED_VERSIONS = (SCHEMA_VERSION, SCHEMA_VERSION - 1)


def condition_to_dict(c: Condition) -> dict:
    return {
        "condition_id": c.condition_id,
        "source_work": c.source_work,
        "predicate": predicate_to_dict(c.predicate),
        "true_targets": list(c.true_targets),
        "false_targets": list(c.false_targets),
    }


def condition_from_dict(doc: Mapping) -> Condition:
    return Condition(
        condition_id=doc["condition_id"],
        source_work=doc["source_work"],
        predicate=predicate_from_dict(doc["predicate"]),
        true_targets=tuple(doc.get("true_targets", ())),
        false_targets=tuple(doc.get("false_targets", ())),
    )


def loop_to_dict(lb: LoopBlock) -> dict:
    return {
        "loop_id": lb.loop_id,
        "body": list(lb.body),
        "exit_condition": condition_to_dict(lb.exit_condition),
        "max_iterations": lb.max_iterations,
        "iteration_counter": lb.iteration_counter,
        "terminated": lb.terminated,
    }


def loop_from_dict(doc: Mapping) -> LoopBlock:
    return LoopBlock(
        loop_id=doc["loop_id"],
        body=tuple(doc["body"]),
        exit_condition=condition_from_dict(doc["exit_condition"]),
        max_iterations=doc["max_iterations"],
        iteration_counter=doc.get("iteration_counter", 0),
        terminated=doc.get("terminated", False),
    )


def graph_to_dict(graph: WorkflowGraph) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "request_id": graph.request_id,
        "state": graph.state.value,
        "created_at": graph.created_at,
        "works": {wid: work_to_dict(w) for wid, w in graph.works.items()},
        "edges": [[e.src, e.dst, e.condition] for e in graph.edges],
        "conditions": {cid: condition_to_dict(c) for cid, c in graph.conditions.items()},
        "loops": [loop_to_dict(lb) for lb in graph.loops],
        "global_parameters": {k: parameter_to_dict(v) for k, v in graph.global_parameters.items()},
    }


def graph_from_dict(doc: Mapping) -> WorkflowGraph:
    version = doc.get("schema_version")
    if version not in ACCEPTED_VERSIONS:
        raise UnsupportedVersion(version, ACCEPTED_VERSIONS)
    edges = []
    for entry in doc.get("edges", ()):
        if len(entry) == 2:
            src, dst = entry
            cond = None
        else:
            src, dst, cond = entry
        edges.append(Edge(src, dst, cond))
    loops = [loop_from_dict(lb) for lb in doc.get("loops", ())] if version >= 2 else []
    return WorkflowGraph(
        request_id=doc.get("request_id", ""),
        works={wid: work_from_dict(w) for wid, w in doc.get("works", {}).items()},
        edges=edges,
        conditions={cid: condition_from_dict(c) for cid, c in doc.get("conditions", {}).items()},
        loops=loops,
        global_parameters={
            k: parameter_from_dict(v) for k, v in doc.get("global_parameters", {}).items()
        },
        state=WorkState(doc.get("state", "New")),
        created_at=doc.get("created_at", 0),
    )


def serialize_graph(graph: WorkflowGraph) -> bytes:
    """Graph -> versioned UTF-8 JSON document."""
    return json.dumps(graph_to_dict(graph), sort_keys=True).encode("utf-8")


def deserialize_graph(document: bytes | str) -> WorkflowGraph:
    """Versioned document -> graph; accepts current and previous version."""
    if isinstance(document, (bytes, bytearray)):
        document = document.decode("utf-8")
    return graph_from_dict(json.loads(document))
