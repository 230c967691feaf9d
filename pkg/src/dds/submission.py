"""Request intake shared by the REST service, CLI harnesses and tests."""

from __future__ import annotations

from dataclasses import replace

from dds._util import new_id
from dds.bus.base import EventBus
from dds.bus.events import Event, EventType
from dds.model.graph import ValidationReport, WorkflowGraph, validate_graph
from dds.agents import records as rec
from dds.store import REQUEST, Store


def submit_request(store: Store, bus: EventBus | None, graph: WorkflowGraph,
                   owner: str, user_metadata: dict | None = None) -> tuple[str, ValidationReport]:
    """Validate, persist as New and announce. Returns (request_id, report).

    An invalid graph is not persisted; the caller surfaces the report.
    """
    report = validate_graph(graph)
    if not report.ok:
        return "", report
    request_id = graph.request_id or new_id("req")
    if graph.request_id != request_id:
        graph = replace(graph, request_id=request_id)
    store.upsert(REQUEST, request_id,
                 rec.request_body(graph, owner, report.to_dict(), user_metadata), "New")
    if bus is not None:
        bus.publish(Event(EventType.NewRequest, f"request:{request_id}",
                          payload={"request_id": request_id}))
    return request_id, report
