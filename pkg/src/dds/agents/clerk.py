"""Clerk: decomposes workflow graphs into work records.

The sweep is a pure function of (graph document, persisted work states), so
a clerk restarted with empty memory reproduces identical decisions. Works
downstream of a Failed or SubFinished upstream stay uninstantiated until an
operator retry; works on a condition branch that resolved against them are
dead and never created.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from dds.bus.events import Event, EventType
from dds.dagengine.conditions import evaluate_condition
from dds.dagengine.loops import LoopTerminated, expand_loop
from dds.errors import NotFound, UnresolvedParameter
from dds.model.graph import WorkflowGraph, bind_parameters, validate_graph
from dds.model.serialize import graph_to_dict
from dds.model.states import LifecycleEvent, TERMINAL_STATES, WorkState
from dds.model.work import WorkMetadata, WorkSpec, transition_state
from dds.agents.base import AgentRole, BaseAgent
from dds.agents import records as rec
from dds.store import REQUEST, WORK

log = logging.getLogger(__name__)

_SWEEP_CAP = 25  # loop expansions considered per sweep


@dataclass
class WorkView:
    state: WorkState
    metadata: WorkMetadata


@dataclass
class RequestPlan:
    graph: WorkflowGraph
    to_instantiate: list[WorkSpec] = field(default_factory=list)
    failed_bindings: dict[str, str] = field(default_factory=dict)  # work_id -> reason
    graph_changed: bool = False
    terminal_state: WorkState | None = None


def _edge_resolution(graph: WorkflowGraph, edge, views: dict[str, WorkView],
                     dead: set[str]) -> str:
    """'satisfied' | 'pending' | 'dead' for one edge, given current states."""
    declarations = graph.body_declarations()
    if edge.dst in declarations:
        return "satisfied"  # template edge; expansion materialized clones
    if edge.src in declarations:
        loop = graph.loop_of(edge.src)
        if loop is None or not loop.terminated:
            return "pending"
        # finalize added clone edges when iterations ran; otherwise the
        # body never executed and nothing downstream of it can run
        return "satisfied" if loop.iteration_counter > 0 else "dead"
    if edge.src in dead:
        return "dead"
    view = views.get(edge.src)
    if view is None or view.state not in TERMINAL_STATES:
        return "pending"
    if edge.condition is None:
        if view.state == WorkState.Finished:
            return "satisfied"
        if view.state == WorkState.Cancelled:
            return "dead"
        return "pending"  # Failed/SubFinished: wait for retry or abort
    cond = graph.conditions[edge.condition]
    source_view = views.get(cond.source_work)
    if source_view is None or source_view.state not in TERMINAL_STATES:
        return "pending"
    branch = evaluate_condition(cond, source_view.metadata, source_view.state)
    if edge.dst in cond.true_targets:
        return "satisfied" if branch else "dead"
    if edge.dst in cond.false_targets:
        return "dead" if branch else "satisfied"
    return "satisfied" if branch else "dead"


def _settled(graph: WorkflowGraph, wid: str, views: dict[str, WorkView],
             dead: set[str]) -> bool:
    if wid in dead:
        return True
    view = views.get(wid)
    return view is not None and view.state in TERMINAL_STATES


def _compute_dead(graph: WorkflowGraph, views: dict[str, WorkView]) -> set[str]:
    declarations = graph.body_declarations()
    dead: set[str] = set()
    changed = True
    while changed:
        changed = False
        for wid in graph.works:
            if wid in dead or wid in declarations or wid in views:
                continue
            for edge in graph.in_edges(wid):
                if _edge_resolution(graph, edge, views, dead) == "dead":
                    dead.add(wid)
                    changed = True
                    break
    return dead


def _advance_loops(graph: WorkflowGraph, views: dict[str, WorkView],
                   dead: set[str]) -> tuple[WorkflowGraph, bool]:
    changed = False
    for _ in range(_SWEEP_CAP):
        progressed = False
        for loop in list(graph.loops):
            if loop.terminated:
                continue
            iteration = loop.iteration_counter
            if iteration > 0:
                clones = [loop.clone_id(b, iteration) for b in loop.body]
                if not all(_settled(graph, c, views, dead) for c in clones):
                    continue
                meta = {}
                for base in loop.body:
                    clone = loop.clone_id(base, iteration)
                    view = views.get(clone)
                    meta[base] = ((view.state, view.metadata) if view
                                  else (WorkState.Cancelled, WorkMetadata()))
            else:
                meta = {}
            result = expand_loop(graph, loop, meta)
            if isinstance(result, LoopTerminated):
                if result.reason != "already_terminated":
                    graph = result.graph
                    progressed = changed = True
            else:
                graph = result
                progressed = changed = True
        if not progressed:
            break
        dead = _compute_dead(graph, views)
    return graph, changed


def plan_request(graph: WorkflowGraph, views: dict[str, WorkView]) -> RequestPlan:
    """One decomposition sweep: loop progress, new works, terminal check."""
    dead = _compute_dead(graph, views)
    graph, changed = _advance_loops(graph, views, dead)
    dead = _compute_dead(graph, views)
    declarations = graph.body_declarations()

    plan = RequestPlan(graph=graph, graph_changed=changed)
    upstream_meta = {wid: v.metadata for wid, v in views.items()}

    for wid, spec in graph.works.items():
        if wid in views or wid in dead or wid in declarations:
            continue
        resolutions = [_edge_resolution(graph, e, views, dead) for e in graph.in_edges(wid)]
        if any(r == "dead" for r in resolutions):
            continue  # picked up by the next dead fixpoint
        if all(r == "satisfied" for r in resolutions):
            merged = dict(spec.parameters)
            for slot in spec.template.parameter_slots:
                if slot not in merged and slot in graph.global_parameters:
                    merged[slot] = graph.global_parameters[slot]
            candidate = spec.revised(parameters=merged, request_id=graph.request_id)
            try:
                candidate = bind_parameters(candidate, upstream_meta)
            except UnresolvedParameter as exc:
                plan.failed_bindings[wid] = str(exc)
                continue
            plan.to_instantiate.append(candidate)

    if not plan.to_instantiate and not plan.graph_changed and not plan.failed_bindings:
        active = [v for v in views.values() if v.state not in TERMINAL_STATES]
        if not active:
            states = [v.state for v in views.values()]
            if not states or all(s == WorkState.Finished for s in states):
                plan.terminal_state = WorkState.Finished
            elif any(s in (WorkState.Finished, WorkState.SubFinished) for s in states):
                plan.terminal_state = WorkState.SubFinished
            elif all(s == WorkState.Cancelled for s in states):
                plan.terminal_state = WorkState.Cancelled
            else:
                plan.terminal_state = WorkState.Failed
    return plan


class ClerkAgent(BaseAgent):
    role = AgentRole.Clerk
    event_types = (EventType.NewRequest, EventType.WorkTerminal, EventType.AbortRequest)

    def handle_event(self, event: Event) -> None:
        request_id = event.payload.get("request_id") or event.scope_key.split(":", 1)[1]
        if event.event_type == EventType.AbortRequest:
            self._claim_and_handle(request_id, abort=True)
        elif event.event_type == EventType.NewRequest and event.payload.get("command") == "retry":
            self._claim_and_handle(request_id, retry=True)
        else:
            self._claim_and_handle(request_id)

    def lazy_poll(self) -> bool:
        ticket = self.claim_batch(REQUEST, ["New", "Running", "Aborting"])
        for request_id in ticket.record_ids:
            record = self.store.fetch(REQUEST, request_id)
            self._handle_claimed(ticket, record, abort=(record.status == "Aborting"))
        return bool(ticket.record_ids)

    def _claim_and_handle(self, request_id: str, abort: bool = False, retry: bool = False) -> None:
        ticket = self.claim_one(REQUEST, request_id)
        if ticket is None:
            return
        try:
            record = self.store.fetch(REQUEST, request_id)
        except NotFound:
            return
        self._handle_claimed(ticket, record, abort=abort or record.status == "Aborting",
                             retry=retry)

    # --- the actual handling ------------------------------------------------

    def _work_views(self, request_id: str) -> tuple[dict[str, WorkView], dict[str, dict]]:
        views: dict[str, WorkView] = {}
        bodies: dict[str, dict] = {}
        for record in self.store.query(WORK, prefix=f"{request_id}:"):
            spec = rec.spec_of(record.body)
            views[spec.work_id] = WorkView(spec.state, spec.metadata)
            bodies[spec.work_id] = record.body
        return views, bodies

    def _handle_claimed(self, ticket, record, abort: bool = False, retry: bool = False) -> None:
        request_id = record.record_id
        if record.status in ("Finished", "SubFinished", "Failed", "Cancelled") and not retry:
            self.store.release_claim(ticket, request_id, record.status)
            return
        graph = rec.graph_of(record.body)

        if abort:
            self._handle_abort(ticket, record, graph)
            return
        if retry:
            self._handle_retry(ticket, record, graph)
            return

        body = dict(record.body)
        if record.status == "New":
            report = validate_graph(graph)
            body["report"] = report.to_dict()
            if not report.ok:
                self.store.release_claim(ticket, request_id, "Failed", body=body)
                return

        views, _ = self._work_views(request_id)
        plan = plan_request(graph, views)

        producers = {
            col for spec in plan.graph.works.values()
            for col in spec.template.output_collections
        }
        for spec in plan.to_instantiate:
            await_inputs = [c for c in spec.template.input_collections if c in producers]
            wkey = rec.work_key(request_id, spec.work_id)
            self.store.upsert(WORK, wkey, rec.work_body(spec, await_inputs), spec.state.value)
            self.publish(Event(EventType.TransformReady, f"work:{wkey}",
                               payload={"request_id": request_id, "work_key": wkey}))
        for wid, reason in plan.failed_bindings.items():
            spec = plan.graph.works[wid].revised(state=WorkState.Failed,
                                                 request_id=request_id)
            wkey = rec.work_key(request_id, wid)
            body_w = rec.work_body(spec)
            body_w["error"] = reason
            self.store.upsert(WORK, wkey, body_w, WorkState.Failed.value)

        if plan.graph_changed:
            body["graph"] = graph_to_dict(plan.graph)

        if plan.terminal_state is not None:
            final = plan.graph
            final.state = plan.terminal_state
            body["graph"] = graph_to_dict(final)
            self.store.release_claim(ticket, request_id, plan.terminal_state.value, body=body)
        else:
            self.store.release_claim(ticket, request_id, "Running", body=body,
                                     defer=self.loop_cfg.poll_interval)

    def _handle_abort(self, ticket, record, graph) -> None:
        request_id = record.record_id
        views, bodies = self._work_views(request_id)
        all_terminal = True
        for wid, view in views.items():
            if view.state in TERMINAL_STATES:
                continue
            wkey = rec.work_key(request_id, wid)
            work_ticket = self.claim_one(WORK, wkey)
            if work_ticket is None:
                all_terminal = False  # busy elsewhere; retry next sweep
                continue
            body = bodies[wid]
            spec = rec.spec_of(body)
            handle = spec.metadata.backend_handle
            if handle is not None and handle.backend_name in self.backends:
                try:
                    self.backends[handle.backend_name].cancel_task(handle)
                except Exception:
                    log.exception("cancel_task failed for %s", wkey)
            cancelled = transition_state(spec, LifecycleEvent.cancel)
            self.store.release_claim(work_ticket, wkey, cancelled.state.value,
                                     body=rec.with_spec(body, cancelled))
        if all_terminal:
            graph.state = WorkState.Cancelled
            body = dict(record.body)
            body["graph"] = graph_to_dict(graph)
            self.store.release_claim(ticket, request_id, "Cancelled", body=body)
        else:
            self.store.release_claim(ticket, request_id, "Aborting",
                                     defer=self.loop_cfg.poll_interval)

    def _handle_retry(self, ticket, record, graph) -> None:
        request_id = record.record_id
        views, bodies = self._work_views(request_id)
        for wid, view in views.items():
            if view.state not in (WorkState.Failed, WorkState.SubFinished):
                continue
            wkey = rec.work_key(request_id, wid)
            work_ticket = self.claim_one(WORK, wkey)
            if work_ticket is None:
                continue
            spec = transition_state(rec.spec_of(bodies[wid]), LifecycleEvent.retry)
            self.store.release_claim(work_ticket, wkey, spec.state.value,
                                     body=rec.with_spec(bodies[wid], spec))
            self.publish(Event(EventType.TransformReady, f"work:{wkey}",
                               payload={"request_id": request_id, "work_key": wkey}))
        self.store.release_claim(ticket, request_id, "Running",
                                 defer=self.loop_cfg.poll_interval)
