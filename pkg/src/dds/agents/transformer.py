"""Transformer: expands a New work into job records and readies it.

Jobs come from explicit job_defs when the template carries them, otherwise
from partitioning the input collections' registered contents over the job
count, otherwise from job_count_hint alone. A work whose awaited input
collections have no registered contents yet stays New and is retried after
the idle threshold.
"""

from __future__ import annotations

import logging

from dds.bus.events import Event, EventType
from dds.dagengine.index import build_index
from dds.dagengine.jobs import JobNode, content_from_dict
from dds.errors import CycleDetected, NotFound
from dds.model.states import LifecycleEvent, WorkState
from dds.model.work import WorkSpec, transition_state
from dds.agents.base import AgentRole, BaseAgent
from dds.agents import records as rec
from dds.store import CONTENT, JOB, WORK

log = logging.getLogger(__name__)


def expand_jobs(spec: WorkSpec, wkey: str, contents_by_collection: dict[str, list]) -> list[JobNode]:
    """Deterministic job expansion for one work attempt."""
    attempt = spec.metadata.attempt_counter
    template = spec.template
    first_collection = template.input_collections[0] if template.input_collections else ""

    def content_id(name: str) -> str:
        return name if "/" in name else rec.content_record_id(first_collection, name)

    if template.job_defs:
        nodes = []
        for jd in template.job_defs:
            nodes.append(JobNode(
                job_id=rec.job_record_id(wkey, attempt, jd.index),
                parent_work=wkey,
                depends_on=frozenset(rec.job_record_id(wkey, attempt, d) for d in jd.depends_on),
                required_contents=frozenset(content_id(n) for n in jd.required_contents),
                args=jd.args,
            ))
        return nodes

    all_contents = [c for col in template.input_collections
                    for c in contents_by_collection.get(col, [])]
    count = template.job_count_hint or (len(all_contents) if all_contents else 1)
    nodes = []
    for i in range(count):
        required: frozenset[str] = frozenset()
        if all_contents:
            lo = i * len(all_contents) // count
            hi = (i + 1) * len(all_contents) // count
            required = frozenset(c.content_id for c in all_contents[lo:hi])
        nodes.append(JobNode(
            job_id=rec.job_record_id(wkey, attempt, i),
            parent_work=wkey,
            required_contents=required,
            args={"index": i},
        ))
    return nodes


class TransformerAgent(BaseAgent):
    role = AgentRole.Transformer
    event_types = (EventType.TransformReady,)

    def handle_event(self, event: Event) -> None:
        wkey = event.payload.get("work_key") or event.scope_key.split(":", 1)[1]
        ticket = self.claim_one(WORK, wkey, statuses=[WorkState.New.value])
        if ticket is None:
            return
        self._handle_claimed(ticket, wkey)

    def lazy_poll(self) -> bool:
        ticket = self.claim_batch(WORK, [WorkState.New.value])
        for wkey in ticket.record_ids:
            self._handle_claimed(ticket, wkey)
        return bool(ticket.record_ids)

    def _select_backend(self, spec: WorkSpec) -> str:
        if spec.template.backend:
            if spec.template.backend not in self.backends:
                raise NotFound("backend", spec.template.backend)
            return spec.template.backend
        if not self.backends:
            raise NotFound("backend", "<any>")
        return next(iter(self.backends))  # configuration-ordered first-available

    def _handle_claimed(self, ticket, wkey: str) -> None:
        try:
            record = self.store.fetch(WORK, wkey)
        except NotFound:
            return
        body = record.body
        spec = rec.spec_of(body)
        if spec.state != WorkState.New:
            self.store.release_claim(ticket, wkey, spec.state.value)
            return

        contents_by_collection: dict[str, list] = {}
        for col in spec.template.input_collections:
            rows = self.store.query(CONTENT, prefix=f"{col}/")
            contents_by_collection[col] = [content_from_dict(r.body) for r in rows]

        # prerequisite gate: awaited collections must have registered contents
        for col in body.get("await_inputs", []):
            if not contents_by_collection.get(col):
                self.store.release_claim(ticket, wkey, WorkState.New.value,
                                         defer=self.loop_cfg.idle_threshold)
                return

        jobs = expand_jobs(spec, wkey, contents_by_collection)
        try:
            build_index(jobs, [c for cs in contents_by_collection.values() for c in cs])
        except CycleDetected as exc:
            failed = transition_state(spec, LifecycleEvent.fatal_error)
            failed_body = rec.with_spec(body, failed)
            failed_body["error"] = f"job dependency cycle: {exc.job_ids[:10]}"
            self.store.release_claim(ticket, wkey, failed.state.value, body=failed_body)
            return

        self.store.upsert_many(JOB, [(j.job_id, rec.job_body(j), j.state.value) for j in jobs])

        try:
            backend = self._select_backend(spec)
        except NotFound:
            ready_less = transition_state(spec, LifecycleEvent.fatal_error)
            err_body = rec.with_spec(body, ready_less)
            err_body["error"] = "no workload backend available"
            self.store.release_claim(ticket, wkey, ready_less.state.value, body=err_body)
            return

        ready = transition_state(spec, LifecycleEvent.submit_requested)
        ready = ready.with_metadata(job_states={j.job_id: j.state.value for j in jobs})
        new_body = rec.with_spec(body, ready)
        new_body["backend"] = backend
        self.store.release_claim(ticket, wkey, ready.state.value, body=new_body)
        self.publish(Event(EventType.SubmitTask, f"work:{wkey}",
                           payload={"request_id": spec.request_id, "work_key": wkey}))
