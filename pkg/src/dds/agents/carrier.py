"""Carrier: submission, polling and finalization against workload backends.

One composite agent runs the three sub-roles (submitter, poller, finisher),
dispatching each claimed work by its lifecycle state. Submission is
idempotent through the (work, attempt) idempotency key, so a duplicate
SubmitTask event or a crash between Submitting and Submitted cannot start a
second execution.
"""

from __future__ import annotations

import logging

from dds.bus.events import Event, EventType
from dds.dagengine.index import build_index
from dds.dagengine.jobs import JobState
from dds.backends.base import JobPhase, JobSubmission
from dds.errors import BackendUnavailable, NotFound, PayloadUnresolvable, UnknownHandle
from dds.model.states import LifecycleEvent, WorkState
from dds.model.work import WorkSpec, transition_state
from dds.agents.base import AgentRole, BaseAgent
from dds.agents import records as rec
from dds.agents.ingest import (
    IndexCache,
    aggregate_outputs,
    ingest_statuses,
    load_contents,
    load_jobs,
)
from dds.store import JOB, MESSAGE, WORK

log = logging.getLogger(__name__)

MAX_SUBMIT_RETRIES = 5


class CarrierAgent(BaseAgent):
    role = AgentRole.Carrier
    event_types = (EventType.SubmitTask, EventType.PollTask,
                   EventType.JobStatus, EventType.TriggerRelease)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._cache = IndexCache()

    def handle_event(self, event: Event) -> None:
        wkey = event.payload.get("work_key") or event.scope_key.split(":", 1)[1]
        ticket = self.claim_one(WORK, wkey, statuses=[
            WorkState.Ready.value, WorkState.Submitting.value,
            WorkState.Submitted.value, WorkState.Running.value])
        if ticket is None:
            return
        self._dispatch(ticket, wkey)

    def lazy_poll(self) -> bool:
        ticket = self.claim_batch(WORK, [
            WorkState.Ready.value, WorkState.Submitting.value,
            WorkState.Submitted.value, WorkState.Running.value])
        for wkey in ticket.record_ids:
            self._dispatch(ticket, wkey)
        return bool(ticket.record_ids)

    def _dispatch(self, ticket, wkey: str) -> None:
        try:
            record = self.store.fetch(WORK, wkey)
        except NotFound:
            return
        spec = rec.spec_of(record.body)
        if spec.state in (WorkState.Ready, WorkState.Submitting):
            self.submit(ticket, wkey, record.body, spec)
        elif spec.state in (WorkState.Submitted, WorkState.Running):
            self.poll(ticket, wkey, record.body, spec)
        else:
            self.store.release_claim(ticket, wkey, spec.state.value)

    # --- submitter -----------------------------------------------------------

    def submit(self, ticket, wkey: str, body: dict, spec: WorkSpec) -> None:
        backend_name = body.get("backend") or next(iter(self.backends), "")
        backend = self.backends.get(backend_name)
        if backend is None:
            self._fail(ticket, wkey, body, spec, f"backend {backend_name!r} not configured")
            return

        if spec.state == WorkState.Ready:
            spec = transition_state(spec, LifecycleEvent.submit_requested)  # -> Submitting

        attempt = spec.metadata.attempt_counter
        jobs = load_jobs(self.store, wkey, attempt)
        contents = load_contents(self.store, spec.template.input_collections)
        index = build_index(jobs.values(), contents)
        submissions = []
        for job_id in sorted(jobs):
            job = jobs[job_id]
            held = job.state == JobState.Waiting and job_id not in index.initial_ready
            submissions.append(JobSubmission(job_id=job_id, index=len(submissions),
                                             args=job.args, held=held))
        try:
            handle = backend.submit_task(
                spec.template.executable, submissions,
                idempotency_key=f"{wkey}:a{attempt}",
                params=spec.metadata.bound_parameters)
        except PayloadUnresolvable as exc:
            self._fail(ticket, wkey, body, spec, str(exc))
            return
        except BackendUnavailable as exc:
            retries = body.get("submit_retries", 0) + 1
            body = dict(body, submit_retries=retries)
            if retries > MAX_SUBMIT_RETRIES:
                self._fail(ticket, wkey, body, spec, f"backend unavailable: {exc}")
                return
            self.store.release_claim(ticket, wkey, spec.state.value,
                                     body=rec.with_spec(body, spec),
                                     defer=min(2.0 ** retries, 60.0))
            return

        released_now = []
        job_states = {}
        for job_id, job in jobs.items():
            if job.state == JobState.Waiting and job_id in index.initial_ready:
                job.state = JobState.Released
                released_now.append((job_id, rec.job_body(job), job.state.value))
            job_states[job_id] = job.state.value
        if released_now:
            self.store.upsert_many(JOB, released_now)

        spec = transition_state(spec, LifecycleEvent.submitted)  # -> Submitted
        spec = spec.with_metadata(backend_handle=handle, job_states=job_states)
        self.store.release_claim(ticket, wkey, spec.state.value,
                                 body=rec.with_spec(body, spec))
        self.publish(Event(EventType.PollTask, f"work:{wkey}",
                           payload={"request_id": spec.request_id, "work_key": wkey}))

    # --- poller ---------------------------------------------------------------

    def poll(self, ticket, wkey: str, body: dict, spec: WorkSpec) -> None:
        handle = spec.metadata.backend_handle
        backend = self.backends.get(handle.backend_name) if handle else None
        if handle is None or backend is None:
            self._fail(ticket, wkey, body, spec, "backend handle missing")
            return
        try:
            statuses = backend.poll_task(handle)
        except UnknownHandle:
            self._fail(ticket, wkey, body, spec, "backend no longer knows this task")
            return

        if spec.template.input_collections:
            # content availability changes outside this work's own status
            # stream; rebuild at poll cadence so gated jobs release even
            # with the bus disabled
            self._cache.drop((wkey, spec.metadata.attempt_counter))
        outcome = ingest_statuses(self.store, spec, wkey, backend, statuses,
                                  self._cache, publish=self.publish)
        if spec.state == WorkState.Submitted and any(
                s.phase in (JobPhase.Running, JobPhase.Done, JobPhase.Failed)
                for s in statuses):
            spec = transition_state(spec, LifecycleEvent.started)  # -> Running

        if outcome.all_terminal:
            self.finish(ticket, wkey, body, spec, outcome)
            return
        # adaptive pacing: a progressing task re-polls at the poll cadence,
        # a quiet one backs off to the idle threshold
        defer = self.loop_cfg.poll_interval if outcome.changed else self.loop_cfg.idle_threshold
        self.store.release_claim(ticket, wkey, spec.state.value,
                                 body=rec.with_spec(body, spec), defer=defer)

    # --- finisher ----------------------------------------------------------------

    def finish(self, ticket, wkey: str, body: dict, spec: WorkSpec, outcome) -> None:
        done, failed, _total = outcome.terminal_counts
        if failed == 0:
            event = LifecycleEvent.all_jobs_done
        elif done > 0:
            event = LifecycleEvent.partial_jobs_done
        else:
            event = LifecycleEvent.fatal_error
        outputs = aggregate_outputs(self.store, spec, wkey)
        spec = transition_state(spec, event)
        spec = spec.with_metadata(outputs=outputs)
        self.store.release_claim(ticket, wkey, spec.state.value,
                                 body=rec.with_spec(body, spec))
        self._queue_notification(wkey, spec)
        self.publish(Event(EventType.WorkTerminal, f"work:{wkey}",
                           payload={"request_id": spec.request_id, "work_key": wkey,
                                    "state": spec.state.value}))

    def _queue_notification(self, wkey: str, spec: WorkSpec) -> None:
        if not self.config.notify.callback_url:
            return
        outbox_id = f"notify:{wkey}:a{spec.metadata.attempt_counter}"
        self.store.upsert(MESSAGE, outbox_id, {
            "work_id": spec.work_id,
            "request_id": spec.request_id,
            "work_key": wkey,
            "state": spec.state.value,
            "outputs": spec.metadata.outputs,
            "attempt": spec.metadata.attempt_counter,
        }, "outbox")

    def _fail(self, ticket, wkey: str, body: dict, spec: WorkSpec, reason: str) -> None:
        log.warning("work %s failed: %s", wkey, reason)
        spec = transition_state(spec, LifecycleEvent.fatal_error)
        failed_body = rec.with_spec(body, spec)
        failed_body["error"] = reason
        self.store.release_claim(ticket, wkey, spec.state.value, body=failed_body)
        self._queue_notification(wkey, spec)
        self.publish(Event(EventType.WorkTerminal, f"work:{wkey}",
                           payload={"request_id": spec.request_id, "work_key": wkey,
                                    "state": spec.state.value}))
