"""Shared status-ingestion and trigger logic.

Both the receiver (stream path) and the carrier's poller (snapshot path)
funnel backend job statuses through here: job records advance idempotently,
completed jobs decrement the dependency index, produced contents are
registered and announced, and newly releasable jobs are released at the
backend exactly once per index (the backend call itself is idempotent, so
competing ingesters cannot double-start a job).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from dds.backends.base import BackendJobStatus, JobPhase, WorkloadBackend
from dds.bus.events import Event, EventType
from dds.dagengine.index import DependencyIndex, build_index, mark_content_available, mark_done
from dds.dagengine.jobs import Availability, ContentItem, JobState, content_from_dict, content_to_dict
from dds.errors import UnknownContent, UnknownJob
from dds.model.work import WorkSpec
from dds.agents import records as rec
from dds.store import CONTENT, JOB, MESSAGE, Store

log = logging.getLogger(__name__)

_RANK = {JobState.Waiting: 0, JobState.Released: 1, JobState.Running: 2,
         JobState.Done: 3, JobState.Failed: 3}

_PHASE_TO_STATE = {JobPhase.Running: JobState.Running, JobPhase.Done: JobState.Done,
                   JobPhase.Failed: JobState.Failed}


@dataclass
class IngestOutcome:
    total: int = 0
    done: int = 0
    failed: int = 0
    changed: bool = False
    released: set[str] = field(default_factory=set)

    @property
    def all_terminal(self) -> bool:
        return self.total > 0 and self.done + self.failed == self.total

    @property
    def terminal_counts(self) -> tuple[int, int, int]:
        return self.done, self.failed, self.total


class IndexCache:
    """Per-(work, attempt) dependency index plus its job map.

    Caching the job map matters at Rubin scale: reloading 100k job records
    per ingest batch would dominate the replay. The store stays the
    recovery truth; a rebuild after a crash reproduces both structures.
    """

    def __init__(self):
        self._entries: dict[tuple[str, int], tuple[DependencyIndex, dict]] = {}

    def get(self, key: tuple[str, int]) -> tuple[DependencyIndex, dict] | None:
        return self._entries.get(key)

    def put(self, key: tuple[str, int], index: DependencyIndex, jobs: dict) -> None:
        self._entries.pop((key[0], key[1] - 1), None)  # previous attempt's index
        self._entries[key] = (index, jobs)

    def drop(self, key: tuple[str, int]) -> None:
        self._entries.pop(key, None)


def load_jobs(store: Store, wkey: str, attempt: int):
    rows = store.query(JOB, prefix=rec.job_prefix(wkey, attempt))
    return {r.record_id: rec.job_of(r.body) for r in rows}


def load_contents(store: Store, collections) -> list[ContentItem]:
    out: list[ContentItem] = []
    for col in collections:
        out.extend(content_from_dict(r.body) for r in store.query(CONTENT, prefix=f"{col}/"))
    return out


def phase_to_state(status: BackendJobStatus) -> JobState:
    if status.phase == JobPhase.Queued:
        return JobState.Waiting if status.held else JobState.Released
    return _PHASE_TO_STATE[status.phase]


def ingest_statuses(store: Store, spec: WorkSpec, wkey: str,
                    backend: WorkloadBackend | None,
                    statuses: list[BackendJobStatus],
                    cache: IndexCache, publish=lambda event: None) -> IngestOutcome:
    """Apply a batch of backend statuses for one work. Idempotent."""
    attempt = spec.metadata.attempt_counter
    key = (wkey, attempt)

    cached = cache.get(key)
    fresh_build = cached is None
    if fresh_build:
        jobs = load_jobs(store, wkey, attempt)
        contents = load_contents(store, spec.template.input_collections)
        index = build_index(jobs.values(), contents)
        cache.put(key, index, jobs)
    else:
        index, jobs = cached

    outcome = IngestOutcome(total=len(jobs))
    updates: list[tuple[str, dict, str]] = []
    newly_done: list[str] = []
    produced: list[dict] = []

    for status in statuses:
        job = jobs.get(status.job_id)
        if job is None:
            _dead_letter(store, wkey, status)
            continue
        new_state = phase_to_state(status)
        if _RANK[new_state] <= _RANK[job.state]:
            continue  # duplicate or stale message: no-op
        job.state = new_state
        if new_state == JobState.Done:
            job.outputs = status.outputs
            newly_done.append(job.job_id)
            produced.extend(status.produced_contents)
        elif new_state == JobState.Failed:
            job.exit_detail = status.exit_detail
        updates.append((job.job_id, rec.job_body(job), job.state.value))
        outcome.changed = True

    # terminal counters reflect the whole job set, not just this batch
    for job in jobs.values():
        if job.state == JobState.Done:
            outcome.done += 1
        elif job.state == JobState.Failed:
            outcome.failed += 1

    releases: set[str] = set()
    if fresh_build:
        releases |= {j for j in index.initial_ready if jobs[j].state == JobState.Waiting}

    for job_id in newly_done:
        try:
            releases |= mark_done(index, job_id)
        except UnknownJob:
            cache.drop(key)

    for doc in produced:
        content = ContentItem(
            content_id=rec.content_record_id(doc.get("collection", "produced"), doc["name"]),
            collection=doc.get("collection", "produced"),
            name=doc["name"], size_bytes=doc.get("size_bytes", 0),
            availability=Availability.Available)
        store.upsert(CONTENT, content.content_id, content_to_dict(content),
                     Availability.Available.value)
        publish(Event(EventType.ContentAvailable, f"content:{content.content_id}",
                      payload={"request_id": spec.request_id,
                               "content_id": content.content_id}))
        try:
            releases |= mark_content_available(index, content.content_id)
        except UnknownContent:
            pass  # not consumed by this work; other works reconcile via event

    releases = {j for j in releases if j in jobs and jobs[j].state == JobState.Waiting}
    if releases and backend is not None and spec.metadata.backend_handle is not None:
        backend.release_jobs(spec.metadata.backend_handle, sorted(releases))
    for job_id in releases:
        job = jobs[job_id]
        job.state = JobState.Released
        updates.append((job_id, rec.job_body(job), job.state.value))
        outcome.changed = True
    outcome.released = releases

    if updates:
        store.upsert_many(JOB, updates)
    if releases:
        publish(Event(EventType.TriggerRelease, f"work:{wkey}",
                      payload={"request_id": spec.request_id, "work_key": wkey,
                               "count": len(releases)}))
    if outcome.changed:
        publish(Event(EventType.JobStatus, f"work:{wkey}",
                      payload={"request_id": spec.request_id, "work_key": wkey,
                               "done": outcome.done, "failed": outcome.failed,
                               "total": outcome.total}))
    return outcome


def reconcile_release(store: Store, spec: WorkSpec, wkey: str,
                      backend: WorkloadBackend | None, cache: IndexCache,
                      publish=lambda event: None) -> IngestOutcome:
    """Rebuild the index from persisted truth and release anything ready.

    The crash-recovery path: build_index is a pure function of stored jobs
    and contents, so this reproduces and repairs any lost incremental state.
    """
    cache.drop((wkey, spec.metadata.attempt_counter))
    return ingest_statuses(store, spec, wkey, backend, [], cache, publish)


def _dead_letter(store: Store, wkey: str, status: BackendJobStatus) -> None:
    key = f"deadletter:{wkey}:{status.job_id}"
    store.upsert(MESSAGE, key, {"work_key": wkey, "status": status.to_dict()}, "dead_letter")
    log.warning("quarantined status for unknown job %s of %s", status.job_id, wkey)


def aggregate_outputs(store: Store, spec: WorkSpec, wkey: str) -> dict:
    """Work-level outputs from terminal job records.

    One job: its outputs verbatim. Many jobs: per key, a job-index-ordered
    list (None where a job lacks the key). Reserved counters _jobs_total,
    _jobs_done and _jobs_failed are always present.
    """
    jobs = load_jobs(store, wkey, spec.metadata.attempt_counter)
    ordered = [jobs[k] for k in sorted(jobs)]
    done = sum(1 for j in ordered if j.state == JobState.Done)
    failed = sum(1 for j in ordered if j.state == JobState.Failed)
    if len(ordered) == 1:
        outputs = dict(ordered[0].outputs)
    else:
        keys = {k for j in ordered for k in j.outputs}
        outputs = {k: [j.outputs.get(k) for j in ordered] for k in sorted(keys)}
    outputs["_jobs_total"] = len(ordered)
    outputs["_jobs_done"] = done
    outputs["_jobs_failed"] = failed
    return outputs
