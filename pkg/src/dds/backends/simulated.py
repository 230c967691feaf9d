"""Deterministic simulated backend for tests and scaled scenario replays.

A script plus a seed fully determines every job's latency, outcome, outputs
and produced contents. Simulated time advances in integer steps, one per
poll by default, so agent-driven runs progress without a wall clock.

Script document (JSON):
    {
      "seed": 7,
      "default_latency": 1,          # steps in Queued before Running
      "failure_rate": 0.0,           # deterministic per-job hash draw
      "jobs": {                      # per-job overrides, keyed by index
        "3": {"latency": 2, "outcome": "failed", "exit_detail": "oom",
               "outputs": {...}, "produced_contents": [...]}
      }
    }

State lives either in this process (fast, engine-level tests) or in the
persistence store (survives agent crashes, stands in for an external
workload manager).
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from contextlib import contextmanager
from typing import Any

from dds._util import new_id, now_ms
from dds.backends.base import (
    BackendJobStatus,
    JobPhase,
    JobSubmission,
    WorkloadBackend,
)
from dds.errors import BackendUnavailable, NotFound, StaleClaim, UnknownHandle
from dds.model.work import TaskHandle
from dds.store import MESSAGE, Store


def _hash_unit(seed: int, job_id: str, salt: str) -> float:
    digest = hashlib.sha256(f"{seed}:{salt}:{job_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class SimulatedBackend(WorkloadBackend):
    def __init__(self, name: str = "sim", script: dict | None = None,
                 store: Store | None = None, advance_on_poll: bool = True):
        self.name = name
        self._script = script or {}
        self._store = store
        self._advance_on_poll = advance_on_poll
        self._lock = threading.RLock()
        self._tasks: dict[str, dict] = {}          # in-memory mode
        self._by_key: dict[str, str] = {}

    # --- script resolution -------------------------------------------------

    def _job_plan(self, job: JobSubmission) -> dict:
        script = self._script
        override = script.get("jobs", {}).get(str(job.index), {})
        latency = int(override.get("latency", script.get("default_latency", 1)))
        outcome = override.get("outcome")
        if outcome is None:
            rate = float(script.get("failure_rate", 0.0))
            seed = int(script.get("seed", 0))
            outcome = "failed" if rate > 0 and _hash_unit(seed, job.job_id, "fail") < rate else "done"
        return {
            "latency": max(0, latency),
            "outcome": outcome,
            "outputs": override.get("outputs", {}),
            "produced_contents": override.get("produced_contents", []),
            "exit_detail": override.get("exit_detail", "" if outcome == "done" else "scripted failure"),
        }

    # --- task state handling ------------------------------------------------

    def _state_key(self, external_id: str) -> str:
        return f"simtask:{self.name}:{external_id}"

    def _load(self, external_id: str) -> dict:
        if self._store is None:
            task = self._tasks.get(external_id)
            if task is None:
                raise UnknownHandle(external_id)
            return task
        try:
            return self._store.fetch(MESSAGE, self._state_key(external_id)).body
        except NotFound as exc:
            raise UnknownHandle(external_id) from exc

    def _save(self, external_id: str, task: dict) -> None:
        if self._store is None:
            self._tasks[external_id] = task
        else:
            self._store.upsert(MESSAGE, self._state_key(external_id), task, "sim")

    @contextmanager
    def _mutation(self, external_id: str, required: bool = True):
        """Cross-process exclusive section for read-modify-write on a task.

        In-memory mode uses the process lock. Store mode claims the task
        record; with required=False a busy task yields None and the caller
        degrades to a read-only snapshot.
        """
        if self._store is None:
            with self._lock:
                yield True
            return
        key = self._state_key(external_id)
        worker = f"simbackend-{os.getpid()}-{threading.get_ident()}"
        deadline = time.monotonic() + 10.0
        ticket = None
        while True:
            got = self._store.claim_ids(MESSAGE, [key], worker, lease=30.0)
            if got.record_ids:
                ticket = got
                break
            try:
                self._store.fetch(MESSAGE, key)
            except NotFound as exc:
                raise UnknownHandle(external_id) from exc
            if not required:
                yield False
                return
            if time.monotonic() > deadline:
                raise BackendUnavailable(f"simulated task {external_id} is claim-locked")
            time.sleep(0.01)
        try:
            yield True
        finally:
            try:
                self._store.release_claim(ticket, key, "sim")
            except StaleClaim:
                pass

    def _find_by_key(self, idempotency_key: str) -> str | None:
        if self._store is None:
            return self._by_key.get(idempotency_key)
        try:
            return self._store.fetch(MESSAGE, f"simkey:{self.name}:{idempotency_key}").body["external_id"]
        except NotFound:
            return None

    def _remember_key(self, idempotency_key: str, external_id: str) -> None:
        if self._store is None:
            self._by_key[idempotency_key] = external_id
        else:
            self._store.upsert(MESSAGE, f"simkey:{self.name}:{idempotency_key}",
                               {"external_id": external_id}, "sim")

    # --- backend interface ---------------------------------------------------

    def submit_task(self, executable: str, jobs: list[JobSubmission],
                    idempotency_key: str, params: dict | None = None) -> TaskHandle:
        with self._lock:
            existing = self._find_by_key(idempotency_key)
            if existing is not None:
                task = self._load(existing)
                return TaskHandle(self.name, existing, task["submitted_at"])
            external_id = new_id("simtask")
            task: dict[str, Any] = {
                "executable": executable,
                "submitted_at": now_ms(),
                "step": 0,
                "seq": 0,
                "messages": [],
                "jobs": {},
                "active": [],
            }
            for job in jobs:
                plan = self._job_plan(job)
                task["jobs"][job.job_id] = {
                    "index": job.index,
                    "phase": JobPhase.Queued.value,
                    "held": job.held,
                    "steps_in_phase": 0,
                    **plan,
                }
                if not job.held:
                    task["active"].append(job.job_id)
                self._emit(task, job.job_id)
            self._save(external_id, task)
            self._remember_key(idempotency_key, external_id)
            return TaskHandle(self.name, external_id, task["submitted_at"])

    def _emit(self, task: dict, job_id: str) -> None:
        job = task["jobs"][job_id]
        task["seq"] += 1
        task["messages"].append({
            "seq": task["seq"],
            "status": BackendJobStatus(
                job_id=job_id, phase=JobPhase(job["phase"]), held=job["held"],
                outputs=job.get("outputs", {}) if job["phase"] == "Done" else {},
                produced_contents=job.get("produced_contents", []) if job["phase"] == "Done" else [],
                exit_detail=job.get("exit_detail", "") if job["phase"] == "Failed" else "",
            ).to_dict(),
        })

    def _advance(self, task: dict) -> None:
        # "active" tracks released, non-terminal jobs so a step costs
        # O(active), not O(jobs): essential on 100k-job replays
        task["step"] += 1
        if "active" not in task:
            task["active"] = [jid for jid, j in task["jobs"].items()
                              if not j["held"] and j["phase"] not in ("Done", "Failed")]
        still_active = []
        for job_id in task["active"]:
            job = task["jobs"][job_id]
            if job["held"] or job["phase"] in ("Done", "Failed"):
                continue
            job["steps_in_phase"] += 1
            if job["phase"] == JobPhase.Queued.value:
                if job["steps_in_phase"] > job["latency"]:
                    job["phase"] = JobPhase.Running.value
                    job["steps_in_phase"] = 0
                    self._emit(task, job_id)
                still_active.append(job_id)
            elif job["phase"] == JobPhase.Running.value:
                job["phase"] = JobPhase.Done.value if job["outcome"] == "done" else JobPhase.Failed.value
                self._emit(task, job_id)
        task["active"] = still_active

    def step(self, handle: TaskHandle, steps: int = 1) -> None:
        """Advance simulated time explicitly (tests drive this directly)."""
        with self._mutation(handle.external_id):
            task = self._load(handle.external_id)
            for _ in range(steps):
                self._advance(task)
            self._save(handle.external_id, task)

    def run_to_completion(self, handle: TaskHandle, max_steps: int = 10_000) -> None:
        with self._mutation(handle.external_id):
            task = self._load(handle.external_id)
            for _ in range(max_steps):
                if "active" in task and not task["active"]:
                    break
                self._advance(task)
                if not task["active"]:
                    break
            self._save(handle.external_id, task)

    def _snapshot(self, task: dict) -> list[BackendJobStatus]:
        out = []
        for job_id, job in sorted(task["jobs"].items(), key=lambda kv: kv[1]["index"]):
            out.append(BackendJobStatus(
                job_id=job_id, phase=JobPhase(job["phase"]), held=job["held"],
                outputs=job.get("outputs", {}) if job["phase"] == "Done" else {},
                produced_contents=job.get("produced_contents", []) if job["phase"] == "Done" else [],
                exit_detail=job.get("exit_detail", "") if job["phase"] in ("Failed",) else ""))
        return out

    def poll_task(self, handle: TaskHandle) -> list[BackendJobStatus]:
        if not self._advance_on_poll:
            with self._lock:
                return self._snapshot(self._load(handle.external_id))
        with self._mutation(handle.external_id, required=False) as held:
            task = self._load(handle.external_id)
            if held:
                self._advance(task)
                self._save(handle.external_id, task)
            return self._snapshot(task)

    def release_jobs(self, handle: TaskHandle, job_ids: list[str]) -> None:
        with self._mutation(handle.external_id):
            task = self._load(handle.external_id)
            changed = False
            for job_id in job_ids:
                job = task["jobs"].get(job_id)
                if job is not None and job["held"]:
                    job["held"] = False
                    job["steps_in_phase"] = 0
                    task.setdefault("active", []).append(job_id)
                    changed = True
            if changed:
                self._save(handle.external_id, task)

    def cancel_task(self, handle: TaskHandle) -> None:
        with self._mutation(handle.external_id):
            task = self._load(handle.external_id)
            for job_id, job in task["jobs"].items():
                if job["phase"] not in ("Done", "Failed"):
                    job["phase"] = JobPhase.Failed.value
                    job["exit_detail"] = "cancelled"
                    self._emit(task, job_id)
            self._save(handle.external_id, task)

    def stream_status(self, handle: TaskHandle, after_seq: int = 0) -> tuple[int, list[BackendJobStatus]]:
        with self._lock:
            task = self._load(handle.external_id)
        current = task["seq"]
        if after_seq > current:  # backend state was rebuilt; replay everything
            after_seq = 0
        # seqs are contiguous from 1 and the log is never trimmed, so the
        # cursor is also a list offset
        messages = task["messages"][after_seq:]
        return current, [BackendJobStatus.from_dict(m["status"]) for m in messages]
