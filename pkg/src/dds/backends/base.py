"""Pluggable execution interface abstracting external workload systems.

The interface carries job-level hold/release so the engine, not the
backend, gates job starts: held jobs are submitted but only become eligible
through release_jobs. poll_task is the repeatable source of truth;
stream_status is the low-latency channel and may emit duplicates.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum

from dds.model.work import TaskHandle


class JobPhase(str, Enum):
    Queued = "Queued"
    Running = "Running"
    Done = "Done"
    Failed = "Failed"

    def __str__(self) -> str:
        return self.value


PHASE_TERMINAL = frozenset({JobPhase.Done, JobPhase.Failed})


@dataclass(frozen=True)
class JobSubmission:
    job_id: str
    index: int
    args: object = None
    held: bool = False


@dataclass
class BackendJobStatus:
    job_id: str
    phase: JobPhase
    held: bool = False
    outputs: dict = field(default_factory=dict)
    produced_contents: list = field(default_factory=list)
    exit_detail: str = ""

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id, "phase": self.phase.value, "held": self.held,
            "outputs": self.outputs, "produced_contents": self.produced_contents,
            "exit_detail": self.exit_detail,
        }

    @staticmethod
    def from_dict(doc: dict) -> "BackendJobStatus":
        return BackendJobStatus(
            job_id=doc["job_id"], phase=JobPhase(doc["phase"]), held=doc.get("held", False),
            outputs=doc.get("outputs", {}), produced_contents=doc.get("produced_contents", []),
            exit_detail=doc.get("exit_detail", ""))


class WorkloadBackend(ABC):
    name: str

    @abstractmethod
    def submit_task(self, executable: str, jobs: list[JobSubmission],
                    idempotency_key: str, params: dict | None = None) -> TaskHandle:
        """Start a task; duplicate idempotency keys return the original
        handle with no new execution. Held jobs wait for release_jobs."""

    @abstractmethod
    def poll_task(self, handle: TaskHandle) -> list[BackendJobStatus]:
        """Read-only, repeatable snapshot of every job's phase."""

    @abstractmethod
    def release_jobs(self, handle: TaskHandle, job_ids: list[str]) -> None:
        """held -> eligible, exactly once per job; extra calls are no-ops."""

    @abstractmethod
    def cancel_task(self, handle: TaskHandle) -> None:
        """Drive all non-terminal jobs to Failed with exit_detail 'cancelled'."""

    @abstractmethod
    def stream_status(self, handle: TaskHandle, after_seq: int = 0) -> tuple[int, list[BackendJobStatus]]:
        """Status messages for phase changes after `after_seq`.

        Returns (new_cursor, messages). At-least-once: a caller that reuses
        an old cursor sees the same messages again. A cursor greater than
        the backend's current sequence (backend restarted) resets to zero.
        """

    def close(self) -> None:
        pass
