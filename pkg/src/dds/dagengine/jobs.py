"""Job and content records used by the dependency engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from dds._util import now_ms


class JobState(str, Enum):
    Waiting = "Waiting"
    Released = "Released"
    Running = "Running"
    Done = "Done"
    Failed = "Failed"

    def __str__(self) -> str:
        return self.value


JOB_TERMINAL = frozenset({JobState.Done, JobState.Failed})


class Availability(str, Enum):
    Missing = "Missing"
    Staging = "Staging"
    Available = "Available"

    def __str__(self) -> str:
        return self.value


# Forward-only ordering of availability states.
_AVAILABILITY_RANK = {Availability.Missing: 0, Availability.Staging: 1, Availability.Available: 2}


@dataclass(slots=True)
class JobNode:
    job_id: str
    parent_work: str
    depends_on: frozenset[str] = frozenset()
    state: JobState = JobState.Waiting
    required_contents: frozenset[str] = frozenset()
    args: object = None
    outputs: dict = field(default_factory=dict)
    exit_detail: str = ""

    def __post_init__(self):
        if self.job_id in self.depends_on:
            raise ValueError(f"job {self.job_id} depends on itself")


@dataclass(slots=True)
class ContentItem:
    content_id: str
    collection: str
    name: str
    size_bytes: int = 0
    availability: Availability = Availability.Missing
    registered_at: int = field(default_factory=now_ms)

    def advance(self, target: Availability) -> "ContentItem":
        """Move availability forward; backwards moves are rejected."""
        if _AVAILABILITY_RANK[target] < _AVAILABILITY_RANK[self.availability]:
            raise ValueError(
                f"content {self.content_id}: availability cannot move {self.availability} -> {target}")
        self.availability = target
        return self


def job_to_dict(j: JobNode) -> dict:
    return {
        "job_id": j.job_id,
        "parent_work": j.parent_work,
        "depends_on": sorted(j.depends_on),
        "state": j.state.value,
        "required_contents": sorted(j.required_contents),
        "args": j.args,
        "outputs": j.outputs,
        "exit_detail": j.exit_detail,
    }


def job_from_dict(doc: dict) -> JobNode:
    return JobNode(
        job_id=doc["job_id"],
        parent_work=doc["parent_work"],
        depends_on=frozenset(doc.get("depends_on", ())),
        state=JobState(doc.get("state", "Waiting")),
        required_contents=frozenset(doc.get("required_contents", ())),
        args=doc.get("args"),
        outputs=doc.get("outputs", {}),
        exit_detail=doc.get("exit_detail", ""),
    )


def content_to_dict(c: ContentItem) -> dict:
    return {
        "content_id": c.content_id,
        "collection": c.collection,
        "name": c.name,
        "size_bytes": c.size_bytes,
        "availability": c.availability.value,
        "registered_at": c.registered_at,
    }


def content_from_dict(doc: dict) -> ContentItem:
    return ContentItem(
        content_id=doc["content_id"],
        collection=doc["collection"],
        name=doc["name"],
        size_bytes=doc.get("size_bytes", 0),
        availability=Availability(doc.get("availability", "Missing")),
        registered_at=doc.get("registered_at", 0),
    )
