"""Event model for the publish-subscribe backbone."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

from dds._util import new_id, now_ms


class EventType(str, Enum):
    NewRequest = "NewRequest"
    TransformReady = "TransformReady"
    SubmitTask = "SubmitTask"
    PollTask = "PollTask"
    JobStatus = "JobStatus"
    ContentAvailable = "ContentAvailable"
    TriggerRelease = "TriggerRelease"
    WorkTerminal = "WorkTerminal"
    AbortRequest = "AbortRequest"

    def __str__(self) -> str:
        return self.value


class Priority(IntEnum):
    Low = 0
    Normal = 1
    High = 2


# Status/poll/trigger chatter merges; control and terminal events never do:
# losing an abort would violate operator intent.
MERGEABLE_TYPES = frozenset({EventType.PollTask, EventType.JobStatus, EventType.TriggerRelease})

_PRIORITY_MAP = {
    EventType.WorkTerminal: Priority.High,
    EventType.AbortRequest: Priority.High,
    EventType.JobStatus: Priority.Low,
    EventType.PollTask: Priority.Low,
}


def default_priority(event_type: EventType) -> Priority:
    return _PRIORITY_MAP.get(event_type, Priority.Normal)


@dataclass(frozen=True)
class Event:
    event_type: EventType
    scope_key: str                       # affected object, e.g. request:R1, work:R1:w2
    payload: dict = field(default_factory=dict)
    priority: Priority | None = None     # None = role default for the type
    event_id: str = field(default_factory=lambda: new_id("ev"))
    created_at: int = field(default_factory=now_ms)
    seq: int = 0                         # backend-assigned tiebreaker

    def __post_init__(self):
        if not self.scope_key:
            raise ValueError("scope_key must be non-empty")
        if self.priority is None:
            object.__setattr__(self, "priority", default_priority(self.event_type))

    def with_seq(self, seq: int) -> "Event":
        return replace(self, seq=seq)


def sort_pending(events: list[Event]) -> list[Event]:
    """Stable delivery order: priority desc, then created_at asc, then seq."""
    return sorted(events, key=lambda e: (-int(e.priority), e.created_at, e.seq))


def event_to_dict(e: Event) -> dict:
    return {
        "event_id": e.event_id,
        "event_type": e.event_type.value,
        "scope_key": e.scope_key,
        "priority": int(e.priority),
        "payload": e.payload,
        "created_at": e.created_at,
        "seq": e.seq,
    }


def event_from_dict(doc: dict) -> Event:
    return Event(
        event_type=EventType(doc["event_type"]),
        scope_key=doc["scope_key"],
        payload=doc.get("payload", {}),
        priority=Priority(doc.get("priority", 1)),
        event_id=doc.get("event_id", ""),
        created_at=doc.get("created_at", 0),
        seq=doc.get("seq", 0),
    )


@dataclass(frozen=True)
class Subscription:
    subscriber_id: str
    group: str
    event_types: frozenset[EventType]
