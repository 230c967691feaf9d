"""Exception types shared across the engine."""

from __future__ import annotations


class DdsError(Exception):
    """Base class for all engine errors."""


# --- core model ---------------------------------------------------------


class IllegalTransition(DdsError):
    """A lifecycle event that has no entry in the transition table.

    Signals an orchestration bug; the caller's spec is left unmodified.
    """

    def __init__(self, state, event):
        self.state = state
        self.event = event
        super().__init__(f"illegal transition: {state} + {event}")


class UnresolvedParameter(DdsError):
    def __init__(self, slot: str, reason: str = ""):
        self.slot = slot
        super().__init__(f"unresolved parameter slot {slot!r}" + (f": {reason}" if reason else ""))


class UnsupportedVersion(DdsError):
    def __init__(self, version: int, supported: tuple[int, ...]):
        self.version = version
        self.supported = supported
        super().__init__(f"unsupported schema_version {version}, supported: {supported}")


# --- dag engine ---------------------------------------------------------


class CycleDetected(DdsError):
    def __init__(self, job_ids):
        self.job_ids = list(job_ids)
        super().__init__(f"dependency cycle among jobs: {self.job_ids}")


class UnknownJob(DdsError):
    def __init__(self, job_id: str):
        self.job_id = job_id
        super().__init__(f"unknown job {job_id!r}")


class UnknownContent(DdsError):
    def __init__(self, content_id: str):
        self.content_id = content_id
        super().__init__(f"unknown content {content_id!r}")


# --- event bus ----------------------------------------------------------


class BusUnavailable(DdsError):
    """The socket backend could not reach its bus endpoint."""


class UnknownDelivery(DdsError):
    def __init__(self, event_id: str):
        self.event_id = event_id
        super().__init__(f"no delivery recorded for event {event_id!r}")


# --- persistence --------------------------------------------------------


class StoreUnavailable(DdsError):
    """The storage engine could not be reached or opened."""


class StaleClaim(DdsError):
    """The claim ticket expired; side effects must be discarded or idempotent."""


class NotFound(DdsError):
    def __init__(self, kind: str, record_id: str):
        self.kind = kind
        self.record_id = record_id
        super().__init__(f"no {kind} record {record_id!r}")


class VersionSkew(DdsError):
    def __init__(self, stored: int, supported: int):
        self.stored = stored
        self.supported = supported
        super().__init__(f"record schema_version {stored} is newer than supported {supported}")


class NoMigrationPath(DdsError):
    def __init__(self, from_version: int, to_version: int):
        super().__init__(f"no registered migration path {from_version} -> {to_version}")


# --- workload backends --------------------------------------------------


class PayloadUnresolvable(DdsError):
    """The executable payload cannot be resolved on this backend."""


class BackendUnavailable(DdsError):
    """The workload backend refused or failed the call; retryable."""


class UnknownHandle(DdsError):
    def __init__(self, handle):
        self.handle = handle
        super().__init__(f"unknown task handle {handle!r}")
