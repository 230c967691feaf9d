"""Durable store contract: records, claims and leases.

claim_idle is the single linearization point for work distribution: two
concurrent claimers never receive overlapping records, and a claim expires
(lease) so a crashed agent cannot orphan a record forever. All timestamps
are store-generated so idle comparisons are immune to clock skew between
agents.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

# Record kinds.
REQUEST = "Request"
WORK = "Work"
JOB = "Job"
CONTENT = "Content"
MESSAGE = "Message"
KINDS = (REQUEST, WORK, JOB, CONTENT, MESSAGE)

CURRENT_RECORD_VERSION = 2

# Lease default relative to the idle threshold used for the claim.
LEASE_FACTOR = 10


@dataclass
class StoredRecord:
    kind: str
    record_id: str
    body: dict
    status: str
    locked_by: str | None = None
    locked_at: int | None = None
    updated_at: int = 0
    created_at: int = 0
    schema_version: int = CURRENT_RECORD_VERSION
    revision: int = 1


@dataclass
class ClaimTicket:
    worker_id: str
    kind: str
    record_ids: list[str] = field(default_factory=list)
    claim_expiry: int = 0  # ms epoch

    def __bool__(self) -> bool:
        return bool(self.record_ids)


class Store(ABC):
    @abstractmethod
    def upsert(self, kind: str, record_id: str, body: dict, status: str,
               schema_version: int = CURRENT_RECORD_VERSION) -> int:
        """Write a record revision; returns the new revision number."""

    @abstractmethod
    def fetch(self, kind: str, record_id: str) -> StoredRecord:
        """Latest committed revision. NotFound / VersionSkew on failure."""

    @abstractmethod
    def query(self, kind: str, statuses: Iterable[str] | None = None,
              prefix: str | None = None, limit: int | None = None) -> list[StoredRecord]:
        """Records of a kind, optionally filtered by status set and id prefix."""

    @abstractmethod
    def claim_idle(self, kind: str, statuses: Iterable[str], idle_threshold: float,
                   limit: int, worker_id: str, lease: float | None = None) -> ClaimTicket:
        """Atomically lock up to `limit` idle, unclaimed records.

        A record qualifies when its status is in `statuses`, it was last
        updated more than `idle_threshold` seconds ago, it is not deferred,
        and no live (unexpired) claim holds it. The lease defaults to
        LEASE_FACTOR x idle_threshold.
        """

    @abstractmethod
    def claim_ids(self, kind: str, record_ids: Sequence[str], worker_id: str,
                  lease: float, statuses: Iterable[str] | None = None) -> ClaimTicket:
        """Atomically lock the given records (skipping any already claimed).

        Same exclusion contract as claim_idle, without the idle filter: used
        by event-triggered handlers, which must still win the claim before
        touching a record.
        """

    @abstractmethod
    def release_claim(self, ticket: ClaimTicket, record_id: str, new_status: str,
                      body: dict | None = None, defer: float = 0.0) -> None:
        """Unlock + set status (and optionally body) in one atomic step.

        `defer` makes the record invisible to claim_idle for that many
        seconds, used for pacing retries. Raises StaleClaim if the ticket
        expired or the record is no longer held.
        """

    @abstractmethod
    def delete(self, kind: str, record_id: str) -> None: ...

    @abstractmethod
    def count_by_status(self, kind: str) -> dict[str, int]: ...

    # bulk helpers used on large job sets; engines may override with
    # something faster than a loop
    def upsert_many(self, kind: str, rows: list[tuple[str, dict, str]]) -> None:
        for record_id, body, status in rows:
            self.upsert(kind, record_id, body, status)

    def close(self) -> None:
        pass


def lease_ms(idle_threshold: float, lease: float | None) -> int:
    if lease is None:
        lease = LEASE_FACTOR * idle_threshold
    return max(1, int(lease * 1000))
