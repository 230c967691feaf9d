"""The hybrid event-driven + lazy-poll agent loop.

Every handler execution is claim-gated, whichever path triggered it: an
event leads to claim_ids on the referenced record, the lazy poll leads to
claim_idle over the role's record kinds. Claims plus idempotent handlers
are the duplicate-execution guard; the poll path alone is sufficient for
liveness, so lost or dropped events never wedge a workflow.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from enum import Enum

from dds._util import new_id
from dds.bus.base import EventBus
from dds.bus.events import Event, EventType
from dds.bus.merge import merge_pending
from dds.config import AgentLoopConfig, EngineConfig
from dds.errors import BusUnavailable, StaleClaim, StoreUnavailable, UnknownDelivery
from dds.store.base import ClaimTicket, Store

log = logging.getLogger(__name__)

BACKOFF_BASE = 1.0
BACKOFF_CAP = 60.0

# Pickup threshold: fresh actionable records are claimable almost
# immediately; claims, not idle time, prevent duplicate execution.
PICKUP_THRESHOLD = 0.02


class AgentRole(str, Enum):
    Clerk = "clerk"
    Transformer = "transformer"
    Submitter = "submitter"
    Poller = "poller"
    Finisher = "finisher"
    Conductor = "conductor"
    Receiver = "receiver"
    Trigger = "trigger"
    Coordinator = "coordinator"
    # composite runtime role: submitter + poller + finisher in one loop,
    # dispatched by work state (they share the same claim anyway)
    Carrier = "carrier"

    def __str__(self) -> str:
        return self.value


class BaseAgent:
    """One role's loop; replicas coordinate exclusively via claims + bus."""

    role: AgentRole
    event_types: tuple[EventType, ...] = ()

    def __init__(self, config: EngineConfig, store: Store, bus: EventBus | None,
                 backends: dict | None = None, worker_id: str | None = None):
        self.config = config
        self.loop_cfg: AgentLoopConfig = config.agents
        self.store = store
        self.bus = bus if self.loop_cfg.event_driven else None
        self.backends = backends or {}
        self.worker_id = worker_id or new_id(f"{self.role.value}")
        self._sub = None
        if self.bus is not None and self.event_types:
            self._sub = self.bus.subscribe(self.worker_id, self.event_types,
                                           group=self.role.value)
        self._next_poll = 0.0
        self._backoff = 0.0
        self._rng = random.Random()

    # --- the loop -----------------------------------------------------------

    def run(self, stop: threading.Event, wake: float = 0.05) -> None:
        """Service loop: tick until `stop` is set, backing off on errors."""
        while not stop.is_set():
            try:
                busy = self.tick()
                self._backoff = 0.0
            except (StoreUnavailable, BusUnavailable, OSError) as exc:
                self._backoff = min(BACKOFF_CAP, (self._backoff or BACKOFF_BASE) * 2)
                delay = self._backoff * (0.5 + self._rng.random())
                log.warning("%s: transient backend error (%s); backing off %.1fs",
                            self.worker_id, exc, delay)
                stop.wait(delay)
                continue
            except Exception:
                # handler bug: the claim lease will expire and another
                # replica resumes; do not tight-loop
                log.exception("%s: handler error", self.worker_id)
                stop.wait(BACKOFF_BASE)
                continue
            if not busy:
                stop.wait(wake)

    def tick(self) -> bool:
        """One iteration. Returns True when it did real work."""
        busy = False
        if self._sub is not None:
            batch = self.bus.consume(self._sub, self.loop_cfg.batch_limit)
            if batch:
                busy = True
                merged = merge_pending(batch)
                for event in merged:
                    try:
                        self.handle_event(event)
                    except StaleClaim:
                        pass  # another replica owns it; their lease governs
                for event in batch:
                    try:
                        self.bus.ack(self._sub, event.event_id)
                    except UnknownDelivery:
                        pass
        now = time.monotonic()
        if now >= self._next_poll:
            self._next_poll = now + self.loop_cfg.poll_interval
            try:
                if self.lazy_poll():
                    busy = True
            except StaleClaim:
                pass
        return busy

    # --- per-role hooks -----------------------------------------------------

    def handle_event(self, event: Event) -> None:
        raise NotImplementedError

    def lazy_poll(self) -> bool:
        """Claim and handle idle records; returns True when any were found."""
        raise NotImplementedError

    # --- shared helpers -------------------------------------------------------

    def claim_one(self, kind: str, record_id: str, statuses=None) -> ClaimTicket | None:
        ticket = self.store.claim_ids(kind, [record_id], self.worker_id,
                                      lease=self.loop_cfg.lease, statuses=statuses)
        return ticket if ticket.record_ids else None

    def claim_batch(self, kind: str, statuses, threshold: float | None = None) -> ClaimTicket:
        return self.store.claim_idle(
            kind, statuses,
            PICKUP_THRESHOLD if threshold is None else threshold,
            self.loop_cfg.batch_limit, self.worker_id, lease=self.loop_cfg.lease)

    def publish(self, event: Event) -> None:
        if self.bus is None:
            return
        try:
            self.bus.publish(event)
        except BusUnavailable:
            log.debug("%s: bus unavailable, relying on lazy poll", self.worker_id)
