"""Conductor: at-least-once delivery of terminal-work notifications.

The finisher writes an outbox record per terminal work (exactly once, it is
claim-guarded); the conductor delivers outbox records to the configured
HTTP callback, retrying with backoff. An unreachable endpoint never blocks
other agents: delivery failures just defer the outbox record.
"""

from __future__ import annotations

import logging

import httpx

from dds.bus.events import Event, EventType
from dds.errors import NotFound
from dds.agents.base import AgentRole, BaseAgent
from dds.store import MESSAGE

log = logging.getLogger(__name__)


class ConductorAgent(BaseAgent):
    role = AgentRole.Conductor
    event_types = (EventType.WorkTerminal,)

    def handle_event(self, event: Event) -> None:
        wkey = event.payload.get("work_key")
        if not wkey or not self.config.notify.callback_url:
            return
        # outbox ids embed the attempt; probe a small window
        for record in self.store.query(MESSAGE, statuses=["outbox"],
                                       prefix=f"notify:{wkey}:"):
            ticket = self.claim_one(MESSAGE, record.record_id, statuses=["outbox"])
            if ticket is not None:
                self._deliver(ticket, record.record_id)

    def lazy_poll(self) -> bool:
        if not self.config.notify.callback_url:
            return False
        ticket = self.claim_batch(MESSAGE, ["outbox"])
        for record_id in ticket.record_ids:
            self._deliver(ticket, record_id)
        return bool(ticket.record_ids)

    def _deliver(self, ticket, record_id: str) -> None:
        try:
            record = self.store.fetch(MESSAGE, record_id)
        except NotFound:
            return
        body = dict(record.body)
        attempts = body.get("delivery_attempts", 0)
        payload = {k: body.get(k) for k in ("work_id", "request_id", "work_key",
                                            "state", "outputs", "attempt")}
        try:
            response = httpx.post(self.config.notify.callback_url, json=payload, timeout=5.0)
            ok = 200 <= response.status_code < 300
        except httpx.HTTPError as exc:
            log.debug("notification for %s failed: %s", record_id, exc)
            ok = False
        if ok:
            self.store.release_claim(ticket, record_id, "delivered", body=body)
        else:
            body["delivery_attempts"] = attempts + 1
            delay = min(self.config.notify.retry_cap,
                        self.config.notify.retry_base * (2 ** min(attempts, 10)))
            self.store.release_claim(ticket, record_id, "outbox", body=body, defer=delay)
