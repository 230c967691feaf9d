"""Coordinator: event-flow regulation.

Merging and prioritization happen structurally: publishers stamp role
defaults (terminal and abort events High, poll/status chatter Low), every
consumer's loop runs merge_pending over each consumed batch, and the bus
orders pending sets by priority. What remains for a running coordinator is
housekeeping on the durable backend: trimming fully-acked, aged-out events
so the persistent bus file does not grow without bound.
"""

from __future__ import annotations

import logging

from dds.bus.persistent import PersistentEventBus
from dds.agents.base import AgentRole, BaseAgent

log = logging.getLogger(__name__)

RETENTION_S = 3600.0


class CoordinatorAgent(BaseAgent):
    role = AgentRole.Coordinator
    event_types = ()

    def handle_event(self, event) -> None:  # no subscriptions
        raise NotImplementedError

    def lazy_poll(self) -> bool:
        if isinstance(self.bus, PersistentEventBus):
            trimmed = self._trim(self.bus)
            if trimmed:
                log.debug("coordinator trimmed %d aged events", trimmed)
        return False

    @staticmethod
    def _trim(bus: PersistentEventBus, retention_s: float = RETENTION_S) -> int:
        from dds._util import now_ms
        conn = bus._conn()
        cutoff = now_ms() - int(retention_s * 1000)
        cur = conn.execute(
            "DELETE FROM events WHERE created_at < ? AND NOT EXISTS ("
            " SELECT 1 FROM deliveries d WHERE d.seq = events.seq AND d.acked = 0)",
            (cutoff,))
        conn.execute("DELETE FROM deliveries WHERE seq NOT IN (SELECT seq FROM events)")
        return cur.rowcount
