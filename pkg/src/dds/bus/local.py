"""In-process event bus: fast, single-process, nothing survives a crash."""

from __future__ import annotations

import itertools
import threading
from typing import Iterable

from dds.bus.base import EventBus
from dds.bus.events import Event, EventType, Subscription, sort_pending


class LocalEventBus(EventBus):
    def __init__(self):
        self._lock = threading.Lock()
        self._pending: dict[str, list[Event]] = {}        # group -> pending
        self._types: dict[str, set[EventType]] = {}       # group -> union of member filters
        self._seq = itertools.count(1)

    def subscribe(self, subscriber_id: str, event_types: Iterable[EventType],
                  group: str | None = None) -> Subscription:
        group = group or subscriber_id
        types = frozenset(event_types)
        with self._lock:
            self._pending.setdefault(group, [])
            self._types.setdefault(group, set()).update(types)
        return Subscription(subscriber_id, group, types)

    def publish(self, event: Event) -> None:
        event = event.with_seq(next(self._seq))
        with self._lock:
            for group, types in self._types.items():
                if event.event_type in types:
                    self._pending[group].append(event)

    def consume(self, subscription: Subscription, max_batch: int) -> list[Event]:
        with self._lock:
            queue = self._pending.get(subscription.group, [])
            ordered = sort_pending(queue)
            batch, rest = [], []
            for event in ordered:
                if len(batch) < max_batch and event.event_type in subscription.event_types:
                    batch.append(event)
                else:
                    rest.append(event)
            self._pending[subscription.group] = rest
            return batch

    def ack(self, subscription: Subscription, event_id: str) -> None:
        pass  # delivery is consumption on the in-memory backend
