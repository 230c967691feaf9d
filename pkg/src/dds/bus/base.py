"""Event bus interface implemented by the three interchangeable backends."""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Iterable

from dds.bus.events import Event, EventType, Subscription


class EventBus(ABC):
    """Publish-subscribe with per-backend durability.

    local: in-process, lost on crash. persistent: durably stored before the
    publish returns, at-least-once per consumer group. socket: best-effort
    delivery, may drop under partition. Within a pending set, consume hands
    out higher-priority events first; batches go to exactly one caller per
    group (competing consumers).
    """

    @abstractmethod
    def subscribe(self, subscriber_id: str, event_types: Iterable[EventType],
                  group: str | None = None) -> Subscription:
        """Register interest; `group` defaults to the subscriber id."""

    @abstractmethod
    def publish(self, event: Event) -> None:
        """Returns once the backend's durability contract is met."""

    def publish_many(self, events: list[Event]) -> None:
        for event in events:
            self.publish(event)

    @abstractmethod
    def consume(self, subscription: Subscription, max_batch: int) -> list[Event]:
        """Up to max_batch pending events of the subscribed types."""

    @abstractmethod
    def ack(self, subscription: Subscription, event_id: str) -> None:
        """Persistent backend: suppress redelivery. No-op elsewhere."""

    def close(self) -> None:
        pass
