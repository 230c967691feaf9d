"""Publish-subscribe backbone with three interchangeable backends."""

from dds.bus.base import EventBus
from dds.bus.events import (
    Event,
    EventType,
    MERGEABLE_TYPES,
    Priority,
    Subscription,
    default_priority,
    sort_pending,
)
from dds.bus.local import LocalEventBus
from dds.bus.merge import merge_pending
from dds.bus.persistent import PersistentEventBus
from dds.bus.socket import SocketBusServer, SocketEventBus


def make_bus(config) -> EventBus:
    """Instantiate the backend selected by `event_bus.backend`."""
    backend = config.bus.backend
    if backend == "local":
        return LocalEventBus()
    if backend == "persistent":
        return PersistentEventBus(config.bus_path, config.bus.visibility_timeout)
    if backend == "socket":
        return SocketEventBus(config.bus.host, config.bus.port)
    raise ValueError(f"unknown event_bus.backend {backend!r}")


__all__ = [
    "Event", "EventType", "Priority", "Subscription", "MERGEABLE_TYPES",
    "default_priority", "sort_pending", "merge_pending", "EventBus",
    "LocalEventBus", "PersistentEventBus", "SocketEventBus", "SocketBusServer",
    "make_bus",
]
