"""Durable store for requests, works, jobs, contents and messages."""

from dds.store.base import (
    CONTENT,
    CURRENT_RECORD_VERSION,
    JOB,
    KINDS,
    MESSAGE,
    REQUEST,
    WORK,
    ClaimTicket,
    Store,
    StoredRecord,
)
from dds.store.embedded import EmbeddedStore
from dds.store.migrate import migrate, register_migration
from dds.store.server import ServerStore


def make_store(config) -> Store:
    """Instantiate the engine selected by `store.engine`."""
    if config.store.engine == "embedded":
        return EmbeddedStore(config.store.path)
    if config.store.engine == "server":
        return ServerStore(config.store.url)
    raise ValueError(f"unknown store.engine {config.store.engine!r}")


__all__ = [
    "Store", "StoredRecord", "ClaimTicket", "EmbeddedStore", "ServerStore",
    "make_store", "migrate", "register_migration",
    "REQUEST", "WORK", "JOB", "CONTENT", "MESSAGE", "KINDS", "CURRENT_RECORD_VERSION",
]
