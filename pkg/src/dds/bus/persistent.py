"""Durable event bus over a sqlite file: at-least-once per consumer group.

Events are committed before publish returns. A consume marks the batch
in-flight for the caller's group; an unacked delivery is handed out again
once its visibility timeout lapses, which is what makes a consumer crash
between consume and ack safe. Works across processes via sqlite's file
locking.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from typing import Iterable

from dds._util import now_ms
from dds.bus.base import EventBus
from dds.bus.events import Event, EventType, Subscription, event_from_dict
from dds.errors import UnknownDelivery

_SCHEMA = """
CREATE TABLE IF NOT EXISTS events (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    event_id TEXT UNIQUE NOT NULL,
    event_type TEXT NOT NULL,
    scope_key TEXT NOT NULL,
    priority INTEGER NOT NULL,
    payload TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_events_type ON events(event_type);
CREATE TABLE IF NOT EXISTS deliveries (
    group_name TEXT NOT NULL,
    seq INTEGER NOT NULL,
    delivered_at INTEGER NOT NULL,
    acked INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY (group_name, seq)
);
"""


class PersistentEventBus(EventBus):
    def __init__(self, path: str, visibility_timeout: float = 30.0):
        self._path = path
        self._visibility_ms = int(visibility_timeout * 1000)
        self._local = threading.local()
        with self._conn() as conn:
            conn.executescript(_SCHEMA)

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self._path, timeout=30.0, isolation_level=None)
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=NORMAL")
            self._local.conn = conn
        return conn

    def subscribe(self, subscriber_id: str, event_types: Iterable[EventType],
                  group: str | None = None) -> Subscription:
        return Subscription(subscriber_id, group or subscriber_id, frozenset(event_types))

    def publish(self, event: Event) -> None:
        self.publish_many([event])

    def publish_many(self, events: list[Event]) -> None:
        rows = [
            (e.event_id, e.event_type.value, e.scope_key, int(e.priority),
             json.dumps(e.payload), e.created_at)
            for e in events
        ]
        conn = self._conn()
        try:
            conn.execute("BEGIN IMMEDIATE")
            conn.executemany(
                "INSERT OR IGNORE INTO events "
                "(event_id, event_type, scope_key, priority, payload, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?)", rows)
            conn.commit()
        except sqlite3.Error:
            conn.rollback()
            raise

    def consume(self, subscription: Subscription, max_batch: int) -> list[Event]:
        if not subscription.event_types:
            return []
        now = now_ms()
        marks = ",".join("?" for _ in subscription.event_types)
        types = [t.value for t in subscription.event_types]
        conn = self._conn()
        try:
            conn.execute("BEGIN IMMEDIATE")
            rows = conn.execute(
                f"""
                SELECT e.seq, e.event_id, e.event_type, e.scope_key, e.priority,
                       e.payload, e.created_at
                FROM events e
                LEFT JOIN deliveries d ON d.group_name = ? AND d.seq = e.seq
                WHERE e.event_type IN ({marks})
                  AND (d.seq IS NULL OR (d.acked = 0 AND d.delivered_at <= ?))
                ORDER BY e.priority DESC, e.created_at ASC, e.seq ASC
                LIMIT ?
                """,
                [subscription.group, *types, now - self._visibility_ms, max_batch],
            ).fetchall()
            conn.executemany(
                "INSERT OR REPLACE INTO deliveries (group_name, seq, delivered_at, acked) "
                "VALUES (?, ?, ?, 0)",
                [(subscription.group, row[0], now) for row in rows])
            conn.commit()
        except BaseException:
            conn.rollback()
            raise
        return [
            event_from_dict({
                "seq": seq, "event_id": event_id, "event_type": event_type,
                "scope_key": scope_key, "priority": priority,
                "payload": json.loads(payload), "created_at": created_at,
            })
            for seq, event_id, event_type, scope_key, priority, payload, created_at in rows
        ]

    def ack(self, subscription: Subscription, event_id: str) -> None:
        cur = self._conn().execute(
            "UPDATE deliveries SET acked = 1 "
            "WHERE group_name = ? AND acked = 0 AND seq = "
            "(SELECT seq FROM events WHERE event_id = ?)",
            (subscription.group, event_id))
        if cur.rowcount == 0:
            raise UnknownDelivery(event_id)

    def pending_count(self, group: str) -> int:
        conn = self._conn()
        row = conn.execute(
            "SELECT COUNT(*) FROM events e LEFT JOIN deliveries d "
            "ON d.group_name = ? AND d.seq = e.seq WHERE d.seq IS NULL OR d.acked = 0",
            (group,)).fetchone()
        return row[0]

    def close(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None
