"""Embedded storage engine: a single sqlite file, zero operational setup.

WAL mode plus BEGIN IMMEDIATE transactions give multi-process claim
atomicity; the per-row conditional UPDATE inside the transaction is what
actually enforces mutual exclusion, so the same statements stay correct on
engines without a database-wide write lock.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from typing import Iterable, Sequence

from dds._util import now_ms
from dds.errors import NotFound, StaleClaim, StoreUnavailable, VersionSkew
from dds.store.base import (
    CURRENT_RECORD_VERSION,
    ClaimTicket,
    Store,
    StoredRecord,
    lease_ms,
)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS records (
    kind TEXT NOT NULL,
    id TEXT NOT NULL,
    body TEXT NOT NULL,
    status TEXT NOT NULL,
    locked_by TEXT,
    locked_at INTEGER,
    lease_expires_at INTEGER,
    next_eligible_at INTEGER NOT NULL DEFAULT 0,
    updated_at INTEGER NOT NULL,
    created_at INTEGER NOT NULL,
    schema_version INTEGER NOT NULL,
    revision INTEGER NOT NULL DEFAULT 1,
    PRIMARY KEY (kind, id)
);
CREATE INDEX IF NOT EXISTS idx_records_scan ON records(kind, status, updated_at);
"""


def _row_to_record(row) -> StoredRecord:
    (kind, record_id, body, status, locked_by, locked_at, _lease, _elig,
     updated_at, created_at, schema_version, revision) = row
    return StoredRecord(
        kind=kind, record_id=record_id, body=json.loads(body), status=status,
        locked_by=locked_by, locked_at=locked_at, updated_at=updated_at,
        created_at=created_at, schema_version=schema_version, revision=revision)


_COLS = ("kind, id, body, status, locked_by, locked_at, lease_expires_at, "
         "next_eligible_at, updated_at, created_at, schema_version, revision")


class EmbeddedStore(Store):
    def __init__(self, path: str):
        self._path = path
        self._local = threading.local()
        try:
            with self._conn() as conn:
                conn.executescript(_SCHEMA)
        except sqlite3.Error as exc:
            raise StoreUnavailable(f"cannot open store at {path}: {exc}") from exc

    def _conn(self) -> sqlite3.Connection:
        # isolation_level=None: autocommit per statement, explicit BEGIN
        # IMMEDIATE where multi-statement atomicity matters.
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self._path, timeout=60.0, isolation_level=None)
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=NORMAL")
            self._local.conn = conn
        return conn

    # --- plain record operations -----------------------------------------

    def upsert(self, kind: str, record_id: str, body: dict, status: str,
               schema_version: int = CURRENT_RECORD_VERSION) -> int:
        now = now_ms()
        cur = self._conn().execute(
            """
            INSERT INTO records (kind, id, body, status, updated_at, created_at, schema_version)
            VALUES (?, ?, ?, ?, ?, ?, ?)
            ON CONFLICT(kind, id) DO UPDATE SET
                body = excluded.body,
                status = excluded.status,
                updated_at = excluded.updated_at,
                schema_version = excluded.schema_version,
                revision = records.revision + 1
            RETURNING revision
            """,
            (kind, record_id, json.dumps(body), status, now, now, schema_version))
        return cur.fetchone()[0]

    def upsert_many(self, kind: str, rows: list[tuple[str, dict, str]]) -> None:
        now = now_ms()
        conn = self._conn()
        try:
            conn.execute("BEGIN IMMEDIATE")
            conn.executemany(
                """
                INSERT INTO records (kind, id, body, status, updated_at, created_at, schema_version)
                VALUES (?, ?, ?, ?, ?, ?, ?)
                ON CONFLICT(kind, id) DO UPDATE SET
                    body = excluded.body,
                    status = excluded.status,
                    updated_at = excluded.updated_at,
                    revision = records.revision + 1
                """,
                [(kind, rid, json.dumps(body), status, now, now, CURRENT_RECORD_VERSION)
                 for rid, body, status in rows])
            conn.commit()
        except sqlite3.Error:
            conn.rollback()
            raise

    def fetch(self, kind: str, record_id: str) -> StoredRecord:
        row = self._conn().execute(
            f"SELECT {_COLS} FROM records WHERE kind = ? AND id = ?",
            (kind, record_id)).fetchone()
        if row is None:
            raise NotFound(kind, record_id)
        record = _row_to_record(row)
        if record.schema_version > CURRENT_RECORD_VERSION:
            raise VersionSkew(record.schema_version, CURRENT_RECORD_VERSION)
        return record

    def query(self, kind: str, statuses: Iterable[str] | None = None,
              prefix: str | None = None, limit: int | None = None) -> list[StoredRecord]:
        sql = f"SELECT {_COLS} FROM records WHERE kind = ?"
        args: list = [kind]
        if statuses is not None:
            statuses = list(statuses)
            sql += f" AND status IN ({','.join('?' for _ in statuses)})"
            args.extend(statuses)
        if prefix is not None:
            sql += " AND id >= ? AND id < ?"
            args.extend([prefix, prefix + "￿"])
        sql += " ORDER BY id"
        if limit is not None:
            sql += " LIMIT ?"
            args.append(limit)
        return [_row_to_record(r) for r in self._conn().execute(sql, args).fetchall()]

    def delete(self, kind: str, record_id: str) -> None:
        self._conn().execute("DELETE FROM records WHERE kind = ? AND id = ?", (kind, record_id))

    def count_by_status(self, kind: str) -> dict[str, int]:
        rows = self._conn().execute(
            "SELECT status, COUNT(*) FROM records WHERE kind = ? GROUP BY status",
            (kind,)).fetchall()
        return {status: count for status, count in rows}

    # --- claims ------------------------------------------------------------

    def claim_idle(self, kind: str, statuses: Iterable[str], idle_threshold: float,
                   limit: int, worker_id: str, lease: float | None = None) -> ClaimTicket:
        if idle_threshold < 0 or limit <= 0:
            raise ValueError("idle_threshold must be >= 0 and limit > 0")
        statuses = list(statuses)
        now = now_ms()
        expiry = now + lease_ms(idle_threshold, lease)
        idle_cutoff = now - int(idle_threshold * 1000)
        conn = self._conn()
        claimed: list[str] = []
        try:
            conn.execute("BEGIN IMMEDIATE")
            marks = ",".join("?" for _ in statuses)
            candidates = conn.execute(
                f"""
                SELECT id FROM records
                WHERE kind = ? AND status IN ({marks})
                  AND updated_at <= ? AND next_eligible_at <= ?
                  AND (locked_by IS NULL OR lease_expires_at <= ?)
                ORDER BY updated_at ASC
                LIMIT ?
                """,
                [kind, *statuses, idle_cutoff, now, now, limit]).fetchall()
            for (record_id,) in candidates:
                cur = conn.execute(
                    f"""
                    UPDATE records SET locked_by = ?, locked_at = ?, lease_expires_at = ?
                    WHERE kind = ? AND id = ? AND status IN ({marks})
                      AND updated_at <= ? AND next_eligible_at <= ?
                      AND (locked_by IS NULL OR lease_expires_at <= ?)
                    """,
                    [worker_id, now, expiry, kind, record_id, *statuses,
                     idle_cutoff, now, now])
                if cur.rowcount:
                    claimed.append(record_id)
            conn.commit()
        except sqlite3.Error:
            conn.rollback()
            raise
        return ClaimTicket(worker_id, kind, claimed, expiry)

    def claim_ids(self, kind: str, record_ids: Sequence[str], worker_id: str,
                  lease: float, statuses: Iterable[str] | None = None) -> ClaimTicket:
        now = now_ms()
        expiry = now + max(1, int(lease * 1000))
        conn = self._conn()
        claimed: list[str] = []
        status_sql, status_args = "", []
        if statuses is not None:
            statuses = list(statuses)
            status_sql = f" AND status IN ({','.join('?' for _ in statuses)})"
            status_args = statuses
        try:
            conn.execute("BEGIN IMMEDIATE")
            for record_id in record_ids:
                cur = conn.execute(
                    f"""
                    UPDATE records SET locked_by = ?, locked_at = ?, lease_expires_at = ?
                    WHERE kind = ? AND id = ?{status_sql}
                      AND (locked_by IS NULL OR lease_expires_at <= ?)
                    """,
                    [worker_id, now, expiry, kind, record_id, *status_args, now])
                if cur.rowcount:
                    claimed.append(record_id)
            conn.commit()
        except sqlite3.Error:
            conn.rollback()
            raise
        return ClaimTicket(worker_id, kind, claimed, expiry)

    def release_claim(self, ticket: ClaimTicket, record_id: str, new_status: str,
                      body: dict | None = None, defer: float = 0.0) -> None:
        now = now_ms()
        conn = self._conn()
        sets = ["locked_by = NULL", "locked_at = NULL", "lease_expires_at = NULL",
                "status = ?", "updated_at = ?", "next_eligible_at = ?",
                "revision = revision + 1"]
        args: list = [new_status, now, now + int(defer * 1000)]
        if body is not None:
            sets.append("body = ?")
            args.append(json.dumps(body))
        cur = conn.execute(
            f"""
            UPDATE records SET {', '.join(sets)}
            WHERE kind = ? AND id = ? AND locked_by = ? AND lease_expires_at > ?
            """,
            [*args, ticket.kind, record_id, ticket.worker_id, now])
        if cur.rowcount == 0:
            raise StaleClaim(
                f"{ticket.kind}/{record_id}: claim by {ticket.worker_id} expired or not held")

    def close(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None
