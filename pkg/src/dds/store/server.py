"""Server-backed storage engine over SQLAlchemy Core.

Accepts any relational URL SQLAlchemy can dial. Claim atomicity comes from
per-row conditional UPDATEs whose WHERE clause re-checks the unclaimed
condition; a row's claim goes to whichever transaction's UPDATE commits
first, so no database-wide lock is assumed.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import sqlalchemy as sa

from dds._util import now_ms
from dds.errors import NotFound, StaleClaim, StoreUnavailable, VersionSkew
from dds.store.base import (
    CURRENT_RECORD_VERSION,
    ClaimTicket,
    Store,
    StoredRecord,
    lease_ms,
)

_metadata = sa.MetaData()

records = sa.Table(
    "records", _metadata,
    sa.Column("kind", sa.String(16), primary_key=True),
    sa.Column("id", sa.String(256), primary_key=True),
    sa.Column("body", sa.Text, nullable=False),
    sa.Column("status", sa.String(32), nullable=False, index=True),
    sa.Column("locked_by", sa.String(128)),
    sa.Column("locked_at", sa.BigInteger),
    sa.Column("lease_expires_at", sa.BigInteger),
    sa.Column("next_eligible_at", sa.BigInteger, nullable=False, default=0),
    sa.Column("updated_at", sa.BigInteger, nullable=False),
    sa.Column("created_at", sa.BigInteger, nullable=False),
    sa.Column("schema_version", sa.Integer, nullable=False),
    sa.Column("revision", sa.Integer, nullable=False, default=1),
)


def _to_record(row) -> StoredRecord:
    return StoredRecord(
        kind=row.kind, record_id=row.id, body=json.loads(row.body), status=row.status,
        locked_by=row.locked_by, locked_at=row.locked_at, updated_at=row.updated_at,
        created_at=row.created_at, schema_version=row.schema_version, revision=row.revision)


class ServerStore(Store):
    def __init__(self, url: str):
        try:
            kwargs: dict = {"future": True}
            if url.startswith("sqlite"):
                # sqlite needs generous lock timeouts under writer contention
                kwargs["connect_args"] = {"timeout": 60}
            self._engine = sa.create_engine(url, **kwargs)
            if url.startswith("sqlite"):
                with self._engine.connect() as conn:
                    conn.exec_driver_sql("PRAGMA journal_mode=WAL")
            _metadata.create_all(self._engine)
        except sa.exc.SQLAlchemyError as exc:
            raise StoreUnavailable(f"cannot open store at {url}: {exc}") from exc

    def upsert(self, kind: str, record_id: str, body: dict, status: str,
               schema_version: int = CURRENT_RECORD_VERSION) -> int:
        now = now_ms()
        payload = json.dumps(body)
        with self._engine.begin() as conn:
            updated = conn.execute(
                sa.update(records)
                .where(records.c.kind == kind, records.c.id == record_id)
                .values(body=payload, status=status, updated_at=now,
                        schema_version=schema_version, revision=records.c.revision + 1)
            )
            if updated.rowcount:
                row = conn.execute(
                    sa.select(records.c.revision)
                    .where(records.c.kind == kind, records.c.id == record_id)).one()
                return row.revision
            conn.execute(sa.insert(records).values(
                kind=kind, id=record_id, body=payload, status=status,
                next_eligible_at=0, updated_at=now, created_at=now,
                schema_version=schema_version, revision=1))
            return 1

    def upsert_many(self, kind: str, rows: list[tuple[str, dict, str]]) -> None:
        for record_id, body, status in rows:
            self.upsert(kind, record_id, body, status)

    def fetch(self, kind: str, record_id: str) -> StoredRecord:
        with self._engine.connect() as conn:
            row = conn.execute(
                sa.select(records)
                .where(records.c.kind == kind, records.c.id == record_id)).one_or_none()
        if row is None:
            raise NotFound(kind, record_id)
        record = _to_record(row)
        if record.schema_version > CURRENT_RECORD_VERSION:
            raise VersionSkew(record.schema_version, CURRENT_RECORD_VERSION)
        return record

    def query(self, kind: str, statuses: Iterable[str] | None = None,
              prefix: str | None = None, limit: int | None = None) -> list[StoredRecord]:
        stmt = sa.select(records).where(records.c.kind == kind)
        if statuses is not None:
            stmt = stmt.where(records.c.status.in_(list(statuses)))
        if prefix is not None:
            stmt = stmt.where(records.c.id.startswith(prefix))
        stmt = stmt.order_by(records.c.id)
        if limit is not None:
            stmt = stmt.limit(limit)
        with self._engine.connect() as conn:
            return [_to_record(r) for r in conn.execute(stmt)]

    def delete(self, kind: str, record_id: str) -> None:
        with self._engine.begin() as conn:
            conn.execute(sa.delete(records)
                         .where(records.c.kind == kind, records.c.id == record_id))

    def count_by_status(self, kind: str) -> dict[str, int]:
        stmt = (sa.select(records.c.status, sa.func.count())
                .where(records.c.kind == kind).group_by(records.c.status))
        with self._engine.connect() as conn:
            return {status: count for status, count in conn.execute(stmt)}

    def claim_idle(self, kind: str, statuses: Iterable[str], idle_threshold: float,
                   limit: int, worker_id: str, lease: float | None = None) -> ClaimTicket:
        if idle_threshold < 0 or limit <= 0:
            raise ValueError("idle_threshold must be >= 0 and limit > 0")
        statuses = list(statuses)
        now = now_ms()
        expiry = now + lease_ms(idle_threshold, lease)
        idle_cutoff = now - int(idle_threshold * 1000)
        unclaimed = sa.or_(records.c.locked_by.is_(None), records.c.lease_expires_at <= now)
        claimed: list[str] = []
        with self._engine.begin() as conn:
            candidates = conn.execute(
                sa.select(records.c.id)
                .where(records.c.kind == kind,
                       records.c.status.in_(statuses),
                       records.c.updated_at <= idle_cutoff,
                       records.c.next_eligible_at <= now,
                       unclaimed)
                .order_by(records.c.updated_at.asc())
                .limit(limit)).scalars().all()
            for record_id in candidates:
                won = conn.execute(
                    sa.update(records)
                    .where(records.c.kind == kind, records.c.id == record_id,
                           records.c.status.in_(statuses),
                           records.c.updated_at <= idle_cutoff,
                           records.c.next_eligible_at <= now,
                           unclaimed)
                    .values(locked_by=worker_id, locked_at=now, lease_expires_at=expiry))
                if won.rowcount:
                    claimed.append(record_id)
        return ClaimTicket(worker_id, kind, claimed, expiry)

    def claim_ids(self, kind: str, record_ids: Sequence[str], worker_id: str,
                  lease: float, statuses: Iterable[str] | None = None) -> ClaimTicket:
        now = now_ms()
        expiry = now + max(1, int(lease * 1000))
        unclaimed = sa.or_(records.c.locked_by.is_(None), records.c.lease_expires_at <= now)
        claimed: list[str] = []
        with self._engine.begin() as conn:
            for record_id in record_ids:
                stmt = (sa.update(records)
                        .where(records.c.kind == kind, records.c.id == record_id, unclaimed)
                        .values(locked_by=worker_id, locked_at=now, lease_expires_at=expiry))
                if statuses is not None:
                    stmt = stmt.where(records.c.status.in_(list(statuses)))
                if conn.execute(stmt).rowcount:
                    claimed.append(record_id)
        return ClaimTicket(worker_id, kind, claimed, expiry)

    def release_claim(self, ticket: ClaimTicket, record_id: str, new_status: str,
                      body: dict | None = None, defer: float = 0.0) -> None:
        now = now_ms()
        values = dict(locked_by=None, locked_at=None, lease_expires_at=None,
                      status=new_status, updated_at=now,
                      next_eligible_at=now + int(defer * 1000),
                      revision=records.c.revision + 1)
        if body is not None:
            values["body"] = json.dumps(body)
        with self._engine.begin() as conn:
            released = conn.execute(
                sa.update(records)
                .where(records.c.kind == ticket.kind, records.c.id == record_id,
                       records.c.locked_by == ticket.worker_id,
                       records.c.lease_expires_at > now)
                .values(**values))
            if released.rowcount == 0:
                raise StaleClaim(
                    f"{ticket.kind}/{record_id}: claim by {ticket.worker_id} expired or not held")

    def close(self) -> None:
        self._engine.dispose()
