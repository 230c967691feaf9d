"""Record schema migrations: integer versions, code-declared registry.

Version 1 predates loop blocks and per-work priorities. An upgrade fills the
new fields with defaults; a downgrade drops them, keeping every field both
versions share intact.
"""

from __future__ import annotations

from typing import Callable

from dds.errors import NoMigrationPath
from dds.store.base import REQUEST, WORK, Store

Migration = Callable[[str, dict], dict]

_REGISTRY: dict[tuple[int, int], Migration] = {}


def register_migration(from_version: int, to_version: int):
    def wrap(fn: Migration) -> Migration:
        _REGISTRY[(from_version, to_version)] = fn
        return fn
    return wrap


def _find_path(from_version: int, to_version: int) -> list[tuple[int, int]]:
    if from_version == to_version:
        return []
    step = 1 if to_version > from_version else -1
    path = []
    v = from_version
    while v != to_version:
        hop = (v, v + step)
        if hop not in _REGISTRY:
            raise NoMigrationPath(from_version, to_version)
        path.append(hop)
        v += step
    return path


def migrate(store: Store, from_version: int, to_version: int) -> int:
    """Rewrite every record at `from_version` to `to_version`.

    Returns the number of records rewritten. A same-version call is a no-op.
    Raises NoMigrationPath when no chain of registered single-step
    migrations connects the two versions.
    """
    path = _find_path(from_version, to_version)
    if not path:
        return 0
    touched = 0
    from dds.store.base import KINDS
    for kind in KINDS:
        for record in store.query(kind):
            if record.schema_version != from_version:
                continue
            body = record.body
            for hop in path:
                body = _REGISTRY[hop](kind, body)
            store.upsert(kind, record.record_id, body, record.status,
                         schema_version=to_version)
            touched += 1
    return touched


@register_migration(1, 2)
def _up_1_to_2(kind: str, body: dict) -> dict:
    body = dict(body)
    if kind == REQUEST and isinstance(body.get("graph"), dict):
        graph = dict(body["graph"])
        graph.setdefault("loops", [])
        graph["schema_version"] = 2
        body["graph"] = graph
    if kind == WORK:
        body.setdefault("priority", 0)
    return body


@register_migration(2, 1)
def _down_2_to_1(kind: str, body: dict) -> dict:
    body = dict(body)
    if kind == REQUEST and isinstance(body.get("graph"), dict):
        graph = dict(body["graph"])
        graph.pop("loops", None)
        graph["schema_version"] = 1
        body["graph"] = graph
    if kind == WORK:
        body.pop("priority", None)
    return body
