"""Coordinator merge layer: consolidate redundant events on a pending batch.

For each (event_type, scope_key) group of a mergeable type, exactly one
representative survives, carrying the key-wise union of the group's payloads
(last writer wins per key) and the group's maximum priority. Non-mergeable
types pass through untouched. Output preserves the first-occurrence order of
survivors. A consumer holding only the merged event can still act correctly
because it re-reads authoritative state from persistence.
"""

from __future__ import annotations

from dataclasses import replace

from dds.bus.events import Event, MERGEABLE_TYPES, Priority


def merge_pending(pending: list[Event]) -> list[Event]:
    out: list[Event] = []
    slot_of: dict[tuple, int] = {}
    for event in pending:
        if event.event_type not in MERGEABLE_TYPES:
            out.append(event)
            continue
        key = (event.event_type, event.scope_key)
        if key not in slot_of:
            slot_of[key] = len(out)
            out.append(event)
            continue
        slot = slot_of[key]
        survivor = out[slot]
        merged_payload = dict(survivor.payload)
        merged_payload.update(event.payload)
        out[slot] = replace(
            survivor,
            payload=merged_payload,
            priority=Priority(max(int(survivor.priority), int(event.priority))),
        )
    return out
