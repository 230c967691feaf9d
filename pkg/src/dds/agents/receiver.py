"""Receiver + Trigger: drain backend status streams, release downstream.

The receiver persists a stream cursor per (work, attempt) after processing,
so a crash between processing and cursor save replays messages (ingest is
idempotent). Content announcements reconcile every active work of the
request: the rebuild-from-store path is cheap at desk scale and is exactly
the crash-recovery contract of the dependency index.
"""

from __future__ import annotations

import logging

from dds.bus.events import Event, EventType
from dds.errors import NotFound, UnknownHandle
from dds.model.states import WorkState
from dds.agents.base import AgentRole, BaseAgent
from dds.agents import records as rec
from dds.agents.ingest import IndexCache, ingest_statuses, reconcile_release
from dds.store import MESSAGE, WORK

log = logging.getLogger(__name__)

_ACTIVE = (WorkState.Submitted.value, WorkState.Running.value)


class ReceiverAgent(BaseAgent):
    role = AgentRole.Receiver
    event_types = (EventType.ContentAvailable,)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._cache = IndexCache()

    def handle_event(self, event: Event) -> None:
        request_id = event.payload.get("request_id", "")
        if not request_id:
            return
        for record in self.store.query(WORK, statuses=list(_ACTIVE), prefix=f"{request_id}:"):
            ticket = self.claim_one(WORK, record.record_id, statuses=list(_ACTIVE))
            if ticket is None:
                continue
            spec = rec.spec_of(record.body)
            backend = self.backends.get(spec.metadata.backend_handle.backend_name) \
                if spec.metadata.backend_handle else None
            reconcile_release(self.store, spec, record.record_id, backend,
                              self._cache, publish=self.publish)
            self.store.release_claim(ticket, record.record_id, record.status)

    def lazy_poll(self) -> bool:
        worked = False
        for record in self.store.query(WORK, statuses=list(_ACTIVE),
                                       limit=self.loop_cfg.batch_limit):
            # peek without claiming: only contend for the work record when
            # the stream actually has something new
            peeked = self._peek(record.record_id)
            if peeked is None:
                continue
            ticket = self.claim_one(WORK, record.record_id, statuses=list(_ACTIVE))
            if ticket is None:
                continue
            try:
                if self._drain(record.record_id):
                    worked = True
            finally:
                try:
                    current = self.store.fetch(WORK, record.record_id).status
                except NotFound:
                    current = record.status
                self.store.release_claim(ticket, record.record_id, current)
        return worked

    def _stream_state(self, wkey: str):
        record = self.store.fetch(WORK, wkey)
        spec = rec.spec_of(record.body)
        handle = spec.metadata.backend_handle
        backend = self.backends.get(handle.backend_name) if handle else None
        if handle is None or backend is None:
            return None
        cursor_id = f"cursor:{wkey}:a{spec.metadata.attempt_counter}"
        try:
            after = self.store.fetch(MESSAGE, cursor_id).body.get("seq", 0)
        except NotFound:
            after = 0
        return spec, backend, handle, cursor_id, after

    def _peek(self, wkey: str):
        try:
            state = self._stream_state(wkey)
            if state is None:
                return None
            spec, backend, handle, _cursor_id, after = state
            new_cursor, messages = backend.stream_status(handle, after)
        except (NotFound, UnknownHandle):
            return None
        return messages or None

    def _drain(self, wkey: str) -> bool:
        state = self._stream_state(wkey)
        if state is None:
            return False
        spec, backend, handle, cursor_id, after = state
        try:
            new_cursor, messages = backend.stream_status(handle, after)
        except UnknownHandle:
            return False
        if not messages:
            return False
        ingest_statuses(self.store, spec, wkey, backend, messages,
                        self._cache, publish=self.publish)
        # cursor saved after processing: crash in between replays (idempotent)
        self.store.upsert(MESSAGE, cursor_id, {"seq": new_cursor}, "cursor")
        return True
