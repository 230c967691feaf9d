"""Brokerless socket bus: length-prefixed JSON frames over TCP, best effort.

Wire format (documented byte-exact in docs/wire-formats.md): every frame is
a 4-byte big-endian length followed by that many bytes of UTF-8 JSON. Frames
are {"kind": "sub", "group": g, "types": [...]} from client to server,
{"kind": "pub", "event": {...}} for publishes, and {"kind": "evt", "event":
{...}} for deliveries. The server routes each published event to one
connected member per matching group (round-robin); there is no persistence,
no retransmit, and a configurable injected drop rate for loss testing.
System-level liveness under loss rests on the agents' lazy polling.
"""

from __future__ import annotations

import json
import logging
import random
import socket
import struct
import threading
from typing import Iterable

from dds.bus.base import EventBus
from dds.bus.events import Event, EventType, Subscription, event_from_dict, event_to_dict, sort_pending
from dds.errors import BusUnavailable

log = logging.getLogger(__name__)

_LEN = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024


def send_frame(sock: socket.socket, doc: dict) -> None:
    body = json.dumps(doc).encode("utf-8")
    sock.sendall(_LEN.pack(len(body)) + body)


def recv_frame(sock: socket.socket) -> dict | None:
    header = _recv_exact(sock, _LEN.size)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME:
        raise ValueError(f"frame of {length} bytes exceeds cap")
    body = _recv_exact(sock, length)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class SocketBusServer:
    """Standalone fan-out daemon for the socket backend."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 drop_rate: float = 0.0, drop_seed: int = 0):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(64)
        self.host, self.port = self._sock.getsockname()
        self._drop_rate = drop_rate
        self._rng = random.Random(drop_seed)
        self._lock = threading.Lock()
        self._members: dict[str, list[tuple[socket.socket, set[str]]]] = {}
        self._rr: dict[str, int] = {}
        self._stop = threading.Event()
        self.dropped = 0
        self._thread = threading.Thread(target=self._accept_loop, daemon=True, name="bus-server")

    def start(self) -> "SocketBusServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            for members in self._members.values():
                for conn, _ in members:
                    try:
                        conn.close()
                    except OSError:
                        pass
            self._members.clear()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        group = None
        try:
            while not self._stop.is_set():
                frame = recv_frame(conn)
                if frame is None:
                    break
                if frame["kind"] == "sub":
                    group = frame["group"]
                    with self._lock:
                        self._members.setdefault(group, []).append((conn, set(frame["types"])))
                elif frame["kind"] == "pub":
                    self._route(frame["event"])
        except (OSError, ValueError, json.JSONDecodeError):
            pass
        finally:
            self._detach(conn)

    def _detach(self, conn: socket.socket) -> None:
        with self._lock:
            for group, members in self._members.items():
                self._members[group] = [m for m in members if m[0] is not conn]
        try:
            conn.close()
        except OSError:
            pass

    def _route(self, event_doc: dict) -> None:
        event_type = event_doc["event_type"]
        with self._lock:
            for group, members in self._members.items():
                matching = [m for m in members if event_type in m[1]]
                if not matching:
                    continue
                if self._drop_rate and self._rng.random() < self._drop_rate:
                    self.dropped += 1
                    continue
                slot = self._rr.get(group, 0) % len(matching)
                self._rr[group] = slot + 1
                target, _ = matching[slot]
                try:
                    send_frame(target, {"kind": "evt", "event": event_doc})
                except OSError:
                    pass  # receiver gone: best effort


class SocketEventBus(EventBus):
    """Client endpoint: publishes frames and buffers deliveries locally."""

    def __init__(self, host: str, port: int, connect_timeout: float = 2.0):
        self._addr = (host, port)
        self._timeout = connect_timeout
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._pending: list[Event] = []
        self._subscribed: list[dict] = []
        self._reader: threading.Thread | None = None
        self._closed = False

    def _ensure_connected(self) -> socket.socket:
        with self._lock:
            if self._sock is not None:
                return self._sock
            if self._closed:
                raise BusUnavailable("bus client closed")
            try:
                sock = socket.create_connection(self._addr, timeout=self._timeout)
                sock.settimeout(None)
            except OSError as exc:
                raise BusUnavailable(f"cannot reach bus at {self._addr}: {exc}") from exc
            self._sock = sock
            for sub in self._subscribed:
                send_frame(sock, sub)
            self._reader = threading.Thread(target=self._read_loop, args=(sock,),
                                            daemon=True, name="bus-reader")
            self._reader.start()
            return sock

    def _read_loop(self, sock: socket.socket) -> None:
        try:
            while True:
                frame = recv_frame(sock)
                if frame is None:
                    break
                if frame.get("kind") == "evt":
                    event = event_from_dict(frame["event"])
                    with self._lock:
                        self._pending.append(event)
        except (OSError, ValueError, json.JSONDecodeError):
            pass
        with self._lock:
            if self._sock is sock:
                self._sock = None

    def subscribe(self, subscriber_id: str, event_types: Iterable[EventType],
                  group: str | None = None) -> Subscription:
        sub = Subscription(subscriber_id, group or subscriber_id, frozenset(event_types))
        frame = {"kind": "sub", "group": sub.group, "types": [t.value for t in sub.event_types]}
        self._subscribed.append(frame)
        try:
            send_frame(self._ensure_connected(), frame)
        except BusUnavailable:
            log.warning("bus unreachable at subscribe; will retry on next use")
        return sub

    def publish(self, event: Event) -> None:
        frame = {"kind": "pub", "event": event_to_dict(event)}
        for attempt in (1, 2):
            sock = self._ensure_connected()
            try:
                with self._lock:
                    send_frame(sock, frame)
                return
            except OSError as exc:
                with self._lock:
                    self._sock = None
                if attempt == 2:
                    raise BusUnavailable(f"publish failed: {exc}") from exc

    def consume(self, subscription: Subscription, max_batch: int) -> list[Event]:
        try:
            self._ensure_connected()
        except BusUnavailable:
            return []
        with self._lock:
            ordered = sort_pending(self._pending)
            batch, rest = [], []
            for event in ordered:
                if len(batch) < max_batch and event.event_type in subscription.event_types:
                    batch.append(event)
                else:
                    rest.append(event)
            self._pending = rest
            return batch

    def ack(self, subscription: Subscription, event_id: str) -> None:
        pass  # best-effort backend: no redelivery to suppress

    def close(self) -> None:
        with self._lock:
            self._closed = True
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
                self._sock = None
