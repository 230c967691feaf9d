"""Small shared helpers: clocks and identifiers."""

from __future__ import annotations

import time
import uuid


def now_ms() -> int:
    """Current UTC wall clock in integer milliseconds."""
    return time.time_ns() // 1_000_000


def new_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"
