"""Workload backends and the configuration-driven registry."""

from __future__ import annotations

import json
from pathlib import Path

from dds.backends.base import (
    BackendJobStatus,
    JobPhase,
    JobSubmission,
    PHASE_TERMINAL,
    WorkloadBackend,
)
from dds.backends.local import LocalBackend
from dds.backends.simulated import SimulatedBackend


def make_backends(config, store=None) -> dict[str, WorkloadBackend]:
    """Instantiate every [backend:NAME] section, preserving config order.

    The transformer's selection policy is configuration-ordered
    first-available, so the dict's insertion order matters.
    """
    backends: dict[str, WorkloadBackend] = {}
    for spec in config.backends:
        if spec.type == "simulated":
            script = {}
            script_path = spec.options.get("script", "")
            if script_path:
                script = json.loads(Path(script_path).read_text())
            elif spec.options.get("script_inline"):
                script = json.loads(spec.options["script_inline"])
            backends[spec.name] = SimulatedBackend(
                name=spec.name, script=script, store=store,
                advance_on_poll=spec.options.get("advance_on_poll", "true").lower() != "false")
        elif spec.type == "local":
            backends[spec.name] = LocalBackend(
                name=spec.name,
                root=spec.options.get("root", f"{spec.name}-tasks"),
                timeout=float(spec.options.get("timeout", 600.0)),
                max_parallel=int(spec.options.get("max_parallel", 16)))
        else:
            raise ValueError(f"unknown backend type {spec.type!r}")
    return backends


__all__ = [
    "WorkloadBackend", "BackendJobStatus", "JobPhase", "JobSubmission",
    "PHASE_TERMINAL", "LocalBackend", "SimulatedBackend", "make_backends",
]
