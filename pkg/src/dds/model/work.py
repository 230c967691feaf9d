"""Work units: immutable template + runtime metadata + lifecycle state.

All objects here are value objects. Nothing mutates in place; revisions are
produced with ``dataclasses.replace`` (or the helpers below) and persistence
is the serialization point between agents.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from typing import Mapping

from dds._util import now_ms
from dds.errors import IllegalTransition
from dds.model.states import LifecycleEvent, WorkState, next_state


@dataclass(frozen=True)
class FromOutput:
    """Parameter origin: read `key` from the terminal outputs of `work_id`."""

    work_id: str
    key: str


@dataclass(frozen=True)
class ParameterValue:
    """A named value bound into a work, statically or from an upstream output.

    For FromOutput parameters, `value` doubles as the seed used before the
    referenced work has produced anything (first loop iteration).
    """

    name: str
    value: object = None
    origin: FromOutput | None = None  # None = static

    @property
    def is_static(self) -> bool:
        return self.origin is None


@dataclass(frozen=True)
class JobDef:
    """Explicit job inside a work: fine-grained dependencies and data needs."""

    index: int
    args: object = None
    depends_on: tuple[int, ...] = ()
    required_contents: tuple[str, ...] = ()


@dataclass(frozen=True)
class TaskHandle:
    """Opaque reference binding a submitted work to a workload backend."""

    backend_name: str
    external_id: str
    submitted_at: int = 0


@dataclass(frozen=True)
class WorkTemplate:
    """Static payload definition; immutable after submission."""

    executable: str
    input_collections: tuple[str, ...] = ()
    output_collections: tuple[str, ...] = ()
    parameter_slots: tuple[str, ...] = ()
    job_count_hint: int | None = None
    job_defs: tuple[JobDef, ...] = ()
    backend: str | None = None  # pin a named backend; None = policy decides

    def __post_init__(self):
        if not self.executable:
            raise ValueError("template executable must be non-empty")
        if len(set(self.parameter_slots)) != len(self.parameter_slots):
            raise ValueError("parameter slot names must be unique")


@dataclass(frozen=True)
class WorkMetadata:
    """Dynamic runtime information attached to a work."""

    bound_parameters: dict[str, object] = field(default_factory=dict)
    job_states: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, object] = field(default_factory=dict)
    attempt_counter: int = 0
    backend_handle: TaskHandle | None = None


@dataclass(frozen=True)
class WorkSpec:
    """Atomic executable unit: template + metadata + lifecycle state."""

    work_id: str
    name: str
    template: WorkTemplate
    metadata: WorkMetadata = field(default_factory=WorkMetadata)
    state: WorkState = WorkState.New
    created_at: int = field(default_factory=now_ms)
    updated_at: int = field(default_factory=now_ms)
    locked_by: str | None = None
    priority: int = 0
    request_id: str = ""
    # Slot declarations: how each template slot gets its value.
    parameters: dict[str, ParameterValue] = field(default_factory=dict)

    def revised(self, **changes) -> "WorkSpec":
        """New revision with updated_at kept monotonically non-decreasing."""
        stamp = max(now_ms(), self.updated_at)
        return replace(self, updated_at=stamp, **changes)

    def with_metadata(self, **meta_changes) -> "WorkSpec":
        return self.revised(metadata=replace(self.metadata, **meta_changes))


def transition_state(spec: WorkSpec, event: LifecycleEvent) -> WorkSpec:
    """Apply a lifecycle event, returning the revised spec.

    Raises IllegalTransition (and leaves `spec` untouched) when the event has
    no entry in the transition table for the current state. A retry resets
    the runtime side of the metadata and increments the attempt counter.
    """
    target = next_state(spec.state, event)
    if target is None:
        raise IllegalTransition(spec.state, event)
    if event == LifecycleEvent.retry:
        meta = replace(
            spec.metadata,
            attempt_counter=spec.metadata.attempt_counter + 1,
            job_states={},
            outputs={},
            backend_handle=None,
        )
        return spec.revised(state=target, metadata=meta)
    return spec.revised(state=target)


# --- serialization helpers (used by the versioned graph document) --------


def parameter_to_dict(p: ParameterValue) -> dict:
    doc: dict = {"name": p.name, "value": p.value}
    if p.origin is not None:
        doc["from"] = {"work": p.origin.work_id, "key": p.origin.key}
    return doc


def parameter_from_dict(doc: Mapping) -> ParameterValue:
    origin = None
    if doc.get("from"):
        origin = FromOutput(doc["from"]["work"], doc["from"]["key"])
    return ParameterValue(name=doc["name"], value=doc.get("value"), origin=origin)


def template_to_dict(t: WorkTemplate) -> dict:
    doc: dict = {
        "executable": t.executable,
        "input_collections": list(t.input_collections),
        "output_collections": list(t.output_collections),
        "parameter_slots": list(t.parameter_slots),
    }
    if t.job_count_hint is not None:
        doc["job_count_hint"] = t.job_count_hint
    if t.job_defs:
        doc["job_defs"] = [
            {
                "index": j.index,
                "args": j.args,
                "depends_on": list(j.depends_on),
                "required_contents": list(j.required_contents),
            }
            for j in t.job_defs
        ]
    if t.backend:
        doc["backend"] = t.backend
    return doc


def template_from_dict(doc: Mapping) -> WorkTemplate:
    return WorkTemplate(
        executable=doc["executable"],
        input_collections=tuple(doc.get("input_collections", ())),
        output_collections=tuple(doc.get("output_collections", ())),
        parameter_slots=tuple(doc.get("parameter_slots", ())),
        job_count_hint=doc.get("job_count_hint"),
        job_defs=tuple(
            JobDef(
                index=j["index"],
                args=j.get("args"),
                depends_on=tuple(j.get("depends_on", ())),
                required_contents=tuple(j.get("required_contents", ())),
            )
            for j in doc.get("job_defs", ())
        ),
        backend=doc.get("backend"),
    )


def handle_to_dict(h: TaskHandle | None) -> dict | None:
    if h is None:
        return None
    return {"backend": h.backend_name, "external_id": h.external_id, "submitted_at": h.submitted_at}


def handle_from_dict(doc: Mapping | None) -> TaskHandle | None:
    if not doc:
        return None
    return TaskHandle(doc["backend"], doc["external_id"], doc.get("submitted_at", 0))


def metadata_to_dict(m: WorkMetadata) -> dict:
    return {
        "bound_parameters": dict(m.bound_parameters),
        "job_states": dict(m.job_states),
        "outputs": dict(m.outputs),
        "attempt_counter": m.attempt_counter,
        "backend_handle": handle_to_dict(m.backend_handle),
    }


def metadata_from_dict(doc: Mapping) -> WorkMetadata:
    return WorkMetadata(
        bound_parameters=dict(doc.get("bound_parameters", {})),
        job_states=dict(doc.get("job_states", {})),
        outputs=dict(doc.get("outputs", {})),
        attempt_counter=doc.get("attempt_counter", 0),
        backend_handle=handle_from_dict(doc.get("backend_handle")),
    )


def work_to_dict(w: WorkSpec) -> dict:
    return {
        "work_id": w.work_id,
        "name": w.name,
        "template": template_to_dict(w.template),
        "metadata": metadata_to_dict(w.metadata),
        "state": w.state.value,
        "created_at": w.created_at,
        "updated_at": w.updated_at,
        "locked_by": w.locked_by,
        "priority": w.priority,
        "request_id": w.request_id,
        "parameters": {k: parameter_to_dict(v) for k, v in w.parameters.items()},
    }


def work_from_dict(doc: Mapping) -> WorkSpec:
    return WorkSpec(
        work_id=doc["work_id"],
        name=doc.get("name", doc["work_id"]),
        template=template_from_dict(doc["template"]),
        metadata=metadata_from_dict(doc.get("metadata", {})),
        state=WorkState(doc.get("state", "New")),
        created_at=doc.get("created_at", 0),
        updated_at=doc.get("updated_at", 0),
        locked_by=doc.get("locked_by"),
        priority=doc.get("priority", 0),
        request_id=doc.get("request_id", ""),
        parameters={k: parameter_from_dict(v) for k, v in doc.get("parameters", {}).items()},
    )
