"""Work/Workflow/Condition/Parameter object model, lifecycle state machine,
graph validation and versioned serialization."""

from dds.model.states import (
    WorkState,
    LifecycleEvent,
    TRANSITIONS,
    TERMINAL_STATES,
    RETRYABLE_STATES,
    next_state,
)
from dds.model.predicate import PredicateExpr, Cmp, StateIs, And, Or, Not, evaluate_predicate
from dds.model.work import (
    WorkSpec,
    WorkTemplate,
    WorkMetadata,
    ParameterValue,
    TaskHandle,
    JobDef,
    transition_state,
)
from dds.model.graph import (
    WorkflowGraph,
    Condition,
    LoopBlock,
    ValidationReport,
    Violation,
    validate_graph,
    bind_parameters,
)
from dds.model.serialize import (
    SCHEMA_VERSION,
    serialize_graph,
    deserialize_graph,
    graph_to_dict,
    graph_from_dict,
)

__all__ = [
    "WorkState", "LifecycleEvent", "TRANSITIONS", "TERMINAL_STATES", "RETRYABLE_STATES",
    "next_state", "PredicateExpr", "Cmp", "StateIs", "And", "Or", "Not",
    "evaluate_predicate", "WorkSpec", "WorkTemplate", "WorkMetadata", "ParameterValue",
    "TaskHandle", "JobDef", "transition_state", "WorkflowGraph", "Condition", "LoopBlock",
    "ValidationReport", "Violation", "validate_graph", "bind_parameters",
    "SCHEMA_VERSION", "serialize_graph", "deserialize_graph", "graph_to_dict", "graph_from_dict",
]
