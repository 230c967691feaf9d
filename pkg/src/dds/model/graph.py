"""Workflow graphs: condition-labelled edges, loop blocks, validation,
parameter binding."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from dds._util import now_ms
from dds.errors import UnresolvedParameter
from dds.model.predicate import PredicateExpr
from dds.model.states import WorkState
from dds.model.work import ParameterValue, WorkMetadata, WorkSpec


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    condition: str | None = None  # ConditionRef


@dataclass(frozen=True)
class Condition:
    """Inspects one finished work and routes downstream branches."""

    condition_id: str
    source_work: str
    predicate: PredicateExpr
    true_targets: tuple[str, ...] = ()
    false_targets: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = set(self.true_targets) & set(self.false_targets)
        if overlap:
            raise ValueError(f"condition targets overlap: {sorted(overlap)}")


@dataclass(frozen=True)
class LoopBlock:
    """Unrolled loop: body works are cloned once per iteration.

    Declared body works are templates only; iteration i runs clones suffixed
    ``#i``. `terminated` is persisted so stateless agents can recompute
    decisions after a crash.
    """

    loop_id: str
    body: tuple[str, ...]
    exit_condition: Condition
    max_iterations: int
    iteration_counter: int = 0
    terminated: bool = False

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.iteration_counter > self.max_iterations:
            raise ValueError("iteration_counter exceeds max_iterations")

    def clone_id(self, base_id: str, iteration: int) -> str:
        return f"{base_id}#{iteration}"


@dataclass
class WorkflowGraph:
    request_id: str
    works: dict[str, WorkSpec] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    conditions: dict[str, Condition] = field(default_factory=dict)
    loops: list[LoopBlock] = field(default_factory=list)
    global_parameters: dict[str, ParameterValue] = field(default_factory=dict)
    state: WorkState = WorkState.New
    created_at: int = field(default_factory=now_ms)

    def in_edges(self, work_id: str) -> list[Edge]:
        return [e for e in self.edges if e.dst == work_id]

    def out_edges(self, work_id: str) -> list[Edge]:
        return [e for e in self.edges if e.src == work_id]

    def loop_of(self, work_id: str) -> LoopBlock | None:
        for loop in self.loops:
            if work_id in loop.body:
                return loop
        return None

    def body_declarations(self) -> set[str]:
        """Work ids that are loop-body templates (never run directly)."""
        out: set[str] = set()
        for loop in self.loops:
            out.update(loop.body)
        return out


@dataclass(frozen=True)
class Violation:
    kind: str       # cycle | unknown_work | dangling_condition | unresolvable_parameter | bad_loop
    detail: str
    works: tuple[str, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"kind": v.kind, "detail": v.detail, "works": list(v.works)}
                for v in self.violations
            ],
        }


def _is_loop_back_edge(graph: WorkflowGraph, edge: Edge) -> bool:
    # Back-edge: both ends in one loop body and the edge points backwards
    # (or to itself) in the body's declared order.
    for loop in graph.loops:
        if edge.src in loop.body and edge.dst in loop.body:
            if loop.body.index(edge.dst) <= loop.body.index(edge.src):
                return True
    return False


def _find_cycle(nodes: set[str], succ: Mapping[str, list[str]]) -> list[str]:
    """Extract one concrete cycle from a subgraph known to contain one."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(nodes, WHITE)
    parent: dict[str, str] = {}
    for root in nodes:
        if color[root] != WHITE:
            continue
        color[root] = GREY
        stack = [(root, iter([n for n in succ.get(root, ()) if n in nodes]))]
        while stack:
            node, children = stack[-1]
            advanced = False
            for nxt in children:
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    parent[nxt] = node
                    stack.append((nxt, iter([n for n in succ.get(nxt, ()) if n in nodes])))
                    advanced = True
                    break
                if color[nxt] == GREY:
                    cycle = [nxt]
                    cursor = node
                    while cursor != nxt:
                        cycle.append(cursor)
                        cursor = parent[cursor]
                    return cycle
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return sorted(nodes)  # unreachable when a cycle is present


def validate_graph(graph: WorkflowGraph) -> ValidationReport:
    """Collect structural violations; an empty list means submittable.

    Checks: unknown work ids on edges, dangling condition refs, condition
    source/target resolution, FromOutput parameters naming unknown works or
    undeclared slots, loop body resolution, and acyclicity of the edge set
    minus loop back-edges (Kahn's algorithm).
    """
    violations: list[Violation] = []
    works = graph.works

    for edge in graph.edges:
        for wid in (edge.src, edge.dst):
            if wid not in works:
                violations.append(Violation("unknown_work", f"edge references unknown work {wid!r}", (wid,)))
        if edge.condition is not None and edge.condition not in graph.conditions:
            violations.append(Violation(
                "dangling_condition", f"edge {edge.src}->{edge.dst} references unknown condition {edge.condition!r}"))

    for cond in graph.conditions.values():
        if cond.source_work not in works:
            violations.append(Violation(
                "unknown_work", f"condition {cond.condition_id} inspects unknown work {cond.source_work!r}",
                (cond.source_work,)))
        for target in (*cond.true_targets, *cond.false_targets):
            if target not in works:
                violations.append(Violation(
                    "unknown_work", f"condition {cond.condition_id} targets unknown work {target!r}", (target,)))

    for loop in graph.loops:
        for wid in loop.body:
            if wid not in works:
                violations.append(Violation("bad_loop", f"loop {loop.loop_id} body names unknown work {wid!r}", (wid,)))
        if loop.exit_condition.source_work not in loop.body:
            violations.append(Violation(
                "bad_loop",
                f"loop {loop.loop_id} exit condition must inspect a body work, got {loop.exit_condition.source_work!r}"))

    for spec in works.values():
        declared = set(spec.template.parameter_slots)
        for slot, param in spec.parameters.items():
            if slot not in declared:
                violations.append(Violation(
                    "unresolvable_parameter",
                    f"work {spec.work_id} binds undeclared slot {slot!r}", (spec.work_id,)))
            if param.origin is not None and param.origin.work_id not in works:
                violations.append(Violation(
                    "unresolvable_parameter",
                    f"work {spec.work_id} slot {slot!r} reads output of unknown work {param.origin.work_id!r}",
                    (spec.work_id,)))

    # Acyclicity over known nodes, ignoring loop back-edges.
    succ: dict[str, list[str]] = {wid: [] for wid in works}
    indegree: dict[str, int] = {wid: 0 for wid in works}
    for edge in graph.edges:
        if edge.src not in works or edge.dst not in works:
            continue
        if _is_loop_back_edge(graph, edge):
            continue
        succ[edge.src].append(edge.dst)
        indegree[edge.dst] += 1
    queue = deque(wid for wid, deg in indegree.items() if deg == 0)
    visited = 0
    while queue:
        node = queue.popleft()
        visited += 1
        for nxt in succ[node]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                queue.append(nxt)
    if visited != len(works):
        remaining = {wid for wid, deg in indegree.items() if deg > 0}
        cycle = _find_cycle(remaining, succ)
        violations.append(Violation(
            "cycle", f"cycle outside any loop block: {sorted(cycle)}", tuple(sorted(cycle))))

    return ValidationReport(tuple(violations))


def bind_parameters(spec: WorkSpec, upstream: Mapping[str, WorkMetadata]) -> WorkSpec:
    """Resolve every declared slot into metadata.bound_parameters.

    Static slots copy their declared value; FromOutput slots read the named
    key from the upstream work's outputs. Raises UnresolvedParameter when a
    slot has no declaration, the upstream work is absent, or the output key
    is missing. Idempotent for fixed upstream.
    """
    bound: dict[str, object] = {}
    for slot in spec.template.parameter_slots:
        param = spec.parameters.get(slot)
        if param is None:
            raise UnresolvedParameter(slot, "no declaration for slot")
        if param.origin is None:
            bound[slot] = param.value
        else:
            meta = upstream.get(param.origin.work_id)
            if meta is None:
                raise UnresolvedParameter(slot, f"work {param.origin.work_id!r} not in upstream set")
            if param.origin.key not in meta.outputs:
                raise UnresolvedParameter(slot, f"output key {param.origin.key!r} absent on {param.origin.work_id!r}")
            bound[slot] = meta.outputs[param.origin.key]
    if bound == spec.metadata.bound_parameters:
        return spec
    return spec.with_metadata(bound_parameters=bound)


def resolve_from_output(params: Mapping[str, ParameterValue],
                        rename: Mapping[str, str],
                        seed_works: Iterable[str] = ()) -> dict[str, ParameterValue]:
    """Rewrite FromOutput origins through a work-id rename map.

    Origins naming a work in `seed_works` collapse to static declarations
    carrying the parameter's seed value (first loop iteration).
    """
    seeds = set(seed_works)
    out: dict[str, ParameterValue] = {}
    for slot, param in params.items():
        if param.origin is None:
            out[slot] = param
        elif param.origin.work_id in seeds:
            out[slot] = ParameterValue(name=param.name, value=param.value, origin=None)
        elif param.origin.work_id in rename:
            out[slot] = replace(param, origin=replace(param.origin, work_id=rename[param.origin.work_id]))
        else:
            out[slot] = param
    return out
