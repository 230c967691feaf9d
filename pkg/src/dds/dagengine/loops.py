"""Loop unrolling: clone body works per iteration instead of resetting state.

Each iteration gets fresh work ids suffixed ``#i``, preserving an auditable
history per iteration. Declared body works never execute directly; they are
the template the clones are stamped from. A back-edge inside the body
(destination at or before the source in the body's declared order) becomes a
cross-iteration dependency when unrolled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

from dds._util import now_ms
from dds.dagengine.conditions import evaluate_condition
from dds.model.graph import Condition, Edge, LoopBlock, WorkflowGraph, resolve_from_output
from dds.model.states import WorkState
from dds.model.work import WorkMetadata


@dataclass(frozen=True)
class LoopTerminated:
    graph: WorkflowGraph
    reason: str  # exit_condition | max_iterations | already_terminated


def _copy_graph(graph: WorkflowGraph) -> WorkflowGraph:
    return WorkflowGraph(
        request_id=graph.request_id,
        works=dict(graph.works),
        edges=list(graph.edges),
        conditions=dict(graph.conditions),
        loops=list(graph.loops),
        global_parameters=dict(graph.global_parameters),
        state=graph.state,
        created_at=graph.created_at,
    )


def _swap_loop(graph: WorkflowGraph, old: LoopBlock, new: LoopBlock) -> None:
    graph.loops = [new if lb.loop_id == old.loop_id else lb for lb in graph.loops]


def _clone_condition(cond: Condition, clone_id: str, source_rename: Mapping[str, str],
                     target_rename: Mapping[str, str]) -> Condition:
    return Condition(
        condition_id=clone_id,
        source_work=source_rename.get(cond.source_work, cond.source_work),
        predicate=cond.predicate,
        true_targets=tuple(target_rename.get(t, t) for t in cond.true_targets),
        false_targets=tuple(target_rename.get(t, t) for t in cond.false_targets),
    )


def expand_loop(
    graph: WorkflowGraph,
    loop: LoopBlock,
    last_iteration_meta: Mapping[str, tuple[WorkState, WorkMetadata]],
) -> WorkflowGraph | LoopTerminated:
    """Terminate or unroll one more iteration.

    `last_iteration_meta` maps base body work ids to the (state, metadata) of
    the just-finished iteration's clones; it is empty before any expansion.
    Callers must only invoke this once the current iteration is fully
    terminal. Returns the extended graph, or LoopTerminated carrying a
    finalized graph with loop exits wired to the last iteration.
    """
    if loop.terminated:
        return LoopTerminated(graph, "already_terminated")

    if loop.iteration_counter > 0:
        exit_cond = loop.exit_condition
        state, meta = last_iteration_meta.get(
            exit_cond.source_work, (WorkState.Failed, WorkMetadata()))
        if evaluate_condition(exit_cond, meta, state):
            return LoopTerminated(finalize_loop(graph, loop), "exit_condition")

    if loop.iteration_counter >= loop.max_iterations:
        return LoopTerminated(finalize_loop(graph, loop), "max_iterations")

    iteration = loop.iteration_counter + 1
    body = set(loop.body)
    current = {b: loop.clone_id(b, iteration) for b in loop.body}
    previous = {b: loop.clone_id(b, iteration - 1) for b in loop.body} if iteration > 1 else {}

    out = _copy_graph(graph)
    stamp = now_ms()
    for base in loop.body:
        spec = graph.works[base]
        params = resolve_from_output(
            spec.parameters,
            rename=previous,
            seed_works=(body if iteration == 1 else ()),
        )
        out.works[current[base]] = replace(
            spec,
            work_id=current[base],
            name=f"{spec.name}#{iteration}",
            parameters=params,
            metadata=WorkMetadata(),
            state=WorkState.New,
            created_at=stamp,
            updated_at=stamp,
        )

    cloned_conditions: dict[str, str] = {}

    def cond_for(edge: Edge, suffix: str, source_rename: Mapping[str, str],
                 target_rename: Mapping[str, str]) -> str | None:
        if edge.condition is None:
            return None
        clone_id = f"{edge.condition}{suffix}"
        if clone_id not in cloned_conditions:
            out.conditions[clone_id] = _clone_condition(
                graph.conditions[edge.condition], clone_id, source_rename, target_rename)
            cloned_conditions[clone_id] = clone_id
        return clone_id

    order = {b: k for k, b in enumerate(loop.body)}
    for edge in graph.edges:
        src_in, dst_in = edge.src in body, edge.dst in body
        if src_in and dst_in:
            if order[edge.dst] > order[edge.src]:  # forward: same iteration
                cid = cond_for(edge, f"#{iteration}", current, current)
                out.edges.append(Edge(current[edge.src], current[edge.dst], cid))
            elif iteration > 1:  # back-edge: previous iteration feeds this one
                cid = cond_for(edge, f"#b{iteration}", previous, current)
                out.edges.append(Edge(previous[edge.src], current[edge.dst], cid))
        elif dst_in and iteration == 1:  # entry edges apply to the first iteration only
            cid = cond_for(edge, f"#{iteration}", {}, current)
            out.edges.append(Edge(edge.src, current[edge.dst], cid))
        # outbound edges (src_in, not dst_in) are wired at finalize time

    _swap_loop(out, loop, replace(loop, iteration_counter=iteration))
    return out


def finalize_loop(graph: WorkflowGraph, loop: LoopBlock) -> WorkflowGraph:
    """Mark the loop terminated and wire exits to the last iteration.

    Outbound edges and FromOutput references naming body works are rebound to
    the final iteration's clones. With zero completed iterations there is
    nothing to wire: downstream works gated solely on the body stay
    unreachable.
    """
    out = _copy_graph(graph)
    _swap_loop(out, loop, replace(loop, terminated=True))
    last = loop.iteration_counter
    if last == 0:
        return out
    body = set(loop.body)
    rename = {b: loop.clone_id(b, last) for b in loop.body}
    for edge in graph.edges:
        if edge.src in body and edge.dst not in body:
            cid = None
            if edge.condition is not None:
                cid = f"{edge.condition}#final"
                if cid not in out.conditions:
                    out.conditions[cid] = _clone_condition(
                        graph.conditions[edge.condition], cid, rename, rename)
            out.edges.append(Edge(rename[edge.src], edge.dst, cid))
    for wid, spec in graph.works.items():
        if wid in body or "#" in wid:
            continue
        rebound = resolve_from_output(spec.parameters, rename=rename)
        if rebound != spec.parameters:
            out.works[wid] = replace(spec, parameters=rebound)
    return out
