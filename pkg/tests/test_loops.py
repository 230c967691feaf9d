"""Loop unrolling against scripted payload traces."""

from dds.dagengine import LoopTerminated, expand_loop
from dds.model.graph import Condition, Edge, LoopBlock, WorkflowGraph
from dds.model.predicate import Cmp
from dds.model.states import WorkState
from dds.model.work import FromOutput, ParameterValue, WorkMetadata

from conftest import make_work, metric_cond


def loss_loop(max_iterations, threshold=0.1):
    train = make_work(
        "train", slots=("loss_in",),
        params={"loss_in": ParameterValue("loss_in", value=0.8, origin=FromOutput("train", "loss"))})
    loop = LoopBlock(
        loop_id="L", body=("train",),
        exit_condition=metric_cond("c-exit", "train", "loss", "le", threshold),
        max_iterations=max_iterations)
    graph = WorkflowGraph(request_id="r-loop", works={"train": train}, loops=[loop])
    return graph


def run_scripted(graph, payload, max_rounds=50):
    """Drive expand/complete rounds with a scripted payload; return iteration count."""
    expansions = 0
    meta: dict[str, tuple[WorkState, WorkMetadata]] = {}
    for _ in range(max_rounds):
        loop = graph.loops[0]
        result = expand_loop(graph, loop, meta)
        if isinstance(result, LoopTerminated):
            return expansions, result
        graph = result
        expansions += 1
        loop = graph.loops[0]
        clone_id = loop.clone_id("train", loop.iteration_counter)
        spec = graph.works[clone_id]
        outputs = payload(spec, expansions)
        meta = {"train": (WorkState.Finished, WorkMetadata(outputs=outputs))}
    raise AssertionError("loop never terminated")


def test_zero_max_iterations_terminates_before_expansion():
    graph = loss_loop(max_iterations=0)
    result = expand_loop(graph, graph.loops[0], {})
    assert isinstance(result, LoopTerminated)
    assert result.reason == "max_iterations"
    assert result.graph.loops[0].terminated
    assert all("#" not in wid for wid in result.graph.works)


def test_scripted_halving_loss_terminates_after_three_expansions():
    graph = loss_loop(max_iterations=10)

    def payload(spec, iteration):
        # halves the incoming loss: 0.8 -> 0.4 -> 0.2 -> 0.1
        loss_in = spec.parameters["loss_in"].value if spec.parameters["loss_in"].is_static else None
        assert loss_in is not None or iteration > 1
        return {"loss": 0.8 / (2 ** iteration)}

    expansions, terminated = run_scripted(graph, payload)
    assert expansions == 3
    assert terminated.reason == "exit_condition"
    assert terminated.graph.loops[0].iteration_counter == 3


def test_never_true_predicate_hits_cap():
    graph = loss_loop(max_iterations=5, threshold=-1.0)
    expansions, terminated = run_scripted(graph, lambda spec, i: {"loss": 1.0})
    assert expansions == 5
    assert terminated.reason == "max_iterations"


def test_expansion_count_never_exceeds_cap():
    for cap in (0, 1, 2, 7):
        graph = loss_loop(max_iterations=cap, threshold=-1.0)
        expansions, _ = run_scripted(graph, lambda spec, i: {"loss": 1.0})
        assert expansions <= cap
        assert graph.loops[0].iteration_counter <= cap


def test_parameter_seed_then_rebind():
    graph = loss_loop(max_iterations=3, threshold=-1.0)
    g1 = expand_loop(graph, graph.loops[0], {})
    assert not isinstance(g1, LoopTerminated)
    first = g1.works["train#1"]
    # iteration 1: the FromOutput self-reference collapses to its seed value
    assert first.parameters["loss_in"].is_static
    assert first.parameters["loss_in"].value == 0.8

    meta = {"train": (WorkState.Finished, WorkMetadata(outputs={"loss": 0.4}))}
    g2 = expand_loop(g1, g1.loops[0], meta)
    assert not isinstance(g2, LoopTerminated)
    second = g2.works["train#2"]
    assert second.parameters["loss_in"].origin == FromOutput("train#1", "loss")


def test_entry_and_exit_edges_wire_to_first_and_last_iterations():
    init = make_work("init")
    body_a = make_work("a")
    body_b = make_work("b")
    report = make_work(
        "report", slots=("best",),
        params={"best": ParameterValue("best", origin=FromOutput("b", "metric"))})
    loop = LoopBlock(loop_id="L", body=("a", "b"),
                     exit_condition=metric_cond("c-exit", "b", "metric", "ge", 10),
                     max_iterations=4)
    graph = WorkflowGraph(
        request_id="r-wire",
        works={"init": init, "a": body_a, "b": body_b, "report": report},
        edges=[Edge("init", "a"), Edge("a", "b"), Edge("b", "report")],
        loops=[loop])

    g1 = expand_loop(graph, loop, {})
    assert Edge("init", "a#1", None) in g1.edges
    assert Edge("a#1", "b#1", None) in g1.edges
    assert not any(e.src == "b#1" and e.dst == "report" for e in g1.edges)

    meta = {"a": (WorkState.Finished, WorkMetadata()),
            "b": (WorkState.Finished, WorkMetadata(outputs={"metric": 11}))}
    result = expand_loop(g1, g1.loops[0], meta)
    assert isinstance(result, LoopTerminated)
    final = result.graph
    assert Edge("b#1", "report", None) in final.edges
    # entry edges are not duplicated on later iterations
    assert sum(1 for e in final.edges if e.src == "init") == 2  # declaration edge + iteration 1
    assert final.works["report"].parameters["best"].origin == FromOutput("b#1", "metric")


def test_back_edge_becomes_cross_iteration_dependency():
    a = make_work("a")
    b = make_work("b")
    loop = LoopBlock(loop_id="L", body=("a", "b"),
                     exit_condition=metric_cond("c-exit", "b", "m", "ge", 99),
                     max_iterations=3)
    graph = WorkflowGraph(request_id="r-back", works={"a": a, "b": b},
                          edges=[Edge("a", "b"), Edge("b", "a")], loops=[loop])
    g1 = expand_loop(graph, loop, {})
    assert Edge("a#1", "b#1", None) in g1.edges
    meta = {"a": (WorkState.Finished, WorkMetadata()),
            "b": (WorkState.Finished, WorkMetadata(outputs={"m": 0}))}
    g2 = expand_loop(g1, g1.loops[0], meta)
    assert Edge("b#1", "a#2", None) in g2.edges


def test_conditional_branch_inside_body_clones_condition():
    a = make_work("a")
    b = make_work("b")
    cond = Condition("c-br", "a", Cmp("ok", "eq", True), true_targets=("b",))
    loop = LoopBlock(loop_id="L", body=("a", "b"),
                     exit_condition=metric_cond("c-exit", "b", "m", "ge", 99),
                     max_iterations=2)
    graph = WorkflowGraph(request_id="r-cond", works={"a": a, "b": b},
                          edges=[Edge("a", "b", "c-br")], conditions={"c-br": cond},
                          loops=[loop])
    g1 = expand_loop(graph, loop, {})
    cloned = [e for e in g1.edges if e.src == "a#1"]
    assert len(cloned) == 1
    cid = cloned[0].condition
    assert cid == "c-br#1"
    assert g1.conditions[cid].source_work == "a#1"
    assert g1.conditions[cid].true_targets == ("b#1",)
