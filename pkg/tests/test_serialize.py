"""Round-trip identity of the versioned graph document."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from dds.errors import UnsupportedVersion
from dds.model.graph import Edge, LoopBlock, WorkflowGraph
from dds.model.predicate import Cmp
from dds.model.serialize import (
    SCHEMA_VERSION, deserialize_graph, graph_to_dict, serialize_graph,
)
from dds.model.work import FromOutput, JobDef, ParameterValue

from conftest import finished_cond, make_work


def test_empty_graph_round_trips():
    g = WorkflowGraph(request_id="r-empty")
    assert deserialize_graph(serialize_graph(g)) == g


def test_newer_version_rejected():
    g = WorkflowGraph(request_id="r-v")
    doc = graph_to_dict(g)
    doc["schema_version"] = SCHEMA_VERSION + 1
    with pytest.raises(UnsupportedVersion):
        deserialize_graph(json.dumps(doc))


def test_previous_version_accepted():
    g = WorkflowGraph(request_id="r-old", works={"A": make_work("A")},
                      edges=[Edge("A", "A", None)])
    doc = graph_to_dict(g)
    doc["schema_version"] = SCHEMA_VERSION - 1
    del doc["loops"]
    out = deserialize_graph(json.dumps(doc))
    assert out.works.keys() == {"A"}
    assert out.loops == []


# --- property: 500 random valid graphs round-trip to structural equality --

names = st.integers(0, 40).map(lambda i: f"w{i}")


@st.composite
def graphs(draw):
    n = draw(st.integers(0, 12))
    ids = [f"w{i}" for i in range(n)]
    works = {}
    for i, wid in enumerate(ids):
        slots = draw(st.lists(st.sampled_from(["a", "b", "c"]), unique=True, max_size=2))
        params = {}
        for slot in slots:
            if i > 0 and draw(st.booleans()):
                src = ids[draw(st.integers(0, i - 1))]
                params[slot] = ParameterValue(slot, value=draw(st.integers(-5, 5)),
                                              origin=FromOutput(src, "k"))
            else:
                params[slot] = ParameterValue(slot, value=draw(st.one_of(
                    st.integers(-5, 5), st.text(max_size=5), st.booleans(),
                    st.lists(st.integers(0, 3), max_size=3))))
        job_defs = ()
        if draw(st.booleans()):
            job_defs = tuple(JobDef(index=k, args={"k": k},
                                    depends_on=tuple(range(max(0, k - 1), k)))
                             for k in range(draw(st.integers(1, 3))))
        works[wid] = make_work(
            wid, slots=slots, params=params,
            executable=draw(st.sampled_from(["true", "echo hi", "python -c pass"])),
            job_count_hint=draw(st.one_of(st.none(), st.integers(1, 50))),
            inputs=draw(st.lists(st.sampled_from(["colA", "colB"]), unique=True, max_size=2)),
            outputs=draw(st.lists(st.sampled_from(["colC", "colD"]), unique=True, max_size=2)),
            priority=draw(st.integers(-2, 9)),
            job_defs=job_defs,
        )
    # forward edges only: acyclic by construction
    edges = []
    conditions = {}
    for i in range(n):
        for j in range(i + 1, n):
            if draw(st.integers(0, 6)) == 0:
                cond_ref = None
                if draw(st.booleans()):
                    cid = f"c{i}-{j}"
                    conditions[cid] = finished_cond(cid, ids[i], true_targets=(ids[j],))
                    cond_ref = cid
                edges.append(Edge(ids[i], ids[j], cond_ref))
    loops = []
    if n >= 2 and draw(st.booleans()):
        body = tuple(ids[n - 2:])
        loops.append(LoopBlock(
            loop_id="L0", body=body,
            exit_condition=finished_cond("c-exit", body[-1]),
            max_iterations=draw(st.integers(0, 4)),
        ))
    globals_ = {}
    for gname in draw(st.lists(st.sampled_from(["g1", "g2"]), unique=True, max_size=2)):
        globals_[gname] = ParameterValue(gname, value=draw(st.integers(0, 9)))
    return WorkflowGraph(request_id=draw(st.uuids().map(lambda u: f"req-{u.hex[:8]}")),
                         works=works, edges=edges, conditions=conditions,
                         loops=loops, global_parameters=globals_)


@given(graphs())
@settings(max_examples=500)
def test_500_random_graphs_round_trip(g):
    doc = serialize_graph(g)
    assert isinstance(doc, bytes)
    back = deserialize_graph(doc)
    assert back == g
    # document is valid UTF-8 JSON with the current version stamp
    parsed = json.loads(doc.decode("utf-8"))
    assert parsed["schema_version"] == SCHEMA_VERSION


def test_predicate_values_survive_round_trip():
    g = WorkflowGraph(request_id="r-pred", works={"A": make_work("A"), "B": make_work("B")})
    from dds.model.graph import Condition
    g.conditions["c1"] = Condition("c1", "A", Cmp("loss", "le", 0.1), true_targets=("B",))
    g.edges.append(Edge("A", "B", "c1"))
    back = deserialize_graph(serialize_graph(g))
    assert back.conditions["c1"].predicate == Cmp("loss", "le", 0.1)
