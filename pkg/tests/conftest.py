import hypothesis
import pytest

from dds.model.graph import Condition, Edge, WorkflowGraph
from dds.model.predicate import Cmp, StateIs
from dds.model.states import WorkState
from dds.model.work import ParameterValue, WorkSpec, WorkTemplate

hypothesis.settings.register_profile("ci", deadline=None)
hypothesis.settings.load_profile("ci")


def make_work(work_id: str, *, slots=(), params=None, executable="true",
              job_count_hint=None, inputs=(), outputs=(), priority=0,
              backend=None, job_defs=()) -> WorkSpec:
    template = WorkTemplate(
        executable=executable,
        input_collections=tuple(inputs),
        output_collections=tuple(outputs),
        parameter_slots=tuple(slots),
        job_count_hint=job_count_hint,
        job_defs=tuple(job_defs),
        backend=backend,
    )
    return WorkSpec(work_id=work_id, name=work_id, template=template,
                    priority=priority, parameters=dict(params or {}))


def chain_graph(request_id: str, n: int) -> WorkflowGraph:
    works = {f"w{i}": make_work(f"w{i}") for i in range(n)}
    edges = [Edge(f"w{i}", f"w{i+1}") for i in range(n - 1)]
    return WorkflowGraph(request_id=request_id, works=works, edges=edges)


def finished_cond(cid: str, source: str, true_targets=(), false_targets=()) -> Condition:
    return Condition(condition_id=cid, source_work=source,
                     predicate=StateIs(WorkState.Finished),
                     true_targets=tuple(true_targets), false_targets=tuple(false_targets))


def metric_cond(cid: str, source: str, key: str, op: str, value,
                true_targets=(), false_targets=()) -> Condition:
    return Condition(condition_id=cid, source_work=source,
                     predicate=Cmp(key, op, value),
                     true_targets=tuple(true_targets), false_targets=tuple(false_targets))


def static_param(name: str, value) -> ParameterValue:
    return ParameterValue(name=name, value=value)


@pytest.fixture
def tmp_store_path(tmp_path):
    return str(tmp_path / "store.db")
