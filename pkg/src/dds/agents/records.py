"""Record-body conventions shared by agents and the REST service.

Work records wrap the WorkSpec with orchestration extras; request records
wrap the graph document with ownership and validation results; job records
hold JobNode documents plus the stream cursor bookkeeping.
"""

from __future__ import annotations

from dds.dagengine.jobs import JobNode, job_from_dict, job_to_dict
from dds.model.serialize import graph_from_dict, graph_to_dict
from dds.model.graph import WorkflowGraph
from dds.model.work import WorkSpec, work_from_dict, work_to_dict


def work_key(request_id: str, work_id: str) -> str:
    return f"{request_id}:{work_id}"


def job_record_id(wkey: str, attempt: int, index: int) -> str:
    return f"{wkey}:a{attempt}:j{index:06d}"


def job_prefix(wkey: str, attempt: int) -> str:
    return f"{wkey}:a{attempt}:"


def content_record_id(collection: str, name: str) -> str:
    return f"{collection}/{name}"


def request_body(graph: WorkflowGraph, owner: str, report: dict | None = None,
                 user_metadata: dict | None = None) -> dict:
    return {
        "graph": graph_to_dict(graph),
        "owner": owner,
        "report": report or {},
        "user_metadata": user_metadata or {},
    }


def graph_of(request_record_body: dict) -> WorkflowGraph:
    return graph_from_dict(request_record_body["graph"])


def work_body(spec: WorkSpec, await_inputs: list[str] | None = None,
              backend: str = "", submit_retries: int = 0) -> dict:
    return {
        "spec": work_to_dict(spec),
        "await_inputs": await_inputs or [],
        "backend": backend,
        "submit_retries": submit_retries,
    }


def spec_of(work_record_body: dict) -> WorkSpec:
    return work_from_dict(work_record_body["spec"])


def with_spec(work_record_body: dict, spec: WorkSpec) -> dict:
    out = dict(work_record_body)
    out["spec"] = work_to_dict(spec)
    return out


def job_body(node: JobNode) -> dict:
    return job_to_dict(node)


def job_of(job_record_body: dict) -> JobNode:
    return job_from_dict(job_record_body)
