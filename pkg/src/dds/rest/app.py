"""The HTTP service: ping, auth, request, cache, catalog, monitor, message,
log endpoint groups over JSON bodies.

Authorization is enforced in middleware, before routing: every endpoint
except /ping and /auth rejects missing or invalid tokens with 401 and
insufficient group membership with 403. Handlers keep no cross-request
state, so any replica answers any request identically.
"""

from __future__ import annotations

import fnmatch
import hashlib
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

import dds
from dds._util import now_ms
from dds.backends.local import LocalBackend
from dds.bus.events import Event, EventType
from dds.dagengine.jobs import Availability, ContentItem, content_from_dict, content_to_dict
from dds.errors import NotFound, UnsupportedVersion
from dds.model.serialize import graph_from_dict
from dds.model.states import TERMINAL_STATES
from dds.rest.auth import AuthError, authenticate, verify_token
from dds.agents import records as rec
from dds.store import CONTENT, JOB, REQUEST, WORK
from dds.submission import submit_request

_OPEN_PATHS = ("/ping", "/auth")


def _error(status: int, code: str, message: str, detail=None) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message, "detail": detail})


def build_app(config, store, bus, backends=None) -> FastAPI:
    app = FastAPI(title="dds", version=dds.__version__)
    backends = backends or {}
    cache_dir = Path(config.rest.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    @app.middleware("http")
    async def auth_gate(request: Request, call_next):
        if request.url.path.rstrip("/") in _OPEN_PATHS or request.url.path == "/":
            return await call_next(request)
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            return _error(401, "unauthorized", "missing bearer token")
        try:
            token = verify_token(config.auth, header.split(None, 1)[1])
        except AuthError as exc:
            return _error(401, "unauthorized", str(exc))
        request.state.token = token
        return await call_next(request)

    def caller(request: Request):
        return request.state.token

    # --- ping ---------------------------------------------------------------

    @app.get("/ping")
    def ping():
        return {"status": "ok", "version": dds.__version__, "time": now_ms()}

    # --- auth ---------------------------------------------------------------

    @app.post("/auth")
    async def issue_token(body: dict):
        try:
            token = authenticate(config.auth, body.get("username", ""),
                                 body.get("password", ""))
        except AuthError as exc:
            return _error(401, "unauthorized", str(exc))
        claims = verify_token(config.auth, token)
        return {"token": token, "subject": claims.subject,
                "groups": list(claims.groups), "expires_at": claims.expiry}

    # --- request ------------------------------------------------------------

    @app.post("/request", status_code=201)
    async def post_request(body: dict, request: Request):
        token = caller(request)
        if config.auth.submitter_group not in token.groups:
            return _error(403, "forbidden",
                          f"submitting requires group {config.auth.submitter_group!r}")
        try:
            graph = graph_from_dict(body)
        except UnsupportedVersion as exc:
            return _error(400, "unsupported_version", str(exc))
        except (KeyError, ValueError, TypeError) as exc:
            return _error(400, "malformed_graph", f"cannot parse graph document: {exc}")
        request_id, report = submit_request(store, bus, graph, owner=token.subject)
        if not report.ok:
            return _error(400, "validation_failed", "graph validation failed",
                          detail=report.to_dict())
        return {"request_id": request_id}

    def _work_summaries(request_id: str) -> dict:
        works = {}
        for record in store.query(WORK, prefix=f"{request_id}:"):
            spec = rec.spec_of(record.body)
            jobs = store.query(JOB, prefix=rec.job_prefix(
                rec.work_key(request_id, spec.work_id), spec.metadata.attempt_counter))
            done = sum(1 for j in jobs if j.status == "Done")
            works[spec.work_id] = {
                "name": spec.name,
                "state": spec.state.value,
                "attempt": spec.metadata.attempt_counter,
                "priority": spec.priority,
                "jobs_total": len(jobs),
                "jobs_done": done,
                "jobs_failed": sum(1 for j in jobs if j.status == "Failed"),
                "outputs": spec.metadata.outputs,
                "updated_at": spec.updated_at,
            }
        return works

    @app.get("/request/{request_id}")
    def get_request(request_id: str):
        try:
            record = store.fetch(REQUEST, request_id)
        except NotFound:
            return _error(404, "not_found", f"no request {request_id!r}")
        return {
            "request_id": request_id,
            "state": record.status,
            "owner": record.body.get("owner", ""),
            "report": record.body.get("report", {}),
            "user_metadata": record.body.get("user_metadata", {}),
            "graph": record.body.get("graph", {}),
            "works": _work_summaries(request_id),
        }

    @app.patch("/request/{request_id}")
    def patch_request(request_id: str, body: dict, request: Request):
        allowed = {"priority", "user_metadata"}
        extra = set(body) - allowed
        if extra:
            return _error(400, "immutable_fields",
                          f"only {sorted(allowed)} may be patched", detail=sorted(extra))
        try:
            record = store.fetch(REQUEST, request_id)
        except NotFound:
            return _error(404, "not_found", f"no request {request_id!r}")
        new_body = dict(record.body)
        if "user_metadata" in body:
            new_body["user_metadata"] = body["user_metadata"]
        if "priority" in body:
            graph = new_body.get("graph", {})
            graph["priority"] = body["priority"]
            new_body["graph"] = graph
        store.upsert(REQUEST, request_id, new_body, record.status)
        return {"request_id": request_id, "patched": sorted(set(body))}

    # --- cache -----------------------------------------------------------------

    def _blob_path(digest: str) -> Path:
        return cache_dir / digest[:2] / digest

    @app.put("/cache")
    async def put_blob(request: Request):
        blob = await request.body()
        if len(blob) > config.rest.cache_max_bytes:
            return _error(413, "too_large",
                          f"blob exceeds cap of {config.rest.cache_max_bytes} bytes")
        digest = hashlib.sha256(blob).hexdigest()
        path = _blob_path(digest)
        if not path.exists():  # digests are immutable once written
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(blob)
            tmp.rename(path)
        return {"digest": digest, "size": len(blob)}

    @app.get("/cache/{digest}")
    def get_blob(digest: str):
        path = _blob_path(digest)
        if not path.exists():
            return _error(404, "not_found", f"no blob {digest!r}")
        return Response(content=path.read_bytes(), media_type="application/octet-stream")

    # --- catalog ----------------------------------------------------------------

    @app.get("/catalog/{collection}")
    def get_catalog(collection: str, name: str | None = None,
                    availability: str | None = None):
        rows = store.query(CONTENT, prefix=f"{collection}/")
        if not rows:
            return _error(404, "not_found", f"no contents in collection {collection!r}")
        contents = [content_from_dict(r.body) for r in rows]
        counts: dict[str, int] = {a.value: 0 for a in Availability}
        for c in contents:
            counts[c.availability.value] += 1
        listed = contents
        if name is not None:
            listed = [c for c in listed if fnmatch.fnmatch(c.name, name)]
        if availability is not None:
            listed = [c for c in listed if c.availability.value == availability]
        return {"collection": collection, "counts": counts,
                "contents": [content_to_dict(c) for c in listed]}

    @app.post("/catalog/{collection}/contents", status_code=201)
    def register_contents(collection: str, body: dict):
        registered = []
        for entry in body.get("contents", []):
            item = ContentItem(
                content_id=rec.content_record_id(collection, entry["name"]),
                collection=collection, name=entry["name"],
                size_bytes=entry.get("size_bytes", 0),
                availability=Availability(entry.get("availability", "Missing")))
            store.upsert(CONTENT, item.content_id, content_to_dict(item),
                         item.availability.value)
            registered.append(item.content_id)
        return {"registered": registered}

    @app.post("/catalog/{collection}/contents/{name}/availability")
    def advance_content(collection: str, name: str, body: dict):
        content_id = rec.content_record_id(collection, name)
        try:
            record = store.fetch(CONTENT, content_id)
        except NotFound:
            return _error(404, "not_found", f"no content {content_id!r}")
        item = content_from_dict(record.body)
        try:
            item.advance(Availability(body["availability"]))
        except ValueError as exc:
            return _error(409, "invalid_transition", str(exc))
        store.upsert(CONTENT, content_id, content_to_dict(item), item.availability.value)
        if item.availability == Availability.Available and bus is not None:
            bus.publish(Event(EventType.ContentAvailable, f"content:{content_id}",
                              payload={"request_id": body.get("request_id", ""),
                                       "content_id": content_id}))
        return {"content_id": content_id, "availability": item.availability.value}

    # --- monitor -----------------------------------------------------------------

    def _percentiles(samples: list[int]) -> dict:
        if not samples:
            return {"p50": None, "p90": None, "p99": None}
        ordered = sorted(samples)

        def at(q: float) -> float:
            idx = min(len(ordered) - 1, max(0, round(q * (len(ordered) - 1))))
            return ordered[idx]

        return {"p50": at(0.50), "p90": at(0.90), "p99": at(0.99)}

    @app.get("/monitor")
    def monitor():
        runtimes = []
        for record in store.query(WORK):
            spec = rec.spec_of(record.body)
            if spec.state in TERMINAL_STATES:
                runtimes.append(spec.updated_at - spec.created_at)
        return {
            "requests": store.count_by_status(REQUEST),
            "works": store.count_by_status(WORK),
            "jobs": store.count_by_status(JOB),
            "work_runtime_ms": _percentiles(runtimes),
            "time": now_ms(),
        }

    @app.get("/monitor/request/{request_id}")
    def monitor_request(request_id: str):
        try:
            record = store.fetch(REQUEST, request_id)
        except NotFound:
            return _error(404, "not_found", f"no request {request_id!r}")
        works = _work_summaries(request_id)
        return {
            "request_id": request_id,
            "state": record.status,
            "works": works,
            "jobs_total": sum(w["jobs_total"] for w in works.values()),
            "jobs_done": sum(w["jobs_done"] for w in works.values()),
        }

    @app.get("/monitor/work/{request_id}/{work_id}/jobs")
    def monitor_jobs(request_id: str, work_id: str):
        wkey = rec.work_key(request_id, work_id)
        try:
            spec = rec.spec_of(store.fetch(WORK, wkey).body)
        except NotFound:
            return _error(404, "not_found", f"no work {wkey!r}")
        jobs = [rec.job_of(r.body) for r in store.query(
            JOB, prefix=rec.job_prefix(wkey, spec.metadata.attempt_counter))]
        return {"work_id": work_id, "request_id": request_id,
                "attempt": spec.metadata.attempt_counter,
                "jobs": [{"job_id": j.job_id, "state": j.state.value,
                          "outputs": j.outputs, "exit_detail": j.exit_detail,
                          "args": j.args} for j in jobs]}

    # --- message --------------------------------------------------------------------

    @app.post("/message", status_code=202)
    def post_message(body: dict, request: Request):
        token = caller(request)
        command = body.get("command", "")
        request_id = body.get("request_id", "")
        if command not in ("abort", "retry"):
            return _error(400, "unknown_command", f"unsupported command {command!r}")
        try:
            record = store.fetch(REQUEST, request_id)
        except NotFound:
            return _error(404, "not_found", f"no request {request_id!r}")
        is_owner = record.body.get("owner") == token.subject
        if not is_owner and config.auth.operator_group not in token.groups:
            return _error(403, "forbidden", "not the owner and not an operator")
        if command == "abort":
            if record.status in ("Finished", "SubFinished", "Failed", "Cancelled"):
                return _error(409, "already_terminal",
                              f"request is {record.status}, cannot abort")
            store.upsert(REQUEST, request_id, record.body, "Aborting")
            if bus is not None:
                bus.publish(Event(EventType.AbortRequest, f"request:{request_id}",
                                  payload={"request_id": request_id}))
        else:
            if bus is not None:
                bus.publish(Event(EventType.NewRequest, f"request:{request_id}",
                                  payload={"request_id": request_id, "command": "retry"}))
        return {"accepted": command, "request_id": request_id}

    # --- log ------------------------------------------------------------------------

    @app.get("/log/{request_id}/{work_id}")
    def get_log(request_id: str, work_id: str):
        wkey = rec.work_key(request_id, work_id)
        try:
            spec = rec.spec_of(store.fetch(WORK, wkey).body)
        except NotFound:
            return _error(404, "not_found", f"no work {wkey!r}")
        handle = spec.metadata.backend_handle
        chunks = [f"work {wkey} state={spec.state.value} attempt={spec.metadata.attempt_counter}"]
        backend = backends.get(handle.backend_name) if handle else None
        if isinstance(backend, LocalBackend) and handle is not None:
            jobs = store.query(JOB, prefix=rec.job_prefix(wkey, spec.metadata.attempt_counter))
            for index, record in enumerate(jobs):
                logs = backend.logs_for(handle.external_id, index)
                chunks.append(f"--- job {record.record_id} stdout ---\n{logs['stdout.log']}")
                if logs["stderr.log"]:
                    chunks.append(f"--- job {record.record_id} stderr ---\n{logs['stderr.log']}")
        else:
            jobs = store.query(JOB, prefix=rec.job_prefix(wkey, spec.metadata.attempt_counter))
            for record in jobs:
                job = rec.job_of(record.body)
                chunks.append(f"{job.job_id}: {job.state.value} {job.exit_detail}".rstrip())
        return Response(content="\n".join(chunks), media_type="text/plain")

    return app
