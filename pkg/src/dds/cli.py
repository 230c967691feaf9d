"""Operator command line: submit, status, abort, logs, monitor.

Exit codes: 0 success, 1 server-reported error or connection failure, 2
usage error. In json mode the raw response body is printed unmodified, so
output is diffable against direct HTTP.
"""

from __future__ import annotations

import json
import sys

import click
import httpx


class Session:
    def __init__(self, server: str, token: str, output: str):
        self.server = server.rstrip("/")
        self.token = token
        self.output = output

    def call(self, method: str, path: str, **kwargs) -> httpx.Response:
        url = f"{self.server}{path}"
        headers = kwargs.pop("headers", {})
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            return httpx.request(method, url, headers=headers, timeout=30.0, **kwargs)
        except httpx.HTTPError as exc:
            click.echo(f"connection to {url} failed: {exc}", err=True)
            sys.exit(1)

    def emit(self, response: httpx.Response, render=None) -> None:
        if response.status_code >= 400:
            click.echo(response.text, err=True)
            sys.exit(1)
        if self.output == "json" or render is None:
            click.echo(response.text)
        else:
            render(response.json())


@click.group()
@click.option("--server", envvar="DDS_SERVER", default="http://127.0.0.1:18860",
              show_default=True, help="service URL (env: DDS_SERVER)")
@click.option("--token", envvar="DDS_TOKEN", default="", help="bearer token (env: DDS_TOKEN)")
@click.option("--format", "output", type=click.Choice(["table", "json"]), default="table",
              show_default=True)
@click.pass_context
def main(ctx, server, token, output):
    """Workflow orchestration client."""
    ctx.obj = Session(server, token, output)


@main.command()
@click.argument("graph_file", type=click.File("rb"))
@click.pass_obj
def submit(session: Session, graph_file):
    """Submit a versioned graph document (file or '-' for stdin)."""
    try:
        document = json.loads(graph_file.read())
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"graph file is not valid JSON: {exc}")
    response = session.call("POST", "/request", json=document)
    session.emit(response, lambda body: click.echo(body["request_id"]))


@main.command()
@click.argument("request_id")
@click.pass_obj
def status(session: Session, request_id):
    """Show a request and its per-work states."""
    response = session.call("GET", f"/request/{request_id}")

    def render(body):
        click.echo(f"request {body['request_id']}: {body['state']} (owner {body['owner']})")
        for work_id, info in sorted(body["works"].items()):
            click.echo(f"  {work_id:<24} {info['state']:<12} "
                       f"jobs {info['jobs_done']}/{info['jobs_total']}"
                       + (f" failed {info['jobs_failed']}" if info["jobs_failed"] else ""))

    session.emit(response, render)


@main.command()
@click.argument("request_id")
@click.pass_obj
def abort(session: Session, request_id):
    """Ask the engine to cancel a request (asynchronous)."""
    response = session.call("POST", "/message",
                            json={"command": "abort", "request_id": request_id})
    session.emit(response, lambda body: click.echo(f"abort accepted for {body['request_id']}"))


@main.command()
@click.argument("request_id")
@click.argument("work_id")
@click.pass_obj
def logs(session: Session, request_id, work_id):
    """Fetch captured log text for one work."""
    response = session.call("GET", f"/log/{request_id}/{work_id}")
    if response.status_code >= 400:
        click.echo(response.text, err=True)
        sys.exit(1)
    click.echo(response.text)


@main.command()
@click.pass_obj
def monitor(session: Session):
    """System-wide status counts and timing percentiles."""
    response = session.call("GET", "/monitor")

    def render(body):
        for kind in ("requests", "works", "jobs"):
            counts = body.get(kind, {})
            line = ", ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "none"
            click.echo(f"{kind:<9} {line}")
        pct = body.get("work_runtime_ms", {})
        click.echo(f"work runtime ms: p50={pct.get('p50')} p90={pct.get('p90')} "
                   f"p99={pct.get('p99')}")

    session.emit(response, render)


@main.command()
@click.option("--username", required=True)
@click.option("--password", required=True)
@click.pass_obj
def auth(session: Session, username, password):
    """Obtain a bearer token for configured credentials."""
    response = session.call("POST", "/auth",
                            json={"username": username, "password": password})
    session.emit(response, lambda body: click.echo(body["token"]))


if __name__ == "__main__":
    main()
