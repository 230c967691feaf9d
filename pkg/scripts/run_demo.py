"""End-to-end demo: real server process, real agent process, CLI client.

Builds a scratch deployment (embedded store, persistent bus, simulated
backend), starts `dds.rest.server` and `dds.agents.service` as separate
processes, then submits a two-stage workflow through the CLI and waits for
it to finish. Exits 0 on success.

    python3 scripts/run_demo.py [--workdir DIR] [--keep]
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import tempfile
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from dds.config import BackendConfig, EngineConfig, UserCred, dump_config  # noqa: E402
from dds.model.graph import Edge, WorkflowGraph  # noqa: E402
from dds.model.serialize import graph_to_dict  # noqa: E402
from dds.model.work import WorkSpec, WorkTemplate  # noqa: E402


def free_port() -> int:
    import socket
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def demo_graph() -> dict:
    def work(wid, hint):
        return WorkSpec(work_id=wid, name=wid,
                        template=WorkTemplate(executable="noop", job_count_hint=hint,
                                              backend="sim"))
    graph = WorkflowGraph(
        request_id="",
        works={"prepare": work("prepare", 4), "analyze": work("analyze", 8)},
        edges=[Edge("prepare", "analyze")])
    return graph_to_dict(graph)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--workdir", default="")
    parser.add_argument("--keep", action="store_true")
    parser.add_argument("--timeout", type=float, default=60.0)
    args = parser.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="dds-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    port = free_port()

    config = EngineConfig()
    config.store.path = str(workdir / "store.db")
    config.bus.backend = "persistent"
    config.rest.host, config.rest.port = "127.0.0.1", port
    config.rest.cache_dir = str(workdir / "cache")
    config.rest.log_dir = str(workdir / "logs")
    config.agents.poll_interval = 0.25
    config.agents.idle_threshold = 0.5
    config.auth.secret = "demo-secret"
    config.auth.users = [UserCred("demo", "demo-pw", ["submitter", "operator"])]
    config.backends = [BackendConfig("sim", "simulated", {"script_inline": json.dumps(
        {"default_latency": 1})})]
    config.roles = ["clerk", "transformer", "carrier", "receiver", "conductor"]
    config_path = workdir / "dds.conf"
    dump_config(config, config_path)

    graph_path = workdir / "demo-graph.json"
    graph_path.write_text(json.dumps(demo_graph()))

    env = {"PYTHONPATH": str(ROOT / "src"), "PATH": "/usr/bin:/bin:/usr/local/bin"}
    server = subprocess.Popen(
        [sys.executable, "-m", "dds.rest.server", "--config", str(config_path)], env=env)
    agents = subprocess.Popen(
        [sys.executable, "-m", "dds.agents.service", "--config", str(config_path)], env=env)

    base = f"http://127.0.0.1:{port}"

    def cli(*cmd_args, token=""):
        cmd = [sys.executable, "-m", "dds.cli", "--server", base]
        if token:
            cmd += ["--token", token]
        return subprocess.run(cmd + list(cmd_args), env=env, capture_output=True, text=True)

    try:
        deadline = time.time() + 15
        while time.time() < deadline:
            if cli("--format", "json", "auth", "--username", "demo",
                   "--password", "demo-pw").returncode == 0:
                break
            time.sleep(0.2)
        token = json.loads(cli("--format", "json", "auth", "--username", "demo",
                               "--password", "demo-pw").stdout)["token"]

        submitted = cli("submit", str(graph_path), token=token)
        if submitted.returncode != 0:
            print("submit failed:", submitted.stderr, file=sys.stderr)
            return 1
        request_id = submitted.stdout.strip()
        print(f"submitted {request_id}")

        deadline = time.time() + args.timeout
        state = "?"
        while time.time() < deadline:
            shown = cli("--format", "json", "status", request_id, token=token)
            state = json.loads(shown.stdout)["state"]
            if state in ("Finished", "SubFinished", "Failed", "Cancelled"):
                break
            time.sleep(0.3)
        print(f"request {request_id}: {state}")
        final = cli("status", request_id, token=token)
        print(final.stdout)
        cli("monitor", token=token)
        return 0 if state == "Finished" else 1
    finally:
        server.terminate()
        agents.terminate()
        server.wait(timeout=5)
        agents.wait(timeout=5)
        if not args.keep and not args.workdir:
            import shutil
            shutil.rmtree(workdir, ignore_errors=True)


if __name__ == "__main__":
    raise SystemExit(main())
