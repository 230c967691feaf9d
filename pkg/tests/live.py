"""Shared live-service harness for REST/CLI/e2e tests and scripts."""

from __future__ import annotations

import socket
import threading
import time

import httpx
import uvicorn

from dds.config import EngineConfig, UserCred


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def base_config(tmp_path, users=True) -> EngineConfig:
    config = EngineConfig()
    config.store.path = str(tmp_path / "store.db")
    config.rest.cache_dir = str(tmp_path / "cache")
    config.rest.port = free_port()
    config.agents.poll_interval = 0.05
    config.agents.idle_threshold = 0.05
    config.agents.lease = 30.0
    config.auth.secret = "test-secret"
    if users:
        config.auth.users = [
            UserCred("alice", "alice-pw", ["submitter"]),
            UserCred("oscar", "oscar-pw", ["submitter", "operator"]),
            UserCred("viewer", "viewer-pw", []),
        ]
    return config


class LiveServer:
    def __init__(self, app, host: str, port: int):
        self._config = uvicorn.Config(app, host=host, port=port, log_level="error")
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.base_url = f"http://{host}:{port}"

    def start(self) -> "LiveServer":
        self._thread.start()
        deadline = time.time() + 10
        while time.time() < deadline:
            try:
                if httpx.get(f"{self.base_url}/ping", timeout=1.0).status_code == 200:
                    return self
            except httpx.HTTPError:
                time.sleep(0.02)
        raise RuntimeError("server did not come up")

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=5.0)


def ticker(agents, stop: threading.Event):
    """Round-robin agent driver thread for live tests."""
    def run():
        while not stop.is_set():
            for agent in agents:
                try:
                    agent.tick()
                except Exception:
                    pass
            stop.wait(0.01)
    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return thread
