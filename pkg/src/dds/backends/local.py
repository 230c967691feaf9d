"""Local process executor: one subprocess per job, state on disk.

Jobs are launched in their own sessions with stdout/stderr redirected by the
wrapping shell and the exit code written to a file, so results survive the
death of the submitting agent; a restarted agent re-attaches from the task
directory. PID liveness checks compare /proc start times to dodge PID
reuse. A job reports its outputs by printing a JSON object as the last line
of stdout (see docs/wire-formats.md).

Task directory layout:
    <root>/<external_id>/manifest.json
    <root>/<external_id>/j000042/{pid,started_at,exit.code,detail,
                                  stdout.log,stderr.log,released,cancelled}
"""

from __future__ import annotations

import json
import os
import re
import shlex
import shutil
import signal
import subprocess
import threading
import time
from pathlib import Path

from dds._util import new_id, now_ms
from dds.backends.base import BackendJobStatus, JobPhase, JobSubmission, WorkloadBackend
from dds.errors import PayloadUnresolvable, UnknownHandle
from dds.model.work import TaskHandle

_LOST_GRACE_S = 2.0

# Only {identifier} tokens substitute; literal braces (JSON payloads in
# command lines) pass through untouched.
_TOKEN = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _pid_stat(pid: int) -> tuple[str, int] | None:
    """(state char, starttime) from /proc, or None when the pid is gone."""
    try:
        stat = Path(f"/proc/{pid}/stat").read_text()
    except OSError:
        return None
    # the comm field may contain spaces; split after its closing paren.
    # state is the next field, starttime is field 22 (1-based).
    after = stat.rsplit(")", 1)[1].split()
    return after[0], int(after[19])


def _pid_start_time(pid: int) -> int | None:
    stat = _pid_stat(pid)
    return None if stat is None else stat[1]


def _pid_alive(pid: int, expected_start: int | None) -> bool:
    stat = _pid_stat(pid)
    if stat is None or stat[0] == "Z":  # zombies are dead for our purposes
        return False
    return expected_start is None or stat[1] == expected_start


class LocalBackend(WorkloadBackend):
    def __init__(self, name: str = "local", root: str = "local-backend",
                 timeout: float = 600.0, max_parallel: int = 16):
        self.name = name
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "keys").mkdir(exist_ok=True)
        self.timeout = timeout
        self.max_parallel = max_parallel
        self._lock = threading.RLock()
        self._procs: dict[tuple[str, str], subprocess.Popen] = {}
        self._streams: dict[str, dict] = {}  # external_id -> {seq, messages, last_seen}
        self._reaper = threading.Thread(target=self._reap_loop, daemon=True, name=f"{name}-reaper")
        self._reaper_started = False

    # --- paths -------------------------------------------------------------

    def _task_dir(self, external_id: str) -> Path:
        return self.root / external_id

    def _job_dir(self, external_id: str, index: int) -> Path:
        return self._task_dir(external_id) / f"j{index:06d}"

    def _manifest(self, external_id: str) -> dict:
        path = self._task_dir(external_id) / "manifest.json"
        try:
            return json.loads(path.read_text())
        except OSError as exc:
            raise UnknownHandle(external_id) from exc

    # --- submission ----------------------------------------------------------

    _SH_BUILTINS = frozenset({
        "exit", "cd", "true", "false", "test", "[", "set", "export", "read",
        "wait", "exec", "eval", ":", ".", "echo", "printf", "sleep",
    })

    def submit_task(self, executable: str, jobs: list[JobSubmission],
                    idempotency_key: str, params: dict | None = None) -> TaskHandle:
        params = params or {}
        first_token = shlex.split(self._render(executable, params, jobs[0] if jobs else None))[0]
        if ("/" not in first_token and first_token not in self._SH_BUILTINS
                and shutil.which(first_token) is None):
            raise PayloadUnresolvable(f"command {first_token!r} not found on PATH")

        key_file = self.root / "keys" / idempotency_key.replace("/", "_")
        with self._lock:
            existing = self._claim_key(key_file)
            if existing is not None:
                manifest = self._manifest(existing)
                return TaskHandle(self.name, existing, manifest["submitted_at"])

            external_id = new_id("localtask")
            task_dir = self._task_dir(external_id)
            task_dir.mkdir(parents=True)
            manifest = {
                "executable": executable,
                "params": params,
                "idempotency_key": idempotency_key,
                "submitted_at": now_ms(),
                "jobs": {j.job_id: {"index": j.index, "args": j.args, "held": j.held}
                         for j in jobs},
            }
            (task_dir / "manifest.json").write_text(json.dumps(manifest))
            key_file.write_text(external_id)
            for job in jobs:
                self._job_dir(external_id, job.index).mkdir()
                self._note(external_id, job.job_id, JobPhase.Queued, held=job.held)
            self._pump(external_id, manifest)
            self._ensure_reaper()
            return TaskHandle(self.name, external_id, manifest["submitted_at"])

    def _claim_key(self, key_file: Path) -> str | None:
        try:
            fd = os.open(key_file, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
            return None  # we won the key; caller fills it in
        except FileExistsError:
            for _ in range(100):  # racing writer may not have written yet
                text = key_file.read_text().strip()
                if text:
                    return text
                time.sleep(0.01)
            return None

    def _render(self, executable: str, params: dict, job: JobSubmission | None) -> str:
        mapping: dict = dict(params)
        if job is not None:
            mapping.update(job_id=job.job_id, job_index=job.index,
                           args=json.dumps(job.args) if not isinstance(job.args, str) else job.args)

        def replace(match: re.Match) -> str:
            name = match.group(1)
            if name not in mapping:
                return match.group(0)
            value = mapping[name]
            return value if isinstance(value, str) else json.dumps(value)

        return _TOKEN.sub(replace, executable)

    # --- spawning ------------------------------------------------------------

    def _pump(self, external_id: str, manifest: dict) -> None:
        """Spawn eligible unspawned jobs up to the parallelism cap."""
        running = sum(1 for (eid, _), proc in self._procs.items()
                      if eid == external_id and proc.poll() is None)
        for job_id, info in sorted(manifest["jobs"].items(), key=lambda kv: kv[1]["index"]):
            if running >= self.max_parallel:
                break
            job_dir = self._job_dir(external_id, info["index"])
            if info["held"] and not (job_dir / "released").exists():
                continue
            if (job_dir / "pid").exists() or (job_dir / "exit.code").exists() \
                    or (job_dir / "cancelled").exists():
                continue
            self._spawn(external_id, manifest, job_id, info)
            running += 1

    def _spawn(self, external_id: str, manifest: dict, job_id: str, info: dict) -> None:
        job_dir = self._job_dir(external_id, info["index"])
        submission = JobSubmission(job_id=job_id, index=info["index"], args=info.get("args"))
        command = self._render(manifest["executable"], manifest.get("params", {}), submission)
        # subshell so a payload `exit` cannot skip the exit-code capture
        script = f"( {command} ) > stdout.log 2> stderr.log; echo $? > exit.code"
        env = dict(os.environ)
        env.update(
            DDS_JOB_ID=job_id,
            DDS_JOB_INDEX=str(info["index"]),
            DDS_ARGS=json.dumps(info.get("args")),
            DDS_PARAMS=json.dumps(manifest.get("params", {})),
        )
        proc = subprocess.Popen(["/bin/sh", "-c", script], cwd=job_dir,
                                start_new_session=True, env=env)
        start = _pid_start_time(proc.pid)
        (job_dir / "pid").write_text(f"{proc.pid} {start if start is not None else ''}".strip())
        (job_dir / "started_at").write_text(str(time.time()))
        self._procs[(external_id, job_id)] = proc
        self._note(external_id, job_id, JobPhase.Running)

    def _ensure_reaper(self) -> None:
        if not self._reaper_started:
            self._reaper_started = True
            self._reaper.start()

    def _reap_loop(self) -> None:
        while True:
            time.sleep(0.05)
            with self._lock:
                finished = [(key, proc) for key, proc in self._procs.items()
                            if proc.poll() is not None]
                for key, _ in finished:
                    external_id, job_id = key
                    del self._procs[key]
                    try:
                        manifest = self._manifest(external_id)
                        self._refresh_job(external_id, manifest, job_id)
                        self._pump(external_id, manifest)
                    except UnknownHandle:
                        pass
                # timeout enforcement for everything this instance can see
                for key, proc in list(self._procs.items()):
                    external_id, job_id = key
                    try:
                        manifest = self._manifest(external_id)
                    except UnknownHandle:
                        continue
                    info = manifest["jobs"][job_id]
                    job_dir = self._job_dir(external_id, info["index"])
                    self._enforce_timeout(job_dir)

    def _enforce_timeout(self, job_dir: Path) -> None:
        try:
            started = float((job_dir / "started_at").read_text())
        except OSError:
            return
        if (job_dir / "exit.code").exists() or time.time() - started < self.timeout:
            return
        self._kill_job(job_dir, detail="timeout", code="124")

    def _kill_job(self, job_dir: Path, detail: str, code: str) -> None:
        pid = self._read_pid(job_dir)
        if pid is not None and _pid_alive(*pid):
            try:
                os.killpg(pid[0], signal.SIGTERM)
            except (ProcessLookupError, PermissionError):
                pass
            for _ in range(20):
                if not _pid_alive(*pid):
                    break
                time.sleep(0.1)
            if _pid_alive(*pid):
                try:
                    os.killpg(pid[0], signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    pass
        if not (job_dir / "exit.code").exists():
            (job_dir / "detail").write_text(detail)
            (job_dir / "exit.code").write_text(code)

    @staticmethod
    def _read_pid(job_dir: Path) -> tuple[int, int | None] | None:
        try:
            parts = (job_dir / "pid").read_text().split()
        except OSError:
            return None
        pid = int(parts[0])
        start = int(parts[1]) if len(parts) > 1 else None
        return pid, start

    # --- status --------------------------------------------------------------

    def _job_status(self, external_id: str, manifest: dict, job_id: str) -> BackendJobStatus:
        info = manifest["jobs"][job_id]
        job_dir = self._job_dir(external_id, info["index"])
        if (job_dir / "cancelled").exists() and not (job_dir / "exit.code").exists():
            return BackendJobStatus(job_id, JobPhase.Failed, exit_detail="cancelled")
        exit_file = job_dir / "exit.code"
        if exit_file.exists():
            code = exit_file.read_text().strip() or "1"
            detail_file = job_dir / "detail"
            detail = detail_file.read_text().strip() if detail_file.exists() else ""
            if (job_dir / "cancelled").exists():
                return BackendJobStatus(job_id, JobPhase.Failed, exit_detail=detail or "cancelled")
            if code == "0":
                outputs = self._parse_outputs(job_dir)
                produced = outputs.pop("produced_contents", [])
                return BackendJobStatus(job_id, JobPhase.Done, outputs=outputs,
                                        produced_contents=produced)
            return BackendJobStatus(job_id, JobPhase.Failed,
                                    exit_detail=detail or f"exit {code}")
        pid = self._read_pid(job_dir)
        if pid is not None:
            if _pid_alive(*pid):
                return BackendJobStatus(job_id, JobPhase.Running)
            try:
                started = float((job_dir / "started_at").read_text())
            except OSError:
                started = 0.0
            if time.time() - started < _LOST_GRACE_S:
                return BackendJobStatus(job_id, JobPhase.Running)
            return BackendJobStatus(job_id, JobPhase.Failed, exit_detail="lost")
        held = info["held"] and not (job_dir / "released").exists()
        return BackendJobStatus(job_id, JobPhase.Queued, held=held)

    @staticmethod
    def _parse_outputs(job_dir: Path) -> dict:
        try:
            lines = (job_dir / "stdout.log").read_text().splitlines()
        except OSError:
            return {}
        for line in reversed(lines):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError:
                return {}
            return doc if isinstance(doc, dict) else {}
        return {}

    def poll_task(self, handle: TaskHandle) -> list[BackendJobStatus]:
        with self._lock:
            manifest = self._manifest(handle.external_id)
            self._pump(handle.external_id, manifest)
            statuses = []
            for job_id, info in sorted(manifest["jobs"].items(), key=lambda kv: kv[1]["index"]):
                status = self._job_status(handle.external_id, manifest, job_id)
                self._note_status(handle.external_id, status)
                statuses.append(status)
            return statuses

    def _refresh_job(self, external_id: str, manifest: dict, job_id: str) -> None:
        self._note_status(external_id, self._job_status(external_id, manifest, job_id))

    def release_jobs(self, handle: TaskHandle, job_ids: list[str]) -> None:
        with self._lock:
            manifest = self._manifest(handle.external_id)
            for job_id in job_ids:
                info = manifest["jobs"].get(job_id)
                if info is None:
                    continue
                marker = self._job_dir(handle.external_id, info["index"]) / "released"
                if not marker.exists():
                    marker.write_text(str(now_ms()))
            self._pump(handle.external_id, manifest)

    def cancel_task(self, handle: TaskHandle) -> None:
        with self._lock:
            manifest = self._manifest(handle.external_id)
            for job_id, info in manifest["jobs"].items():
                job_dir = self._job_dir(handle.external_id, info["index"])
                if (job_dir / "exit.code").exists():
                    continue
                (job_dir / "cancelled").write_text(str(now_ms()))
                self._kill_job(job_dir, detail="cancelled", code="143")
                self._note_status(handle.external_id,
                                  self._job_status(handle.external_id, manifest, job_id))

    # --- stream ----------------------------------------------------------------

    def _stream(self, external_id: str) -> dict:
        return self._streams.setdefault(external_id, {"seq": 0, "messages": [], "last": {}})

    def _note(self, external_id: str, job_id: str, phase: JobPhase, held: bool = False) -> None:
        self._note_status(external_id, BackendJobStatus(job_id, phase, held=held))

    def _note_status(self, external_id: str, status: BackendJobStatus) -> None:
        stream = self._stream(external_id)
        marker = (status.phase.value, status.held)
        if stream["last"].get(status.job_id) == marker:
            return
        stream["last"][status.job_id] = marker
        stream["seq"] += 1
        stream["messages"].append({"seq": stream["seq"], "status": status.to_dict()})

    def stream_status(self, handle: TaskHandle, after_seq: int = 0) -> tuple[int, list[BackendJobStatus]]:
        with self._lock:
            # observing is what generates messages, so refresh first
            manifest = self._manifest(handle.external_id)
            for job_id in manifest["jobs"]:
                self._refresh_job(handle.external_id, manifest, job_id)
            stream = self._stream(handle.external_id)
            if after_seq > stream["seq"]:
                after_seq = 0
            messages = [m for m in stream["messages"] if m["seq"] > after_seq]
            return stream["seq"], [BackendJobStatus.from_dict(m["status"]) for m in messages]

    def logs_for(self, external_id: str, job_index: int) -> dict[str, str]:
        """Captured stdout/stderr text, for the log endpoint."""
        job_dir = self._job_dir(external_id, job_index)
        out: dict[str, str] = {}
        for name in ("stdout.log", "stderr.log"):
            try:
                out[name] = (job_dir / name).read_text()
            except OSError:
                out[name] = ""
        return out
