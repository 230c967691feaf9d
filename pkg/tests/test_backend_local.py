"""Local process backend: real subprocesses, crash re-attach, cancellation."""

import os
import signal
import time

import pytest

from dds.backends import JobPhase, JobSubmission, LocalBackend
from dds.errors import PayloadUnresolvable


def wait_terminal(backend, handle, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        statuses = backend.poll_task(handle)
        if all(s.phase in (JobPhase.Done, JobPhase.Failed) for s in statuses):
            return statuses
        time.sleep(0.05)
    raise AssertionError(f"jobs not terminal: {[s.phase for s in backend.poll_task(handle)]}")


@pytest.fixture
def backend(tmp_path):
    return LocalBackend(name="loc", root=str(tmp_path / "tasks"), timeout=30.0)


def test_echo_job_captures_output(backend):
    handle = backend.submit_task(
        'echo \'{"result": 42, "produced_contents": [{"collection": "c", "name": "f0"}]}\'',
        [JobSubmission("j0", 0)], "key-echo")
    statuses = wait_terminal(backend, handle)
    assert statuses[0].phase == JobPhase.Done
    assert statuses[0].outputs == {"result": 42}
    assert statuses[0].produced_contents == [{"collection": "c", "name": "f0"}]


def test_parameter_and_job_index_substitution(backend):
    handle = backend.submit_task(
        'echo "{\\"got\\": \\"{flavor}-{job_index}\\"}"',
        [JobSubmission("j0", 0), JobSubmission("j1", 1)],
        "key-sub", params={"flavor": "alpha"})
    statuses = wait_terminal(backend, handle)
    assert statuses[0].outputs == {"got": "alpha-0"}
    assert statuses[1].outputs == {"got": "alpha-1"}


def test_nonzero_exit_is_failed_with_detail(backend):
    handle = backend.submit_task("exit 3", [JobSubmission("j0", 0)], "key-fail")
    statuses = wait_terminal(backend, handle)
    assert statuses[0].phase == JobPhase.Failed
    assert statuses[0].exit_detail == "exit 3"


def test_duplicate_idempotency_key_single_execution(backend, tmp_path):
    marker = tmp_path / "count.txt"
    command = f"echo run >> {marker}"
    h1 = backend.submit_task(command, [JobSubmission("j0", 0)], "key-once")
    h2 = backend.submit_task(command, [JobSubmission("j0", 0)], "key-once")
    assert h1.external_id == h2.external_id
    wait_terminal(backend, h1)
    assert marker.read_text().count("run") == 1


def test_unresolvable_command_rejected(backend):
    with pytest.raises(PayloadUnresolvable):
        backend.submit_task("definitely-not-a-command-xyz --flag",
                            [JobSubmission("j0", 0)], "key-bad")


def test_held_jobs_spawn_only_after_release(backend):
    handle = backend.submit_task("echo '{}'",
                                 [JobSubmission("j0", 0), JobSubmission("j1", 1, held=True)],
                                 "key-held")
    time.sleep(0.3)
    statuses = {s.job_id: s for s in backend.poll_task(handle)}
    assert statuses["j0"].phase == JobPhase.Done
    assert statuses["j1"].phase == JobPhase.Queued and statuses["j1"].held
    backend.release_jobs(handle, ["j1"])
    backend.release_jobs(handle, ["j1"])  # second call is a no-op
    statuses = wait_terminal(backend, handle)
    assert statuses[1].phase == JobPhase.Done


def test_cancel_mid_run_reaps_children_within_5s(backend):
    handle = backend.submit_task("sleep 60", [JobSubmission(f"j{i}", i) for i in range(3)],
                                 "key-cancel")
    time.sleep(0.3)
    pids = []
    for i in range(3):
        pid_info = LocalBackend._read_pid(backend._job_dir(handle.external_id, i))
        assert pid_info is not None
        pids.append(pid_info[0])
    t0 = time.time()
    backend.cancel_task(handle)
    statuses = wait_terminal(backend, handle, timeout=5.0)
    assert time.time() - t0 < 5.0
    for s in statuses:
        assert s.phase == JobPhase.Failed
        assert s.exit_detail == "cancelled"
    for pid in pids:
        with pytest.raises(OSError):
            os.kill(pid, 0)  # process group is gone


def test_per_job_timeout(tmp_path):
    backend = LocalBackend(name="loc", root=str(tmp_path / "t"), timeout=0.4)
    handle = backend.submit_task("sleep 30", [JobSubmission("j0", 0)], "key-to")
    statuses = wait_terminal(backend, handle, timeout=8.0)
    assert statuses[0].phase == JobPhase.Failed
    assert statuses[0].exit_detail == "timeout"


def test_stream_queued_running_done(backend):
    handle = backend.submit_task("sleep 0.2; echo '{\"ok\": true}'",
                                 [JobSubmission("j0", 0)], "key-stream")
    wait_terminal(backend, handle)
    _, messages = backend.stream_status(handle, 0)
    seq = [m.phase for m in messages]
    assert len(seq) >= 3
    assert seq[0] == JobPhase.Queued
    assert JobPhase.Running in seq
    assert seq[-1] == JobPhase.Done


def test_reattach_after_agent_restart(tmp_path):
    root = str(tmp_path / "tasks")
    first = LocalBackend(name="loc", root=root)
    handle = first.submit_task("sleep 0.4; echo '{\"v\": 7}'",
                               [JobSubmission("j0", 0)], "key-restart")
    time.sleep(0.1)
    # the submitting agent dies; a fresh instance re-attaches from disk
    reborn = LocalBackend(name="loc", root=root)
    statuses = wait_terminal(reborn, handle)
    assert statuses[0].phase == JobPhase.Done
    assert statuses[0].outputs == {"v": 7}
    # and the idempotency key still maps to the original task
    again = reborn.submit_task("sleep 0.4; echo '{\"v\": 7}'",
                               [JobSubmission("j0", 0)], "key-restart")
    assert again.external_id == handle.external_id


def test_killed_job_reports_lost(backend):
    handle = backend.submit_task("sleep 30", [JobSubmission("j0", 0)], "key-lost")
    time.sleep(0.3)
    pid_info = LocalBackend._read_pid(backend._job_dir(handle.external_id, 0))
    os.killpg(pid_info[0], signal.SIGKILL)  # shell dies before writing exit.code
    statuses = wait_terminal(backend, handle, timeout=8.0)
    assert statuses[0].phase == JobPhase.Failed
    assert statuses[0].exit_detail == "lost"


def test_logs_accessible(backend):
    handle = backend.submit_task("echo hello; echo oops >&2; echo '{}'",
                                 [JobSubmission("j0", 0)], "key-logs")
    wait_terminal(backend, handle)
    logs = backend.logs_for(handle.external_id, 0)
    assert "hello" in logs["stdout.log"]
    assert "oops" in logs["stderr.log"]
