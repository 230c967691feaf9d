"""Simulated backend: scripted, deterministic, hold/release, streams."""

import pytest

from dds.backends import JobPhase, JobSubmission, SimulatedBackend
from dds.errors import UnknownHandle
from dds.store import EmbeddedStore


def subs(n, held=()):
    return [JobSubmission(job_id=f"j{i}", index=i, args={"i": i}, held=i in held)
            for i in range(n)]


def phases(backend, handle):
    return {s.job_id: s.phase for s in backend.poll_task(handle)}


def test_submit_poll_to_done():
    backend = SimulatedBackend(script={"default_latency": 1})
    handle = backend.submit_task("noop", subs(2), "key-1")
    snap = backend.poll_task(handle)   # step 1: still queued (latency 1)
    assert {s.phase for s in snap} == {JobPhase.Queued}
    backend.poll_task(handle)          # step 2: running
    final = backend.poll_task(handle)  # step 3: done
    assert {s.phase for s in final} == {JobPhase.Done}


def test_poll_immediately_after_submit_all_queued_or_held():
    backend = SimulatedBackend(script={"default_latency": 3}, advance_on_poll=False)
    handle = backend.submit_task("noop", subs(4, held={2, 3}), "key-q")
    snap = backend.poll_task(handle)
    assert all(s.phase == JobPhase.Queued for s in snap)
    assert [s.held for s in snap] == [False, False, True, True]


def test_duplicate_idempotency_key_returns_original_handle():
    backend = SimulatedBackend()
    h1 = backend.submit_task("noop", subs(1), "key-dup")
    h2 = backend.submit_task("noop", subs(1), "key-dup")
    assert h1.external_id == h2.external_id
    assert len(backend._tasks) == 1


def test_scripted_phase_sequences_match_script():
    script = {
        "default_latency": 1,
        "jobs": {
            "0": {"latency": 3},
            "1": {"outcome": "failed", "exit_detail": "oom"},
            "2": {"outputs": {"metric": 0.5}, "produced_contents": [{"name": "f2"}]},
        },
    }
    backend = SimulatedBackend(script=script)
    handle = backend.submit_task("noop", subs(3), "key-s")
    observed: dict[str, list[str]] = {f"j{i}": [] for i in range(3)}
    for _ in range(8):
        for status in backend.poll_task(handle):
            seq = observed[status.job_id]
            if not seq or seq[-1] != status.phase.value:
                seq.append(status.phase.value)
    assert observed["j0"] == ["Queued", "Running", "Done"]
    assert observed["j1"] == ["Queued", "Running", "Failed"]
    assert observed["j2"] == ["Queued", "Running", "Done"]
    final = {s.job_id: s for s in backend.poll_task(handle)}
    assert final["j1"].exit_detail == "oom"
    assert final["j2"].outputs == {"metric": 0.5}
    assert final["j2"].produced_contents == [{"name": "f2"}]


def test_deterministic_given_script_and_seed():
    script = {"seed": 11, "failure_rate": 0.3, "default_latency": 2}
    runs = []
    for _ in range(2):
        backend = SimulatedBackend(script=script)
        handle = backend.submit_task("noop", subs(40), "key-d")
        backend.run_to_completion(handle)
        runs.append({s.job_id: s.phase for s in backend.poll_task(handle)})
    assert runs[0] == runs[1]
    assert JobPhase.Failed in runs[0].values()
    assert JobPhase.Done in runs[0].values()


def test_held_jobs_wait_for_release():
    backend = SimulatedBackend(script={"default_latency": 1})
    handle = backend.submit_task("noop", subs(2, held={1}), "key-h")
    backend.run_to_completion(handle)
    snap = phases(backend, handle)
    assert snap["j0"] == JobPhase.Done
    assert snap["j1"] == JobPhase.Queued
    backend.release_jobs(handle, ["j1"])
    backend.release_jobs(handle, ["j1"])  # idempotent
    backend.run_to_completion(handle)
    assert phases(backend, handle)["j1"] == JobPhase.Done


def test_cancel_drives_nonterminal_to_failed_cancelled():
    backend = SimulatedBackend(script={"default_latency": 5})
    handle = backend.submit_task("noop", subs(3, held={2}), "key-c")
    backend.step(handle)
    backend.cancel_task(handle)
    for status in backend.poll_task(handle):
        assert status.phase == JobPhase.Failed
        assert status.exit_detail == "cancelled"


def test_stream_covers_poll_terminal_set():
    backend = SimulatedBackend(script={"seed": 5, "failure_rate": 0.2, "default_latency": 1})
    handle = backend.submit_task("noop", subs(1000), "key-big")
    backend.run_to_completion(handle)
    cursor, messages = backend.stream_status(handle, 0)
    terminal_from_stream = {m.job_id: m.phase for m in messages
                            if m.phase in (JobPhase.Done, JobPhase.Failed)}
    terminal_from_poll = {s.job_id: s.phase for s in backend.poll_task(handle)}
    assert terminal_from_stream == terminal_from_poll
    # resuming from the cursor yields nothing new
    assert backend.stream_status(handle, cursor)[1] == []
    # an over-advanced cursor (backend rebuilt) replays from the start
    assert len(backend.stream_status(handle, cursor + 1000)[1]) == len(messages)


def test_one_job_stream_has_three_messages_ending_done():
    backend = SimulatedBackend(script={"default_latency": 1})
    handle = backend.submit_task("noop", subs(1), "key-3")
    backend.run_to_completion(handle)
    _, messages = backend.stream_status(handle, 0)
    assert len(messages) >= 3  # Queued, Running, Done
    assert [m.phase for m in messages[:3]] == [JobPhase.Queued, JobPhase.Running, JobPhase.Done]
    assert messages[-1].phase == JobPhase.Done


def test_unknown_handle():
    backend = SimulatedBackend()
    from dds.model.work import TaskHandle
    with pytest.raises(UnknownHandle):
        backend.poll_task(TaskHandle("sim", "nope"))


def test_store_backed_state_survives_new_instance(tmp_path):
    store = EmbeddedStore(str(tmp_path / "s.db"))
    backend = SimulatedBackend(name="simA", script={"default_latency": 1}, store=store)
    handle = backend.submit_task("noop", subs(2), "key-p")
    backend.step(handle, steps=1)

    reborn = SimulatedBackend(name="simA", script={"default_latency": 1}, store=store)
    reborn.run_to_completion(handle)
    assert {s.phase for s in reborn.poll_task(handle)} == {JobPhase.Done}
    # idempotency keys survive too
    again = reborn.submit_task("noop", subs(2), "key-p")
    assert again.external_id == handle.external_id
