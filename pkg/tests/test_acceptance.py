"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The scale and crash
scenarios dominate the runtime (a few minutes total).
"""

import json
import os
import random
import signal
import subprocess
import sys
import threading
import time
from pathlib import Path

from dds.agents import CarrierAgent, ClerkAgent, ReceiverAgent, TransformerAgent
from dds.agents import records as rec
from dds.agents.ingest import IndexCache, ingest_statuses
from dds.backends import JobSubmission, SimulatedBackend
from dds.bus import (
    Event, EventType, LocalEventBus, PersistentEventBus,
    SocketBusServer, SocketEventBus, merge_pending,
)
from dds.config import BackendConfig, EngineConfig, dump_config
from dds.dagengine.index import build_index, mark_done
from dds.dagengine.jobs import ContentItem, JobNode, content_to_dict
from dds.model.graph import Edge, LoopBlock, WorkflowGraph
from dds.model.serialize import deserialize_graph, serialize_graph
from dds.model.states import LifecycleEvent, WorkState
from dds.model.work import (
    FromOutput, JobDef, ParameterValue, WorkMetadata, WorkSpec, WorkTemplate,
)
from dds.store import CONTENT, EmbeddedStore, JOB, REQUEST, WORK
from dds.submission import submit_request

from conftest import make_work, metric_cond

ROOT = Path(__file__).resolve().parent.parent


def report(criterion: str) -> None:
    print(f"\nACCEPTANCE [{criterion}]: PASS", flush=True)


def make_env(tmp_path, poll=0.05, idle=0.05, lease=30.0):
    config = EngineConfig()
    config.store.path = str(tmp_path / "store.db")
    config.agents.poll_interval = poll
    config.agents.idle_threshold = idle
    config.agents.lease = lease
    store = EmbeddedStore(config.store.path)
    return config, store


def tick_all(agents, rounds=1):
    for _ in range(rounds):
        for agent in agents:
            agent.tick()


def request_state(store, request_id):
    return store.fetch(REQUEST, request_id).status


TERMINAL = ("Finished", "SubFinished", "Failed", "Cancelled")


# =============================================================================
# Criterion 1: Rubin-scale DAG
# =============================================================================

def _layered_dag(wkey, layers, width, rng):
    jobs = []
    for layer in range(layers):
        for k in range(width):
            idx = layer * width + k
            deps = frozenset(
                rec.job_record_id(wkey, 0, (layer - 1) * width + rng.randrange(width))
                for _ in range(rng.randint(1, 3))) if layer else frozenset()
            jobs.append(JobNode(job_id=rec.job_record_id(wkey, 0, idx),
                                parent_work=wkey, depends_on=deps))
    return jobs


def test_rubin_scale_100k_jobs(tmp_path):
    """100,000-job DAG replayed through receiver/trigger on the simulated
    backend: exactly-once release, zero safety violations, < 60s, < 2 GiB."""
    import resource
    started = time.monotonic()
    rng = random.Random(42)
    config, store = make_env(tmp_path)
    request_id, work_id = "req-rubin", "dag"
    wkey = rec.work_key(request_id, work_id)

    jobs = _layered_dag(wkey, layers=200, width=500, rng=rng)
    assert len(jobs) == 100_000
    by_id = {j.job_id: j for j in jobs}
    store.upsert_many(JOB, [(j.job_id, rec.job_body(j), j.state.value) for j in jobs])

    backend = SimulatedBackend(name="sim", script={"default_latency": 0})
    probe_index = build_index(jobs)
    submissions = [JobSubmission(job_id=j.job_id, index=i,
                                 held=j.job_id not in probe_index.initial_ready)
                   for i, j in enumerate(jobs)]
    handle = backend.submit_task("noop", submissions, "key-rubin")
    spec = WorkSpec(work_id=work_id, name=work_id,
                    template=WorkTemplate(executable="noop"),
                    metadata=WorkMetadata(backend_handle=handle),
                    state=WorkState.Submitted, request_id=request_id)
    store.upsert(WORK, wkey, rec.work_body(spec), "Submitted")

    cache = IndexCache()
    released_ever: set[str] = set()
    cursor = 0

    def ingest(messages):
        outcome = ingest_statuses(store, spec, wkey, backend, messages, cache)
        # exactly-once: no job appears in two release sets
        assert released_ever.isdisjoint(outcome.released), "double release"
        index, _jobs = cache.get((wkey, 0))
        for job_id in outcome.released:
            # safety: every dependency of a released job is already done
            assert by_id[job_id].depends_on <= index.done, "unsafe release"
        released_ever.update(outcome.released)
        return outcome

    outcome = ingest([])  # reconcile: releases the root layer
    rounds = 0
    while not outcome.all_terminal:
        rounds += 1
        assert rounds < 2000, "replay did not converge"
        backend.step(handle, steps=1)
        cursor, messages = backend.stream_status(handle, cursor)
        if messages:
            outcome = ingest(messages)

    elapsed = time.monotonic() - started
    peak_gib = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / (1024 ** 2)
    assert released_ever == set(by_id), "not every job was released exactly once"
    assert outcome.done == 100_000
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    assert peak_gib < 2.0, f"peak memory {peak_gib:.2f} GiB"

    # released-set stream vs brute-force oracle on a 1,000-node subsample
    sub_wkey = rec.work_key(request_id, "sub")
    sub_jobs = _layered_dag(sub_wkey, layers=20, width=50, rng=random.Random(7))
    sub_by_id = {j.job_id: j for j in sub_jobs}
    index = build_index(sub_jobs)
    done: set[str] = set()
    engine_released = set(index.initial_ready)
    runnable = list(index.initial_ready)
    rng2 = random.Random(3)
    while runnable:
        job_id = runnable.pop(rng2.randrange(len(runnable)))
        newly = mark_done(index, job_id)
        done.add(job_id)
        brute = {j.job_id for j in sub_jobs
                 if j.job_id not in done and j.job_id not in engine_released
                 and j.depends_on <= done}
        assert newly == brute, "engine release set diverged from brute-force oracle"
        engine_released |= newly
        runnable.extend(newly)
    assert engine_released == set(sub_by_id)
    report(f"rubin-scale DAG: 100k jobs in {elapsed:.1f}s, {peak_gib:.2f} GiB, "
           f"oracle-matched on 1k subsample")


# =============================================================================
# Criterion 2: duplicate-execution guard
# =============================================================================

def test_duplicate_execution_guard(tmp_path):
    """8 replicas, 500 records, 1,000 claim rounds: zero overlapping claim
    intervals and every record processed exactly once."""
    config, store = make_env(tmp_path)
    for i in range(500):
        store.upsert(WORK, f"rec{i:03d}", {}, "Todo")
    time.sleep(0.02)

    rounds = [0]
    rounds_lock = threading.Lock()
    log: list[tuple[str, str, float, float]] = []
    processed: list[tuple[str, str]] = []
    log_lock = threading.Lock()

    def replica(name):
        entries, handled = [], []
        while True:
            with rounds_lock:
                if rounds[0] >= 1000:
                    break
                rounds[0] += 1
            ticket = store.claim_idle(WORK, ["Todo"], 0.005, 4, name, lease=10.0)
            t0 = time.monotonic()
            for record_id in ticket.record_ids:
                handled.append((record_id, name))  # the processing side effect
                t_end = time.monotonic()
                store.release_claim(ticket, record_id, "Processed")
                entries.append((record_id, name, t0, t_end))
        with log_lock:
            log.extend(entries)
            processed.extend(handled)

    replicas = [threading.Thread(target=replica, args=(f"replica-{k}",)) for k in range(8)]
    for t in replicas:
        t.start()
    for t in replicas:
        t.join()

    assert rounds[0] >= 1000
    by_record: dict[str, list] = {}
    for record_id, name, t0, t1 in log:
        by_record.setdefault(record_id, []).append((t0, t1, name))
    overlaps = 0
    for record_id, intervals in by_record.items():
        intervals.sort()
        for (a0, a1, wa), (b0, b1, wb) in zip(intervals, intervals[1:]):
            if a1 > b0 and wa != wb:
                overlaps += 1
    assert overlaps == 0, f"{overlaps} overlapping claim intervals"
    counts: dict[str, int] = {}
    for record_id, _name in processed:
        counts[record_id] = counts.get(record_id, 0) + 1
    assert len(counts) == 500, "some records never processed"
    assert all(n == 1 for n in counts.values()), "a record was processed more than once"
    report(f"duplicate-execution guard: {rounds[0]} rounds, 0 overlaps, "
           f"500/500 processed exactly once")


# =============================================================================
# Criterion 3: event-loss liveness
# =============================================================================

def test_event_loss_liveness(tmp_path):
    """Depth-4 / 50-job workflow completes under 50% socket-bus loss within
    1.5 x (depth x idle_threshold + payload time)."""
    depth = 4
    poll, idle = 0.25, 1.25  # defaults-like 5:1 ratio, scaled for CI
    sim_latency = 0
    config, store = make_env(tmp_path, poll=poll, idle=idle, lease=10.0)
    server = SocketBusServer(port=0, drop_rate=0.5, drop_seed=20260810).start()
    config.bus.backend = "socket"
    config.bus.host, config.bus.port = server.host, server.port

    backends = {"sim": SimulatedBackend(name="sim", script={"default_latency": sim_latency})}
    job_counts = [13, 13, 12, 12]
    works = {f"lvl{i}": make_work(f"lvl{i}", job_count_hint=job_counts[i], backend="sim")
             for i in range(depth)}
    edges = [Edge(f"lvl{i}", f"lvl{i+1}") for i in range(depth - 1)]
    graph = WorkflowGraph(request_id="", works=works, edges=edges)

    stop = threading.Event()
    threads = []
    agents = []
    try:
        for role_cls in (ClerkAgent, TransformerAgent, CarrierAgent, ReceiverAgent):
            bus_client = SocketEventBus(server.host, server.port)
            agent = role_cls(config, store, bus_client, backends)
            agents.append(agent)
            thread = threading.Thread(target=agent.run, args=(stop,), daemon=True)
            threads.append(thread)

        submit_bus = SocketEventBus(server.host, server.port)
        started = time.monotonic()
        for thread in threads:
            thread.start()
        request_id, _ = submit_request(store, submit_bus, graph, owner="acceptance")

        # payload time: the simulated backend advances one step per poll, so
        # a level's jobs cost (latency + 1) poll cycles at the idle cadence
        payload_time = depth * (sim_latency + 1) * idle
        bound = 1.5 * (depth * idle + payload_time)

        deadline = started + bound + 5  # watch a little past the bound
        state = "?"
        while time.monotonic() < deadline:
            state = request_state(store, request_id)
            if state in TERMINAL:
                break
            time.sleep(0.05)
        elapsed = time.monotonic() - started
        assert state == "Finished", f"workflow ended {state} after {elapsed:.1f}s"
        assert server.dropped > 0, "loss injection never fired"
        assert elapsed <= bound, f"{elapsed:.1f}s exceeded bound {bound:.1f}s"
        report(f"event-loss liveness: finished in {elapsed:.1f}s <= {bound:.1f}s "
               f"with {server.dropped} events dropped")
    finally:
        stop.set()
        server.stop()


# =============================================================================
# Criterion 4: coordinator merging + priority
# =============================================================================

def test_coordinator_merging(tmp_path):
    """10,000 JobStatus events over 50 scopes -> <= 200 handled; a High
    WorkTerminal injected mid-backlog outruns every remaining Low event."""
    bus = PersistentEventBus(str(tmp_path / "bus.db"), visibility_timeout=60.0)
    sub = bus.subscribe("agent", [EventType.JobStatus, EventType.WorkTerminal], group="g")
    rng = random.Random(9)

    first_half = [Event(EventType.JobStatus, f"work:W{rng.randrange(50)}",
                        payload={"n": i}) for i in range(5000)]
    bus.publish_many(first_half)

    handled = []
    batch = bus.consume(sub, 3000)
    merged = merge_pending(batch)
    handled.extend(merged)
    for event in batch:
        bus.ack(sub, event.event_id)

    # terminal event lands mid-backlog
    terminal = Event(EventType.WorkTerminal, "work:W7", payload={"state": "Finished"})
    bus.publish(terminal)
    second_half = [Event(EventType.JobStatus, f"work:W{rng.randrange(50)}",
                         payload={"n": i}) for i in range(5000)]
    bus.publish_many(second_half)

    seen_terminal_at = None
    while True:
        batch = bus.consume(sub, 3000)
        if not batch:
            break
        assert batch[0].event_id == terminal.event_id or seen_terminal_at is not None, \
            "a Low event was delivered before the pending High WorkTerminal"
        merged = merge_pending(batch)
        for event in merged:
            if event.event_id == terminal.event_id:
                seen_terminal_at = len(handled)
        handled.extend(merged)
        for event in batch:
            bus.ack(sub, event.event_id)

    job_status_handled = [e for e in handled if e.event_type == EventType.JobStatus]
    assert seen_terminal_at is not None
    assert len(job_status_handled) <= 200, f"handled {len(job_status_handled)} events"
    # every scope survived merging with an intact payload union size
    assert {e.scope_key for e in job_status_handled} == {f"work:W{k}" for k in range(50)}
    report(f"coordinator merging: 10000 events -> {len(job_status_handled)} handled, "
           f"WorkTerminal delivered first in its batch")


# =============================================================================
# Criterion 5: Data Carousel
# =============================================================================

def test_data_carousel(tmp_path):
    """1,000 files staged 20/step: peak Available-but-unprocessed footprint
    stays <= 2x the stage window, and processing starts before staging ends."""
    files, window = 1000, 20
    config, store = make_env(tmp_path, poll=0.02, idle=0.02)
    bus = LocalEventBus()
    backend = SimulatedBackend(name="sim", script={"default_latency": 0})
    backends = {"sim": backend}
    agents = [ClerkAgent(config, store, bus, backends),
              TransformerAgent(config, store, bus, backends),
              CarrierAgent(config, store, bus, backends),
              ReceiverAgent(config, store, bus, backends)]

    for i in range(files):
        item = ContentItem(content_id=f"tape/{i:05d}", collection="tape", name=f"{i:05d}")
        store.upsert(CONTENT, item.content_id, content_to_dict(item), "Missing")

    graph = WorkflowGraph(request_id="", works={
        "carousel": make_work("carousel", inputs=("tape",), backend="sim")})
    request_id, _ = submit_request(store, bus, graph, owner="acceptance")
    wkey = rec.work_key(request_id, "carousel")

    # let the pipeline submit the held task
    deadline = time.time() + 15
    while time.time() < deadline:
        tick_all(agents)
        record = store.query(WORK, prefix=f"{request_id}:")
        if record and record[0].status in ("Submitted", "Running"):
            break
        time.sleep(0.01)
    assert record and record[0].status in ("Submitted", "Running")

    def done_jobs():
        return {r.record_id for r in store.query(JOB, prefix=rec.job_prefix(wkey, 0))
                if r.status == "Done"}

    content_of_job = {}
    for r in store.query(JOB, prefix=rec.job_prefix(wkey, 0)):
        job = rec.job_of(r.body)
        (cid,) = job.required_contents
        content_of_job[job.job_id] = cid

    staged: list[str] = []
    peak_in_flight = 0
    first_done_at_step = None
    for step in range(files // window):
        batch = [f"tape/{i:05d}" for i in range(step * window, (step + 1) * window)]
        for content_id in batch:
            record = store.fetch(CONTENT, content_id)
            body = dict(record.body, availability="Available")
            store.upsert(CONTENT, content_id, body, "Available")
            bus.publish(Event(EventType.ContentAvailable, f"content:{content_id}",
                              payload={"request_id": request_id, "content_id": content_id}))
        staged.extend(batch)

        # drain: the engine should keep pace with the staging window
        drain_deadline = time.time() + 10
        while time.time() < drain_deadline:
            tick_all(agents)
            done = done_jobs()
            consumed = {content_of_job[j] for j in done}
            in_flight = len([c for c in staged if c not in consumed])
            peak_in_flight = max(peak_in_flight, in_flight)
            if in_flight == 0:
                break
            time.sleep(0.005)
        if first_done_at_step is None and done_jobs():
            first_done_at_step = step

    assert first_done_at_step is not None and first_done_at_step < files // window - 1, \
        "processing never started before staging completed"
    assert peak_in_flight <= 2 * window, \
        f"in-flight footprint {peak_in_flight} exceeded {2 * window} (baseline {files})"

    deadline = time.time() + 20
    while time.time() < deadline and request_state(store, request_id) not in TERMINAL:
        tick_all(agents)
        time.sleep(0.005)
    assert request_state(store, request_id) == "Finished"
    report(f"data carousel: peak in-flight {peak_in_flight} <= {2 * window} "
           f"(dataset baseline {files}), first job done in window {first_done_at_step}")


# =============================================================================
# Criterion 6: loop / HPO scenario
# =============================================================================

def loop_graph(max_iterations, threshold):
    train = make_work("train", slots=("loss_in",), backend="sim",
                      params={"loss_in": ParameterValue(
                          "loss_in", value=0.8, origin=FromOutput("train", "loss"))})
    loop = LoopBlock(loop_id="L", body=("train",),
                     exit_condition=metric_cond("exit", "train", "loss", "le", threshold),
                     max_iterations=max_iterations)
    return WorkflowGraph(request_id="", works={"train": train}, loops=[loop])


class HalvingBackend(SimulatedBackend):
    """Scripted payload: emits loss = loss_in / 2."""

    def submit_task(self, executable, jobs, idempotency_key, params=None):
        loss_in = (params or {}).get("loss_in", 0.8)
        self._script = {"default_latency": 0,
                        "jobs": {"0": {"outputs": {"loss": loss_in / 2}}}}
        return super().submit_task(executable, jobs, idempotency_key, params)


def run_loop_request(tmp_path, sub, graph):
    (tmp_path / sub).mkdir(exist_ok=True)
    config, store = make_env(tmp_path / sub)
    bus = LocalEventBus()
    backends = {"sim": HalvingBackend(name="sim")}
    agents = [ClerkAgent(config, store, bus, backends),
              TransformerAgent(config, store, bus, backends),
              CarrierAgent(config, store, bus, backends)]
    request_id, _ = submit_request(store, bus, graph, owner="acceptance")
    deadline = time.time() + 30
    while time.time() < deadline and request_state(store, request_id) not in TERMINAL:
        tick_all(agents)
        time.sleep(0.005)
    final = store.fetch(REQUEST, request_id)
    iterations = [r for r in store.query(WORK, prefix=f"{request_id}:")]
    return final, iterations


def test_loop_hpo_scenario(tmp_path):
    """Halving metric exits in exactly the oracle-predicted iteration count;
    the cap binds when the predicate never fires."""
    # oracle: loss after iteration i is 0.8 / 2^i; exit at loss <= 0.1 -> i = 3
    predicted = next(i for i in range(1, 20) if 0.8 / 2 ** i <= 0.1)
    final, works = run_loop_request(tmp_path, "hpo", loop_graph(10, 0.1))
    assert final.status == "Finished"
    clone_ids = sorted(rec.spec_of(w.body).work_id for w in works)
    assert clone_ids == [f"train#{i}" for i in range(1, predicted + 1)]
    loops = rec.graph_of(final.body).loops
    assert loops[0].terminated and loops[0].iteration_counter == predicted

    final_cap, works_cap = run_loop_request(tmp_path, "cap", loop_graph(5, -1.0))
    loops_cap = rec.graph_of(final_cap.body).loops
    assert loops_cap[0].terminated and loops_cap[0].iteration_counter == 5
    assert len(works_cap) == 5
    report(f"loop/HPO: exit after exactly {predicted} iterations, cap of 5 enforced")


# =============================================================================
# Criterion 7: state machine matrix + serialization round trip
# =============================================================================

def test_state_machine_and_round_trip():
    from dds.model.states import next_state
    fixture = json.loads((Path(__file__).parent / "data" / "transition_table.json").read_text())
    checked = 0
    for state in WorkState:
        for event in LifecycleEvent:
            expected = fixture[state.value][event.value]
            got = next_state(state, event)
            assert (got.value if got else None) == expected, (state, event)
            checked += 1
    assert checked == 100

    rng = random.Random(20260810)
    for trial in range(500):
        n = rng.randint(0, 10)
        works = {}
        for i in range(n):
            slots = rng.sample(["a", "b", "c"], rng.randint(0, 2))
            params = {}
            for slot in slots:
                if i and rng.random() < 0.5:
                    params[slot] = ParameterValue(
                        slot, value=rng.randint(0, 9),
                        origin=FromOutput(f"w{rng.randrange(i)}", "k"))
                else:
                    params[slot] = ParameterValue(slot, value=rng.choice(
                        [1, "x", True, [1, 2], {"m": 1}]))
            job_defs = tuple(JobDef(index=k, args={"k": k},
                                    depends_on=tuple(range(max(0, k - 1), k)))
                             for k in range(rng.randint(0, 3)))
            works[f"w{i}"] = make_work(
                f"w{i}", slots=slots, params=params, priority=rng.randint(-3, 9),
                job_count_hint=rng.choice([None, 1, 64]), job_defs=job_defs,
                inputs=rng.sample(["colA", "colB"], rng.randint(0, 2)))
        edges = [Edge(f"w{i}", f"w{j}") for i in range(n) for j in range(i + 1, n)
                 if rng.random() < 0.15]
        loops = []
        if n >= 2 and rng.random() < 0.4:
            body = tuple(f"w{k}" for k in range(n - 2, n))
            loops = [LoopBlock("L", body, metric_cond("x", body[-1], "m", "ge", 1),
                               max_iterations=rng.randint(0, 4))]
        graph = WorkflowGraph(request_id=f"req-{trial}", works=works, edges=edges,
                              loops=loops,
                              global_parameters={"g": ParameterValue("g", value=trial)})
        assert deserialize_graph(serialize_graph(graph)) == graph
    report("state machine: 10x10 matrix matches fixture; 500 graphs round-trip")


# =============================================================================
# Criterion 8: crash safety
# =============================================================================

def _crash_trial(tmp_path, trial, rng):
    workdir = tmp_path / f"trial{trial}"
    workdir.mkdir()
    config = EngineConfig()
    config.store.path = str(workdir / "store.db")
    config.bus.backend = "persistent"
    config.bus.visibility_timeout = 1.0
    config.agents.poll_interval = 0.1
    config.agents.idle_threshold = 0.2
    config.agents.lease = 1.5
    config.backends = [BackendConfig("sim", "simulated", {
        "script_inline": json.dumps({"default_latency": 2})})]
    config.roles = ["clerk", "transformer", "carrier", "receiver"]
    config_path = workdir / "dds.conf"
    dump_config(config, config_path)

    store = EmbeddedStore(config.store.path)
    bus = PersistentEventBus(str(workdir / "store.db.events"), 1.0)
    works = {"stage1": make_work("stage1", job_count_hint=3, backend="sim"),
             "stage2": make_work("stage2", job_count_hint=3, backend="sim")}
    graph = WorkflowGraph(request_id="", works=works, edges=[Edge("stage1", "stage2")])
    request_id, _ = submit_request(store, bus, graph, owner="acceptance")

    env = {"PYTHONPATH": str(ROOT / "src"), "PATH": os.environ.get("PATH", "")}

    def spawn():
        return subprocess.Popen(
            [sys.executable, "-m", "dds.agents.service", "--config", str(config_path)],
            env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)

    victim = spawn()
    try:
        time.sleep(rng.uniform(0.1, 2.0))
        os.kill(victim.pid, signal.SIGKILL)  # no cleanup, no goodbye
        victim.wait()
        replacement = spawn()
        try:
            deadline = time.time() + 45
            while time.time() < deadline:
                if request_state(store, request_id) in TERMINAL:
                    break
                time.sleep(0.1)
            return request_state(store, request_id)
        finally:
            replacement.terminate()
            replacement.wait(timeout=5)
    finally:
        if victim.poll() is None:
            victim.kill()


def test_crash_safety_kill9(tmp_path):
    """kill -9 the agent service at 10 random points; the workflow completes
    after restart in every trial."""
    rng = random.Random(77)
    outcomes = []
    for trial in range(10):
        outcomes.append(_crash_trial(tmp_path, trial, rng))
    assert outcomes == ["Finished"] * 10, f"outcomes: {outcomes}"
    report("crash safety: 10/10 kill -9 trials completed after restart")
