"""Scale replay: resolve a large layered job DAG through receiver/trigger.

Generates a random DAG (default 100,000 jobs in 200 layers), persists the
job records, submits held jobs to the in-memory simulated backend, and
replays the stream through the shared ingest/trigger path, reporting
throughput and peak memory.

    python3 scripts/rubin_scale.py [--jobs 100000] [--layers 200] [--seed 42]
"""

from __future__ import annotations

import argparse
import random
import resource
import sys
import tempfile
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from dds.agents import records as rec  # noqa: E402
from dds.agents.ingest import IndexCache, ingest_statuses  # noqa: E402
from dds.backends import JobSubmission, SimulatedBackend  # noqa: E402
from dds.dagengine.index import build_index  # noqa: E402
from dds.dagengine.jobs import JobNode  # noqa: E402
from dds.model.states import WorkState  # noqa: E402
from dds.model.work import WorkMetadata, WorkSpec, WorkTemplate  # noqa: E402
from dds.store import EmbeddedStore, JOB, WORK  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--jobs", type=int, default=100_000)
    parser.add_argument("--layers", type=int, default=200)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    width = args.jobs // args.layers
    rng = random.Random(args.seed)
    workdir = Path(tempfile.mkdtemp(prefix="dds-rubin-"))
    store = EmbeddedStore(str(workdir / "store.db"))
    wkey = rec.work_key("req-scale", "dag")

    t0 = time.monotonic()
    jobs = []
    for layer in range(args.layers):
        for k in range(width):
            idx = layer * width + k
            deps = frozenset(
                rec.job_record_id(wkey, 0, (layer - 1) * width + rng.randrange(width))
                for _ in range(rng.randint(1, 3))) if layer else frozenset()
            jobs.append(JobNode(job_id=rec.job_record_id(wkey, 0, idx),
                                parent_work=wkey, depends_on=deps))
    print(f"generated {len(jobs)} jobs in {time.monotonic() - t0:.1f}s")

    t0 = time.monotonic()
    store.upsert_many(JOB, [(j.job_id, rec.job_body(j), j.state.value) for j in jobs])
    print(f"persisted job records in {time.monotonic() - t0:.1f}s")

    backend = SimulatedBackend(name="sim", script={"default_latency": 0})
    index0 = build_index(jobs)
    submissions = [JobSubmission(job_id=j.job_id, index=i,
                                 held=j.job_id not in index0.initial_ready)
                   for i, j in enumerate(jobs)]
    handle = backend.submit_task("noop", submissions, "key-scale")
    spec = WorkSpec(work_id="dag", name="dag", template=WorkTemplate(executable="noop"),
                    metadata=WorkMetadata(backend_handle=handle),
                    state=WorkState.Submitted, request_id="req-scale")
    store.upsert(WORK, wkey, rec.work_body(spec), "Submitted")

    cache = IndexCache()
    released = 0
    cursor = 0
    t0 = time.monotonic()
    outcome = ingest_statuses(store, spec, wkey, backend, [], cache)
    released += len(outcome.released)
    rounds = 0
    while not outcome.all_terminal:
        rounds += 1
        backend.step(handle, steps=1)
        cursor, messages = backend.stream_status(handle, cursor)
        if messages:
            outcome = ingest_statuses(store, spec, wkey, backend, messages, cache)
            released += len(outcome.released)
    elapsed = time.monotonic() - t0
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / (1024 ** 2)
    print(f"replayed {outcome.done} completions in {elapsed:.1f}s "
          f"({outcome.done / elapsed:,.0f} jobs/s), {rounds} rounds")
    print(f"released {released} jobs exactly once; peak rss {peak:.2f} GiB")
    return 0 if released == len(jobs) and outcome.done == len(jobs) else 1


if __name__ == "__main__":
    raise SystemExit(main())
