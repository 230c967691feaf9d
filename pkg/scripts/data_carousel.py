"""Data Carousel scenario: file-level staging with incremental job release.

Registers a dataset of Missing contents, submits a one-job-per-file work,
then stages the dataset in fixed windows while the agents release and
process jobs as files arrive. Reports the peak count of staged-but-
unprocessed files against the dataset-level baseline (the whole dataset).

    python3 scripts/data_carousel.py [--files 1000] [--window 20]
"""

from __future__ import annotations

import argparse
import sys
import tempfile
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from dds.agents import (  # noqa: E402
    CarrierAgent, ClerkAgent, ReceiverAgent, TransformerAgent,
)
from dds.agents import records as rec  # noqa: E402
from dds.backends import SimulatedBackend  # noqa: E402
from dds.bus import Event, EventType, LocalEventBus  # noqa: E402
from dds.config import EngineConfig  # noqa: E402
from dds.dagengine.jobs import ContentItem, content_to_dict  # noqa: E402
from dds.model.graph import WorkflowGraph  # noqa: E402
from dds.model.work import WorkSpec, WorkTemplate  # noqa: E402
from dds.store import CONTENT, EmbeddedStore, JOB, REQUEST  # noqa: E402
from dds.submission import submit_request  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--files", type=int, default=1000)
    parser.add_argument("--window", type=int, default=20)
    args = parser.parse_args()

    workdir = Path(tempfile.mkdtemp(prefix="dds-carousel-"))
    config = EngineConfig()
    config.store.path = str(workdir / "store.db")
    config.agents.poll_interval = 0.02
    config.agents.idle_threshold = 0.02
    store = EmbeddedStore(config.store.path)
    bus = LocalEventBus()
    backends = {"sim": SimulatedBackend(name="sim", script={"default_latency": 0})}
    agents = [cls(config, store, bus, backends)
              for cls in (ClerkAgent, TransformerAgent, CarrierAgent, ReceiverAgent)]

    for i in range(args.files):
        item = ContentItem(content_id=f"tape/{i:05d}", collection="tape", name=f"{i:05d}")
        store.upsert(CONTENT, item.content_id, content_to_dict(item), "Missing")

    work = WorkSpec(work_id="carousel", name="carousel",
                    template=WorkTemplate(executable="noop", input_collections=("tape",),
                                          backend="sim"))
    graph = WorkflowGraph(request_id="", works={"carousel": work})
    request_id, _ = submit_request(store, bus, graph, owner="carousel")
    wkey = rec.work_key(request_id, "carousel")

    def tick():
        for agent in agents:
            agent.tick()

    while store.count_by_status(JOB).get("Waiting", 0) < args.files:
        tick()
        time.sleep(0.005)

    content_of_job = {}
    for record in store.query(JOB, prefix=rec.job_prefix(wkey, 0)):
        job = rec.job_of(record.body)
        (cid,) = job.required_contents
        content_of_job[job.job_id] = cid

    staged: list[str] = []
    peak = 0
    first_done_window = None
    windows = args.files // args.window
    for step in range(windows):
        batch = [f"tape/{i:05d}" for i in range(step * args.window, (step + 1) * args.window)]
        for content_id in batch:
            record = store.fetch(CONTENT, content_id)
            store.upsert(CONTENT, content_id, dict(record.body, availability="Available"),
                         "Available")
            bus.publish(Event(EventType.ContentAvailable, f"content:{content_id}",
                              payload={"request_id": request_id, "content_id": content_id}))
        staged.extend(batch)
        deadline = time.time() + 10
        while time.time() < deadline:
            tick()
            done = {r.record_id for r in store.query(JOB, prefix=rec.job_prefix(wkey, 0))
                    if r.status == "Done"}
            in_flight = len(staged) - len({content_of_job[j] for j in done})
            peak = max(peak, in_flight)
            if in_flight == 0:
                break
            time.sleep(0.005)
        if first_done_window is None and done:
            first_done_window = step

    while store.fetch(REQUEST, request_id).status not in (
            "Finished", "SubFinished", "Failed", "Cancelled"):
        tick()
        time.sleep(0.005)

    print(f"request: {store.fetch(REQUEST, request_id).status}")
    print(f"peak staged-but-unprocessed: {peak} files "
          f"(window {args.window}, dataset baseline {args.files})")
    print(f"first job finished during staging window {first_done_window} of {windows}")
    return 0 if peak <= 2 * args.window else 1


if __name__ == "__main__":
    raise SystemExit(main())
