"""Metric-driven loop scenario: iterate a training work until the loss
metric crosses a threshold or the iteration cap binds.

Each iteration's payload halves the incoming loss; the loop's exit
condition fires at loss <= threshold. Prints the per-iteration trace.

    python3 scripts/hpo_loop.py [--start 0.8] [--threshold 0.1] [--max-iterations 10]
"""

from __future__ import annotations

import argparse
import sys
import tempfile
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from dds.agents import CarrierAgent, ClerkAgent, TransformerAgent  # noqa: E402
from dds.agents import records as rec  # noqa: E402
from dds.backends import SimulatedBackend  # noqa: E402
from dds.bus import LocalEventBus  # noqa: E402
from dds.config import EngineConfig  # noqa: E402
from dds.model.graph import Condition, LoopBlock, WorkflowGraph  # noqa: E402
from dds.model.predicate import Cmp  # noqa: E402
from dds.model.work import FromOutput, ParameterValue, WorkSpec, WorkTemplate  # noqa: E402
from dds.store import EmbeddedStore, REQUEST, WORK  # noqa: E402
from dds.submission import submit_request  # noqa: E402


class HalvingTrainer(SimulatedBackend):
    """Stands in for a training payload: emits loss = loss_in / 2."""

    def submit_task(self, executable, jobs, idempotency_key, params=None):
        loss_in = (params or {}).get("loss_in", 1.0)
        self._script = {"default_latency": 0,
                        "jobs": {"0": {"outputs": {"loss": loss_in / 2}}}}
        return super().submit_task(executable, jobs, idempotency_key, params)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--start", type=float, default=0.8)
    parser.add_argument("--threshold", type=float, default=0.1)
    parser.add_argument("--max-iterations", type=int, default=10)
    args = parser.parse_args()

    workdir = Path(tempfile.mkdtemp(prefix="dds-hpo-"))
    config = EngineConfig()
    config.store.path = str(workdir / "store.db")
    config.agents.poll_interval = 0.02
    config.agents.idle_threshold = 0.02
    store = EmbeddedStore(config.store.path)
    bus = LocalEventBus()
    backends = {"sim": HalvingTrainer(name="sim")}
    agents = [cls(config, store, bus, backends)
              for cls in (ClerkAgent, TransformerAgent, CarrierAgent)]

    train = WorkSpec(
        work_id="train", name="train",
        template=WorkTemplate(executable="train", parameter_slots=("loss_in",),
                              backend="sim"),
        parameters={"loss_in": ParameterValue("loss_in", value=args.start,
                                              origin=FromOutput("train", "loss"))})
    loop = LoopBlock(
        loop_id="search", body=("train",),
        exit_condition=Condition("exit", "train", Cmp("loss", "le", args.threshold)),
        max_iterations=args.max_iterations)
    graph = WorkflowGraph(request_id="", works={"train": train}, loops=[loop])
    request_id, _ = submit_request(store, bus, graph, owner="hpo")

    deadline = time.time() + 60
    while time.time() < deadline:
        for agent in agents:
            agent.tick()
        if store.fetch(REQUEST, request_id).status in (
                "Finished", "SubFinished", "Failed", "Cancelled"):
            break
        time.sleep(0.005)

    final = store.fetch(REQUEST, request_id)
    print(f"request: {final.status}")
    for record in sorted(store.query(WORK, prefix=f"{request_id}:"),
                         key=lambda r: r.record_id):
        spec = rec.spec_of(record.body)
        loss = spec.metadata.outputs.get("loss")
        bound = spec.metadata.bound_parameters.get("loss_in")
        print(f"  {spec.work_id:<10} loss_in={bound} -> loss={loss} [{spec.state.value}]")
    final_loop = rec.graph_of(final.body).loops[0]
    reason = ("exit condition" if final_loop.iteration_counter < args.max_iterations
              else "iteration cap")
    print(f"loop terminated after {final_loop.iteration_counter} iterations ({reason})")
    return 0 if final.status == "Finished" else 1


if __name__ == "__main__":
    raise SystemExit(main())
