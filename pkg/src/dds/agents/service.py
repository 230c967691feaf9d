"""Multi-role agent service: `python -m dds.agents.service --config <file>`.

Runs one thread per enabled role against the configured store, bus and
backends. Any number of service processes may run concurrently; they
coordinate only through claims and events.
"""

from __future__ import annotations

import argparse
import logging
import signal
import threading

from dds.agents.base import AgentRole, BaseAgent
from dds.agents.carrier import CarrierAgent
from dds.agents.clerk import ClerkAgent
from dds.agents.conductor import ConductorAgent
from dds.agents.coordinator import CoordinatorAgent
from dds.agents.receiver import ReceiverAgent
from dds.agents.transformer import TransformerAgent
from dds.backends import make_backends
from dds.bus import make_bus
from dds.config import EngineConfig, load_config
from dds.store import make_store

log = logging.getLogger(__name__)

AGENT_CLASSES: dict[AgentRole, type[BaseAgent]] = {
    AgentRole.Clerk: ClerkAgent,
    AgentRole.Transformer: TransformerAgent,
    AgentRole.Carrier: CarrierAgent,
    AgentRole.Receiver: ReceiverAgent,
    AgentRole.Conductor: ConductorAgent,
    AgentRole.Coordinator: CoordinatorAgent,
}

DEFAULT_ROLES = [AgentRole.Clerk, AgentRole.Transformer, AgentRole.Carrier,
                 AgentRole.Receiver, AgentRole.Conductor]


def build_agents(config: EngineConfig, roles: list[AgentRole] | None = None,
                 store=None, bus=None, backends=None) -> list[BaseAgent]:
    store = store or make_store(config)
    bus = bus if bus is not None else make_bus(config)
    backends = backends if backends is not None else make_backends(config, store=store)
    roles = roles or [AgentRole(r) for r in config.roles] or list(DEFAULT_ROLES)
    return [AGENT_CLASSES[role](config, store, bus, backends) for role in roles]


def run_agent_loop(role: AgentRole, config: EngineConfig,
                   stop: threading.Event | None = None, wake: float = 0.05) -> None:
    """Run one role's service loop until `stop` is set (never, by default)."""
    agent = build_agents(config, roles=[role])[0]
    agent.run(stop or threading.Event(), wake=wake)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="run workflow agents")
    parser.add_argument("--config", required=True)
    parser.add_argument("--roles", default="",
                        help="comma-separated roles (default: config or all)")
    parser.add_argument("--wake", type=float, default=0.05)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    config = load_config(args.config)
    roles = ([AgentRole(r.strip()) for r in args.roles.split(",") if r.strip()]
             or [AgentRole(r) for r in config.roles]
             or list(DEFAULT_ROLES))

    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    signal.signal(signal.SIGINT, lambda *_: stop.set())

    agents = build_agents(config, roles=roles)
    threads = [threading.Thread(target=a.run, args=(stop,), kwargs={"wake": args.wake},
                                name=f"agent-{a.role.value}", daemon=True)
               for a in agents]
    for t in threads:
        t.start()
    log.info("agents running: %s", ", ".join(a.role.value for a in agents))
    stop.wait()
    for t in threads:
        t.join(timeout=5.0)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
