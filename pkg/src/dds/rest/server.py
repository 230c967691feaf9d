"""Run the REST service: `python -m dds.rest.server --config <file>`."""

from __future__ import annotations

import argparse
import logging

import uvicorn

from dds.backends import make_backends
from dds.bus import make_bus
from dds.config import load_config
from dds.rest.app import build_app
from dds.store import make_store


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="run the workflow REST service")
    parser.add_argument("--config", required=True)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO)

    config = load_config(args.config)
    store = make_store(config)
    bus = make_bus(config)
    backends = make_backends(config, store=store)
    app = build_app(config, store, bus, backends)
    uvicorn.run(app, host=config.rest.host, port=config.rest.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
