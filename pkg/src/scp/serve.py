"""Run the hub as an HTTP service: ``scp-hub --config hub.json``."""

from __future__ import annotations

import argparse
import threading
import time

import uvicorn

from .client import HttpDispatcher
from .hub.api import create_app
from .hub.config import load_config
from .hub.core import Hub


def build_service_hub(config) -> Hub:
    dispatcher = HttpDispatcher(lambda sid: hub.server_token(sid))
    hub = Hub(config, dispatcher=dispatcher)
    return hub


def start_ticker(hub: Hub, period: float = 1.0) -> threading.Event:
    stop = threading.Event()

    def loop():
        while not stop.wait(period):
            try:
                hub.tick()
            except Exception:
                pass  # maintenance must never kill the service

    threading.Thread(target=loop, daemon=True).start()
    return stop


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scp-hub", description="Science Context Protocol hub service")
    parser.add_argument("--config", help="canonical-JSON config file")
    parser.add_argument("--host", help="listen host override")
    parser.add_argument("--port", type=int, help="listen port override")
    args = parser.parse_args(argv)

    config = load_config(args.config)
    if args.host:
        config.listen_host = args.host
    if args.port:
        config.listen_port = args.port
    hub = build_service_hub(config)
    start_ticker(hub)
    uvicorn.run(create_app(hub), host=config.listen_host,
                port=config.listen_port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
