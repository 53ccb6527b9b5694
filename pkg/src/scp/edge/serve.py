"""Run a mock-lab edge server: ``scp-edge --fixture molecule_screening``."""

from __future__ import annotations

import argparse

import uvicorn

from ..hub.config import packaged_fixture
from .mocklab import load_mock_lab
from .server import EdgeServer, auto_register


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scp-edge", description="Mock-lab edge server")
    parser.add_argument("--fixture", default="molecule_screening",
                        help="fixture file path, or a packaged fixture name")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8520)
    parser.add_argument("--latency-scale", type=float, default=1.0)
    parser.add_argument("--hub-url", help="register with this hub")
    parser.add_argument("--principal", default="edge-operator")
    parser.add_argument("--secret", default="")
    args = parser.parse_args(argv)

    fixture = args.fixture
    if not fixture.endswith(".json"):
        fixture = packaged_fixture(f"{fixture}.json")
    lab = load_mock_lab(fixture, seed=args.seed)
    server = EdgeServer.from_mock_lab(lab, latency_scale=args.latency_scale)
    if args.hub_url:
        auto_register(server, args.hub_url,
                      {"principal_id": args.principal, "secret": args.secret},
                      advertise_url=f"http://{args.host}:{args.port}")
    uvicorn.run(server.build_app(), host=args.host, port=args.port,
                log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
