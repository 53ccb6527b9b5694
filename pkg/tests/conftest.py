"""Shared builders for protocol objects used across the suite."""

from __future__ import annotations

import random
import socket
import threading
import time

import pytest
import uvicorn

from scp.types import FieldSpec, TaskNode, ToolDescriptor, WorkflowSpec


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ServerThread:
    """A uvicorn server running a FastAPI app on an ephemeral port."""

    def __init__(self, app, port: int | None = None):
        self.port = port or free_port()
        self.base_url = f"http://127.0.0.1:{self.port}"
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port,
                                log_level="error", lifespan="off")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self):
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("uvicorn did not start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


def make_tool(tool_id: str, capability: str = "compute.generic", *,
              params=(), outputs=(), side_effect: str = "none",
              reversible: bool = False, compensation: dict | None = None,
              latency_ms: float = 10.0, cost_units: float = 1.0,
              risk: float = 0.0, scopes=("dry.execute",)) -> ToolDescriptor:
    return ToolDescriptor(
        tool_id=tool_id,
        capability_class=capability,
        version="1.0.0",
        description=f"test tool {tool_id}",
        params_schema=tuple(params),
        outputs_schema=tuple(outputs),
        side_effect=side_effect,
        reversible=reversible,
        compensation=compensation,
        estimates={"latency_ms": latency_ms, "cost_units": cost_units,
                   "risk": risk},
        security={"required_scopes": sorted(scopes)},
    )


def make_node(node_id: str, tool_id: str = "t1",
              capability: str = "compute.generic", *, params=None,
              expected_outputs=(), depends_on=(), max_retries: int | None = None,
              on_failure: str = "abort") -> TaskNode:
    return TaskNode(
        node_id=node_id,
        tool_id=tool_id,
        capability_class=capability,
        params=dict(params or {}),
        expected_outputs=tuple(expected_outputs),
        depends_on=tuple(depends_on),
        max_retries=max_retries,
        on_failure=on_failure,
    )


def make_spec(nodes, spec_id: str = "spec-1",
              experiment_id: str = "exp-000000000001",
              version: int = 1, created_from: str = "manual") -> WorkflowSpec:
    return WorkflowSpec(spec_id=spec_id, experiment_id=experiment_id,
                        version=version, nodes=list(nodes),
                        created_from=created_from)


def random_dag_edges(rng: random.Random, n: int, p: float = 0.4):
    """Random acyclic dependency sets: node i may depend on nodes < i."""
    names = [f"n{i}" for i in range(n)]
    deps = {}
    for i, name in enumerate(names):
        deps[name] = tuple(names[j] for j in range(i) if rng.random() < p)
    return names, deps


@pytest.fixture
def rng():
    return random.Random(20260810)
