"""Edge server over real HTTP: invoke streams, cancel, health, federation."""

from __future__ import annotations

import json
import threading
import time

import httpx
import pytest

from scp.client import HttpDispatcher, HubClient
from scp.edge.mocklab import load_mock_lab
from scp.edge.server import EdgeServer, ToolError, auto_register
from scp.errors import DuplicateToolId, InvalidDescriptor
from scp.hub.api import create_app
from scp.hub.config import HubConfig, packaged_fixture
from scp.hub.core import Hub
from scp.local import screening_inputs
from scp.types import FieldSpec, ToolDescriptor

from conftest import ServerThread, make_tool
from test_executor import fixture_for

ALL_SCOPES = ["tools.read", "experiments.write", "dry.execute", "wet.execute"]


def small_edge() -> EdgeServer:
    server = EdgeServer("test-edge")

    @server.tool(make_tool("adder", params=[FieldSpec("a", "number"),
                                            FieldSpec("b", "number")],
                           outputs=[FieldSpec("total", "number")]))
    def adder(params, ctx):
        ctx.emit_progress(0.5, "adding")
        return {"total": params["a"] + params["b"]}

    @server.tool(make_tool("crasher", "compute.crash"))
    def crasher(params, ctx):
        raise ToolError("deliberate_failure")

    @server.tool(make_tool("sleeper", "compute.sleep",
                           outputs=[FieldSpec("woke", "boolean")]))
    def sleeper(params, ctx):
        ctx.sleep(params.get("seconds", 5.0))
        return {"woke": True}

    @server.tool(make_tool("liar", "compute.lie",
                           outputs=[FieldSpec("n", "number")]))
    def liar(params, ctx):
        return {"n": "not a number"}

    @server.tool(make_tool("oven", "device.oven", side_effect="physical",
                           scopes=("wet.execute",),
                           outputs=[FieldSpec("temp", "number")]))
    def oven(params, ctx):
        ctx.sleep(params.get("seconds", 0.5))
        return {"temp": 200}

    return server


def invoke(base_url, tool_id, params, task_id="t/1"):
    lines = []
    with httpx.stream("POST", f"{base_url}/scp/invoke",
                      json={"task_id": task_id, "tool_id": tool_id,
                            "params": params, "experiment_context": {},
                            "server_token": ""}, timeout=30.0) as resp:
        status = resp.status_code
        if status == 200:
            for line in resp.iter_lines():
                if line:
                    lines.append(json.loads(line))
        else:
            resp.read()
    return status, lines


def test_export_guards():
    server = small_edge()
    with pytest.raises(DuplicateToolId):
        server.export_tool(make_tool("adder"), lambda p, c: {})
    bad = ToolDescriptor(
        tool_id="x", capability_class="c", version="1.0.0", description="",
        params_schema=(), outputs_schema=(), reversible=True,
        compensation=None)
    with pytest.raises(InvalidDescriptor):
        server.export_tool(bad, lambda p, c: {})


def test_tools_health_invoke_and_failures():
    server = small_edge()
    with ServerThread(server.build_app()) as edge:
        listed = httpx.get(f"{edge.base_url}/scp/tools").json()
        assert {t["tool_id"] for t in listed["tools"]} == \
            {"adder", "crasher", "sleeper", "liar", "oven"}

        health = httpx.get(f"{edge.base_url}/scp/health").json()
        assert health["device_status"]["oven"] == "ready"
        assert health["resource_utilization"]["cpu_pct"] <= 100

        status, lines = invoke(edge.base_url, "adder", {"a": 2, "b": 3})
        assert status == 200
        assert [l["kind"] for l in lines] == ["task_progress", "task_completed"]
        assert lines[-1]["payload"]["outputs"] == {"total": 5}

        status, lines = invoke(edge.base_url, "crasher", {})
        assert [l["kind"] for l in lines] == ["task_failed"]
        assert lines[0]["payload"]["error"] == "deliberate_failure"

        status, _ = invoke(edge.base_url, "ghost", {})
        assert status == 404

        status, _ = invoke(edge.base_url, "adder", {"a": "x", "b": 1})
        assert status == 422

        # schema-violating outputs are caught locally, never sent as success
        status, lines = invoke(edge.base_url, "liar", {})
        assert [l["kind"] for l in lines] == ["task_failed"]
        assert "local_schema_check_failed" in lines[0]["payload"]["error"]


def test_cancel_mid_run_and_idempotency():
    server = small_edge()
    with ServerThread(server.build_app()) as edge:
        results = {}

        def run():
            results["run"] = invoke(edge.base_url, "sleeper",
                                    {"seconds": 30.0}, task_id="t/cancel")

        worker = threading.Thread(target=run)
        worker.start()
        deadline = time.time() + 5
        while "t/cancel" not in server._running and time.time() < deadline:
            time.sleep(0.01)
        t0 = time.time()
        ok = httpx.post(f"{edge.base_url}/scp/cancel",
                        json={"task_id": "t/cancel", "server_token": ""})
        assert ok.status_code == 200
        worker.join(timeout=5)
        assert time.time() - t0 < 5  # cancelled promptly, not after 30 s
        status, lines = results["run"]
        assert [l["kind"] for l in lines] == ["task_failed"]
        assert lines[0]["payload"]["error"] == "cancelled"

        gone = httpx.post(f"{edge.base_url}/scp/cancel",
                          json={"task_id": "t/cancel", "server_token": ""})
        assert gone.status_code == 404  # already finished: unknown here


def test_physical_tool_rejects_concurrent_invokes():
    server = small_edge()
    with ServerThread(server.build_app()) as edge:
        outcome = {}

        def long_bake():
            outcome["first"] = invoke(edge.base_url, "oven",
                                      {"seconds": 2.0}, task_id="t/bake1")

        worker = threading.Thread(target=long_bake)
        worker.start()
        deadline = time.time() + 5
        while "t/bake1" not in server._running and time.time() < deadline:
            time.sleep(0.01)
        status, _ = invoke(edge.base_url, "oven", {"seconds": 0.1},
                           task_id="t/bake2")
        assert status == 409  # busy device turns work away
        httpx.post(f"{edge.base_url}/scp/cancel",
                   json={"task_id": "t/bake1", "server_token": ""})
        worker.join(timeout=5)


@pytest.fixture
def hub_world(tmp_path):
    config = HubConfig(storage_root=str(tmp_path / "store"), id_seed=11,
                       lease_seconds=2)
    dispatcher = HttpDispatcher(lambda sid: hub.server_token(sid))
    hub = Hub(config, dispatcher=dispatcher)
    hub.auth.add_principal("alice", "human", set(ALL_SCOPES), secret="s")
    hub.auth.add_principal("edge-op", "agent", {"tools.read"}, secret="e")
    return hub


def test_federated_run_over_http(hub_world, tmp_path):
    hub = hub_world
    lab = load_mock_lab(packaged_fixture("molecule_screening.json"), seed=42)
    edge_server = EdgeServer.from_mock_lab(lab, latency_scale=0.02)
    with ServerThread(create_app(hub)) as hub_http, \
            ServerThread(edge_server.build_app()) as edge_http:
        registration = auto_register(
            edge_server, hub_http.base_url,
            {"principal_id": "edge-op", "secret": "e"},
            advertise_url=edge_http.base_url, wait_seconds=10)
        assert registration.registered.is_set()

        client = HubClient(hub_http.base_url)
        token = client.issue_token("alice", "s", ALL_SCOPES)["value"]
        client.token = token
        exp = client.create_experiment({
            "experiment_type": "dry", "goal": "funnel over http",
            "goal_tags": ["docking", "screening"],
            "config": screening_inputs(), "priority": 5})
        eid = exp["experiment_id"]
        plans = client.plan(eid, {"k": 5})
        funnel = next(p for p in plans
                      if "molecule-screening-docking" in p["rationale"])
        client.select_plan(eid, funnel["plan_id"])
        deadline = time.time() + 30
        phase = "executing"
        while time.time() < deadline:
            phase = client.status(eid)["phase"]
            if phase in ("completed", "failed", "aborted"):
                break
            time.sleep(0.2)
        status = client.status(eid)
        assert phase == "completed", status["task_states"]
        hits = status["task_states"]["s11_hit_selection"]["outputs"]
        assert hits["count"] == 2
        assert client.verify(eid) == {"ok": True}
        registration.stop()
        client.close()


def test_edge_reregisters_after_hub_restart(tmp_path):
    config1 = HubConfig(storage_root=str(tmp_path / "s1"), id_seed=1,
                        lease_seconds=1)
    hub1 = Hub(config1, dispatcher=HttpDispatcher(lambda sid: ""))
    hub1.auth.add_principal("edge-op", "agent", {"tools.read"}, secret="e")

    edge_server = EdgeServer("tiny")
    edge_server.export_tool(make_tool("t1"), lambda p, c: {})

    port = None
    with ServerThread(edge_server.build_app()) as edge_http:
        with ServerThread(create_app(hub1)) as hub_http:
            port = hub_http.port
            registration = auto_register(
                edge_server, hub_http.base_url,
                {"principal_id": "edge-op", "secret": "e"},
                advertise_url=edge_http.base_url, wait_seconds=10)
            assert registration.registered.is_set()
            first_sid = edge_server.server_id
            deadline = time.time() + 5
            while registration.heartbeats_sent < 2 and time.time() < deadline:
                time.sleep(0.05)
        # hub gone: next heartbeats fail with connection errors and back off

        config2 = HubConfig(storage_root=str(tmp_path / "s2"), id_seed=2,
                            lease_seconds=1)
        hub2 = Hub(config2, dispatcher=HttpDispatcher(lambda sid: ""))
        hub2.auth.add_principal("edge-op", "agent", {"tools.read"}, secret="e")
        with ServerThread(create_app(hub2), port=port):
            deadline = time.time() + 20
            while time.time() < deadline:
                try:
                    if hub2.registry.find_tools(set(ALL_SCOPES)):
                        break
                except Exception:
                    pass
                time.sleep(0.1)
            tools = hub2.registry.find_tools(set(ALL_SCOPES))
            assert [t.tool_id for t in tools] == ["t1"]
        registration.stop()


def test_invoke_streams_have_exactly_one_terminal_event_fuzz():
    # random mixes of failures and cancel timings: every stream still ends
    # in exactly one terminal line
    import random as rnd

    server = EdgeServer("fuzz-edge")

    @server.tool(make_tool("maybe", "compute.maybe",
                           outputs=[FieldSpec("ok", "boolean")]))
    def maybe(params, ctx):
        ctx.emit_progress(0.25)
        ctx.sleep(params.get("seconds", 0.05))
        ctx.emit_progress(0.75)
        if params.get("fail"):
            raise ToolError("fuzz_failure")
        return {"ok": True}

    rng = rnd.Random(17)
    with ServerThread(server.build_app()) as edge:
        for trial in range(24):
            task_id = f"fuzz/{trial}"
            fail = rng.random() < 0.4
            cancel_after = rng.choice([None, 0.0, 0.02, 0.08])

            if cancel_after is not None:
                threading.Timer(cancel_after, lambda t=task_id: httpx.post(
                    f"{edge.base_url}/scp/cancel",
                    json={"task_id": t, "server_token": ""},
                    timeout=5.0)).start()
            status, lines = invoke(edge.base_url, "maybe",
                                   {"seconds": 0.05, "fail": fail},
                                   task_id=task_id)
            assert status == 200
            terminal = [l for l in lines
                        if l["kind"] in ("task_completed", "task_failed")]
            assert len(terminal) == 1, (trial, lines)
            assert lines[-1] is terminal[0]


def test_heartbeats_survive_concurrent_invoke_load(tmp_path):
    # 16 parallel invokes must not starve the heartbeat loop: the gap
    # between heartbeats stays under one lease
    config = HubConfig(storage_root=str(tmp_path / "store"), id_seed=3,
                       lease_seconds=2)
    hub = Hub(config, dispatcher=HttpDispatcher(lambda sid: ""))
    hub.auth.add_principal("edge-op", "agent", {"tools.read"}, secret="e")

    server = EdgeServer("busy-edge")

    @server.tool(make_tool("napper", "compute.nap",
                           outputs=[FieldSpec("ok", "boolean")]))
    def napper(params, ctx):
        ctx.sleep(params.get("seconds", 1.0))
        return {"ok": True}

    with ServerThread(create_app(hub)) as hub_http, \
            ServerThread(server.build_app()) as edge_http:
        registration = auto_register(
            server, hub_http.base_url,
            {"principal_id": "edge-op", "secret": "e"},
            advertise_url=edge_http.base_url, wait_seconds=10)
        assert registration.registered.is_set()
        sid = server.server_id

        workers = [threading.Thread(
            target=invoke, args=(edge_http.base_url, "napper",
                                 {"seconds": 1.5}, f"load/{i}"))
            for i in range(16)]
        for w in workers:
            w.start()
        gaps = []
        last = hub.registry.server(sid).last_heartbeat
        t0 = time.time()
        while time.time() - t0 < 3.0:
            now_hb = hub.registry.server(sid).last_heartbeat
            if now_hb != last:
                gaps.append(now_hb - last)
                last = now_hb
            time.sleep(0.05)
        for w in workers:
            w.join(timeout=10)
        registration.stop()
        assert gaps, "no heartbeats arrived during load"
        assert max(gaps) < config.lease_seconds, gaps
        assert hub.registry.server_status(sid) == "online"


def test_registration_retries_until_hub_appears(tmp_path):
    # edge comes up first; the hub appears a moment later; backoff retries
    # must land the registration without intervention
    from conftest import free_port

    server = EdgeServer("early-bird")
    server.export_tool(make_tool("t1"), lambda p, c: {})
    port = free_port()

    with ServerThread(server.build_app()) as edge_http:
        registration = auto_register(
            server, f"http://127.0.0.1:{port}",
            {"principal_id": "edge-op", "secret": "e"},
            advertise_url=edge_http.base_url)
        time.sleep(1.0)  # a couple of failed attempts while the hub is down
        assert not registration.registered.is_set()

        config = HubConfig(storage_root=str(tmp_path / "store"), id_seed=4,
                           lease_seconds=5)
        hub = Hub(config, dispatcher=HttpDispatcher(lambda sid: ""))
        hub.auth.add_principal("edge-op", "agent", {"tools.read"}, secret="e")
        with ServerThread(create_app(hub), port=port):
            assert registration.registered.wait(timeout=15)
            assert hub.registry.find_tools({"tools.read", "dry.execute"})
        registration.stop()
