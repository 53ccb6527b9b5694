"""Registry: registration, heartbeats, lease sweeps, permission-filtered discovery."""

from __future__ import annotations

import random

import pytest

from scp.clock import SimulatedClock
from scp.errors import InvalidManifest, ToolUnavailable, UnknownServer, UnknownTool
from scp.hub.registry import Registry
from scp.idgen import IdSource
from scp.types import HealthReport, ServerManifest

from conftest import make_tool

ALL_SCOPES = {"tools.read", "experiments.write", "dry.execute", "wet.execute"}


def manifest(url="http://edge-a:9000", tools=None, name="edge-a"):
    return ServerManifest(name=name, callback_url=url,
                          tools=tools or [make_tool("t1"), make_tool("t2")])


def report(server_id, device_status=None, readiness=None):
    return HealthReport(server_id=server_id,
                        device_status=device_status or {},
                        model_readiness=readiness or {},
                        resource_utilization={"cpu_pct": 10.0, "mem_pct": 20.0},
                        reported_at="2026-01-01T00:00:00Z")


@pytest.fixture
def reg():
    clock = SimulatedClock()
    return Registry(clock, IdSource(seed=1), lease_seconds=30), clock


def test_register_two_tools_discoverable(reg):
    registry, _ = reg
    out = registry.register_server(manifest())
    assert out["server_id"].startswith("srv-") and out["lease_seconds"] == 30
    ids = [t.tool_id for t in registry.find_tools(ALL_SCOPES)]
    assert ids == ["t1", "t2"]


def test_reregistration_replaces_record(reg):
    registry, _ = reg
    first = registry.register_server(manifest())
    second = registry.register_server(manifest(
        tools=[make_tool("a"), make_tool("b"), make_tool("c")]))
    assert second["server_id"] == first["server_id"]
    assert [t.tool_id for t in registry.find_tools(ALL_SCOPES)] == ["a", "b", "c"]
    assert registry.server(first["server_id"]).generation == 2


def test_register_rejects_duplicate_tool_ids(reg):
    registry, _ = reg
    with pytest.raises(InvalidManifest):
        registry.register_server(manifest(tools=[make_tool("x"), make_tool("x")]))


def test_heartbeat_fault_tool_hidden(reg):
    registry, _ = reg
    sid = registry.register_server(manifest())["server_id"]
    registry.heartbeat(sid, report(sid, device_status={"t2": "fault"}))
    assert [t.tool_id for t in registry.find_tools(ALL_SCOPES)] == ["t1"]
    with pytest.raises(ToolUnavailable) as exc:
        registry.resolve_tool("t2")
    assert exc.value.reason == "fault"


def test_heartbeat_unknown_server(reg):
    registry, _ = reg
    with pytest.raises(UnknownServer):
        registry.heartbeat("srv-000000000000", report("srv-000000000000"))


def test_model_not_ready_hidden(reg):
    registry, _ = reg
    sid = registry.register_server(manifest())["server_id"]
    registry.heartbeat(sid, report(sid, readiness={"t1": False}))
    assert [t.tool_id for t in registry.find_tools(ALL_SCOPES)] == ["t2"]


def test_lease_expiry_hides_tools(reg):
    registry, clock = reg
    sid = registry.register_server(manifest())["server_id"]
    clock.advance(60)  # 2 leases: stale, still discoverable
    assert registry.server_status(sid) == "stale"
    assert len(registry.find_tools(ALL_SCOPES)) == 2
    clock.advance(60)  # past 3 leases: offline, hidden
    assert registry.server_status(sid) == "offline"
    assert registry.find_tools(ALL_SCOPES) == []
    with pytest.raises(ToolUnavailable) as exc:
        registry.resolve_tool("t1")
    assert exc.value.reason == "offline"


def test_scope_filtering_hides_device_tools(reg):
    registry, _ = reg
    wet_tool = make_tool("pipettor", "device.liquid_handler",
                         side_effect="physical", scopes=("wet.execute",))
    registry.register_server(manifest(tools=[make_tool("t1"), wet_tool]))
    dry_only = {"tools.read", "dry.execute"}
    assert [t.tool_id for t in registry.find_tools(dry_only)] == ["t1"]
    # sorted by (capability_class, tool_id): compute.generic before device.*
    assert [t.tool_id for t in registry.find_tools(ALL_SCOPES)] == ["t1", "pipettor"]


def test_find_tools_empty_registry(reg):
    registry, _ = reg
    assert registry.find_tools(ALL_SCOPES) == []


def test_find_tools_capability_and_text_filters(reg):
    registry, _ = reg
    registry.register_server(manifest(tools=[
        make_tool("dock1", "docking.engine"),
        make_tool("qed", "molecule.property")]))
    assert [t.tool_id for t in
            registry.find_tools(ALL_SCOPES, capability_class="docking.engine")] \
        == ["dock1"]
    assert [t.tool_id for t in registry.find_tools(ALL_SCOPES, text="QED")] == ["qed"]


def test_resolve_tool_returns_owner(reg):
    registry, _ = reg
    sid = registry.register_server(manifest())["server_id"]
    binding = registry.resolve_tool("t1")
    assert binding.server_id == sid
    assert binding.callback_url == "http://edge-a:9000"
    with pytest.raises(UnknownTool):
        registry.resolve_tool("nope")


def test_duplicate_tool_id_resolved_by_heartbeat_recency(reg):
    registry, clock = reg
    a = registry.register_server(manifest(url="http://a:1"))["server_id"]
    clock.advance(5)
    b = registry.register_server(manifest(url="http://b:1", name="edge-b"))["server_id"]
    assert registry.resolve_tool("t1").server_id == b
    clock.advance(5)
    registry.heartbeat(a, report(a))
    assert registry.resolve_tool("t1").server_id == a


def test_sweep_transitions(reg):
    registry, clock = reg
    sid = registry.register_server(manifest())["server_id"]
    assert registry.sweep_leases() == []
    clock.advance(65)
    assert registry.sweep_leases() == [
        {"server_id": sid, "from": "online", "to": "stale"}]
    clock.advance(60)
    assert registry.sweep_leases() == [
        {"server_id": sid, "from": "stale", "to": "offline"}]
    assert registry.sweep_leases() == []


def test_state_is_function_of_timed_operations():
    # same multiset of (op, logical time): commuting same-tick ops on
    # different servers may apply in any order; snapshots must agree
    def build(order_seed):
        clock = SimulatedClock()
        registry = Registry(clock, IdSource(seed=5), lease_seconds=30)
        ids = {}
        ops_by_time = {
            0: [("reg", "http://a:1"), ("reg", "http://b:1"), ("reg", "http://c:1")],
            40: [("hb", "http://a:1"), ("hb", "http://b:1")],
            100: [("hb", "http://a:1"), ("sweep", None)],
        }
        rng = random.Random(order_seed)
        for t in sorted(ops_by_time):
            if clock.now() - 1_700_000_000.0 < t:
                clock.advance(t - (clock.now() - 1_700_000_000.0))
            batch = list(ops_by_time[t])
            rng.shuffle(batch)
            for op, url in batch:
                if op == "reg":
                    ids[url] = registry.register_server(
                        manifest(url=url, name=url))["server_id"]
                elif op == "hb":
                    registry.heartbeat(ids[url], report(ids[url]))
                else:
                    registry.sweep_leases()
        return {(s["name"], s["status"]) for s in registry.servers()}

    snapshots = {frozenset(build(seed)) for seed in range(8)}
    assert len(snapshots) == 1
    assert dict(build(0))["http://c:1"] == "offline"
