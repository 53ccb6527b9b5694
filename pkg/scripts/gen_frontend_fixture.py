#!/usr/bin/env python3
"""Record a 200+ event stream and its hub snapshot for the dashboard tests.

Runs a 70-node screening batch (random DAG over the desk echo tool) on the
in-process hub, then dumps the full event log as NDJSON plus the exact
GET /experiments/{eid} response body. Deterministic under the fixed seed.

Run from the repo root:  python3 scripts/gen_frontend_fixture.py
"""

from __future__ import annotations

import random
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from scp import canonical  # noqa: E402
from scp.local import local_hub  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "frontend" / "test" / "fixtures"
SCOPES = {"tools.read", "experiments.write", "dry.execute", "wet.execute"}


def random_batch_spec(eid: str, n: int = 70, seed: int = 20260810) -> dict:
    rng = random.Random(seed)
    nodes = []
    for i in range(n):
        deps = [f"m{j:02d}" for j in range(max(0, i - 6), i)
                if rng.random() < 0.25]
        nodes.append({
            "node_id": f"m{i:02d}", "tool_id": "echo",
            "capability_class": "compute.generic",
            "params": {"x": i},
            "expected_outputs": [{"name": "v", "type": "number",
                                  "required": True}],
            "depends_on": deps, "on_failure": "abort",
        })
    return {"spec_id": "wf-batch", "experiment_id": eid, "version": 1,
            "nodes": nodes, "created_from": "manual"}


def echo_fixture() -> dict:
    return {"name": "desk-echo-lab", "tools": [{
        "descriptor": {
            "tool_id": "echo", "capability_class": "compute.generic",
            "version": "1.0.0", "description": "echoes x",
            "params_schema": [{"name": "x", "type": "number",
                               "required": True}],
            "outputs_schema": [{"name": "v", "type": "number",
                                "required": True}],
            "side_effect": "none", "reversible": False,
            "estimates": {"latency_ms": 10, "cost_units": 0.1, "risk": 0.0},
            "security": {"required_scopes": ["dry.execute"]},
        },
        "latency_model": {"kind": "uniform", "low_ms": 5, "high_ms": 30},
        "failure_rate": 0.0, "seed_sensitivity": True,
        "behavior": {"kind": "expression", "outputs": {"v": "x"}},
    }]}


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as root:
        fixture_path = Path(root) / "echo_lab.json"
        fixture_path.write_text(canonical.dumps(echo_fixture()))
        hub, _ = local_hub(Path(root) / "store", seed=7,
                           fixture_paths=[str(fixture_path)])
        hub.auth.add_principal("ada", "human", SCOPES, secret="demo")
        token = hub.auth.issue_token("ada", "demo", SCOPES)
        record = hub.create_experiment(
            {"experiment_type": "dry", "goal": "70-node screening batch",
             "goal_tags": ["screening"], "config": {}, "priority": 5},
            owner="ada")
        eid = record.experiment_id
        hub.submit_workflow(eid, random_batch_spec(eid), "ada", token.value)
        # a pause/resume pair mid-run so control events appear in the stream
        for _ in range(40):
            hub.dispatcher.pump_next()
        hub.control(eid, "pause")
        for _ in range(10):
            hub.dispatcher.pump_next()
        hub.control(eid, "resume")
        hub.run_until_idle()
        assert record.phase == "completed", record.phase

        events = hub.provenance.read(eid)
        assert len(events) >= 200, len(events)
        (OUT / "stream.jsonl").write_text(
            "".join(canonical.dumps(e.to_dict()) + "\n" for e in events))
        (OUT / "status.json").write_text(canonical.dumps(hub.status(eid)) + "\n")
        print(f"wrote {len(events)} events and snapshot for {eid} to {OUT}")


if __name__ == "__main__":
    main()
