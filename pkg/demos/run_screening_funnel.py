#!/usr/bin/env python3
"""Narrative demo: the molecule screening funnel, fully in-process.

Builds a hub wired to the packaged mock labs on a simulated clock, walks
the researcher flow (create -> plan -> select -> execute -> verify ->
archive -> replay), and prints what happened at each stage. Deterministic:
same seed, same output.

    python3 demos/run_screening_funnel.py [--seed 42]
"""

from __future__ import annotations

import argparse
import tempfile

from scp.local import local_hub, screening_inputs
from scp.provenance import load_bundle, replay_check

SCOPES = {"tools.read", "experiments.write", "dry.execute", "wet.execute"}


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory(prefix="scp-demo-") as root:
        hub, _ = local_hub(root, seed=args.seed)
        hub.auth.add_principal("ada", "human", SCOPES, secret="demo")
        token = hub.auth.issue_token("ada", "demo", SCOPES)

        print("== registered edge servers ==")
        for server in hub.registry.servers():
            print(f"  {server['server_id']}  {server['name']}"
                  f"  tools={server['tool_count']}  {server['status']}")

        record = hub.create_experiment(
            {"experiment_type": "dry",
             "goal": "screen 50 molecules and dock the survivors",
             "goal_tags": ["docking", "screening"],
             "config": screening_inputs(), "priority": 7}, owner="ada")
        eid = record.experiment_id
        print(f"\n== experiment {eid} ==")

        candidates = hub.plan(eid, {"k": 5}, "ada", SCOPES)
        print(f"\n== {len(candidates)} candidate plans (ranked) ==")
        for c in candidates:
            s = c.score
            print(f"  {c.plan_id}  total={s.total:7.1f}  "
                  f"latency={s.latency_ms:6.1f}ms  cost={s.cost_units:5.2f}  "
                  f"risk={s.risk:.4f}  steps={len(c.spec.nodes)}")
            print(f"      {c.rationale}")

        funnel = next(c for c in candidates
                      if "molecule-screening-docking" in c.rationale)
        print(f"\n== selecting {funnel.plan_id} ==")
        hub.select_plan(eid, funnel.plan_id, "ada", token.value)
        hub.run_until_idle()

        states = hub.executor.task_states(eid)
        print(f"\n== run finished: phase={record.phase} ==")
        for node_id, state in states.items():
            print(f"  {node_id:<18} {state['state']:<10} "
                  f"{state['tool_id']}")

        selected = states["s03_filter"]["outputs"]
        hits = states["s11_hit_selection"]["outputs"]
        print(f"\nproperty filter kept {selected['count']} of 50 molecules")
        print(f"affinity filter kept {hits['count']} final hits:")
        for smiles in hits["selected"]:
            print(f"  {smiles}")

        print(f"\nprovenance chain: "
              f"{'ok' if hub.provenance.verify_chain(eid) is None else 'BROKEN'}"
              f"  ({hub.provenance.last_seq(eid)} events)")

        bundle_path = hub.archive(eid)
        print(f"archived to {bundle_path}")

        # replay on a fresh hub with the same seed and compare projections
        with tempfile.TemporaryDirectory(prefix="scp-replay-") as root2:
            hub2, _ = local_hub(root2, seed=args.seed)
            hub2.auth.add_principal("ada", "human", SCOPES, secret="demo")
            token2 = hub2.auth.issue_token("ada", "demo", SCOPES)
            bundle = load_bundle(bundle_path)
            record2 = hub2.create_experiment(
                {"experiment_type": "dry", "goal": record.context.goal,
                 "goal_tags": sorted(record.context.goal_tags),
                 "config": record.context.config}, owner="ada")
            spec = bundle["specs"][-1].to_dict()
            spec["experiment_id"] = record2.experiment_id
            spec["created_from"] = "replay"
            hub2.submit_workflow(record2.experiment_id, spec, "ada",
                                 token2.value)
            hub2.run_until_idle()
            diff = replay_check(bundle["events"],
                                hub2.provenance.read(record2.experiment_id),
                                bundle["specs"][-1])
            print(f"replay with seed {args.seed}: "
                  f"{'equal' if diff is None else diff}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
