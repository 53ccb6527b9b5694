"""The Hub facade: experiments, planning, selection, control, archival.

Wires the registry, auth store, planner, executor, and provenance store
behind one object; the HTTP layer and the in-process test/replay assembly
are both thin shells over this.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from ..clock import Clock, SystemClock
from ..dispatch import Dispatcher
from ..errors import (NotTerminal, SchemaViolation, UnknownExperiment,
                      UnknownPlan)
from ..idgen import IdSource
from ..provenance import ProvenanceStore
from ..types import (ExperimentContext, HealthReport, PlanCandidate,
                     ServerManifest, WorkflowSpec)
from ..validation import parse_workflow_dict
from .auth import AuthStore
from .config import HubConfig
from .executor import ExecutionPolicy, Executor
from .lifecycle import ExperimentRecord
from .planner import GoalSpec, Planner, WorkflowTemplate
from .registry import Registry

from .. import canonical


def load_template_library(directory: str | Path) -> list[WorkflowTemplate]:
    templates = []
    for path in sorted(Path(directory).glob("*.json")):
        templates.append(WorkflowTemplate.from_dict(
            canonical.loads(path.read_bytes()), path.name))
    return templates


class Hub:
    def __init__(self, config: HubConfig, clock: Optional[Clock] = None,
                 dispatcher: Optional[Dispatcher] = None):
        self.config = config
        self.clock = clock or SystemClock()
        self.ids = IdSource(seed=config.id_seed)
        self.registry = Registry(self.clock, self.ids,
                                 lease_seconds=config.lease_seconds)
        self.auth = AuthStore(self.clock, self.ids,
                              ttl_seconds=config.token_ttl_seconds)
        self.provenance = ProvenanceStore(config.storage_root, self.clock)
        self.planner = Planner(load_template_library(
            config.resolved_template_dir()))
        self.default_policy = (ExecutionPolicy.from_dict(config.policy)
                               if config.policy else ExecutionPolicy())
        self.dispatcher = dispatcher
        self.executor = Executor(self.registry, self.provenance, self.clock,
                                 dispatcher, default_policy=self.default_policy,
                                 offline_grace_seconds=config.lease_seconds)
        self._records: dict[str, ExperimentRecord] = {}
        self._server_tokens: dict[str, str] = {}
        self._lock = threading.RLock()
        for p in config.principals:
            self.auth.add_principal(p["principal_id"], p.get("kind", "human"),
                                    set(p.get("scopes", [])),
                                    secret=p.get("secret", ""))

    # --- records -----------------------------------------------------------------

    def record(self, experiment_id: str) -> ExperimentRecord:
        with self._lock:
            record = self._records.get(experiment_id)
        if record is None:
            raise UnknownExperiment(experiment_id)
        return record

    def experiments(self) -> list[ExperimentRecord]:
        with self._lock:
            return sorted(self._records.values(),
                          key=lambda r: r.experiment_id)

    # --- servers ------------------------------------------------------------------

    def register_server(self, manifest_dict: dict) -> dict:
        manifest = ServerManifest.from_dict(manifest_dict)
        out = self.registry.register_server(manifest)
        token = self.auth.issue_server_token(out["server_id"])
        with self._lock:
            self._server_tokens[out["server_id"]] = token.value
        return {**out, "server_token": token.value}

    def server_token(self, server_id: str) -> str:
        with self._lock:
            return self._server_tokens.get(server_id, "")

    def heartbeat(self, server_id: str, report_dict: dict) -> None:
        self.registry.heartbeat(server_id,
                                HealthReport.from_dict(report_dict))

    # --- experiments -----------------------------------------------------------------

    def create_experiment(self, body: dict, owner: str) -> ExperimentRecord:
        context = ExperimentContext.from_dict({
            "experiment_id": self.ids.experiment_id(),
            "experiment_type": body.get("experiment_type", "dry"),
            "goal": body.get("goal", ""),
            "goal_tags": sorted(set(body.get("goal_tags", []))),
            "data_uris": body.get("data_uris", []),
            "config": body.get("config", {}),
            "priority": body.get("priority", 5),
            "owner": owner,
            "created_at": self.clock.timestamp(),
            **({"budget": body["budget"]} if body.get("budget") else {}),
        })
        record = ExperimentRecord(context=context)
        with self._lock:
            self._records[context.experiment_id] = record
        self.provenance.create(context.experiment_id)
        self.provenance.save_context(context)
        self.provenance.append(
            context.experiment_id, "experiment_registered", owner,
            {"experiment_type": context.experiment_type, "goal": context.goal,
             "goal_tags": sorted(context.goal_tags),
             "priority": context.priority, "owner": owner})
        return record

    def plan(self, experiment_id: str, body: dict, actor: str,
             scopes: set[str]) -> list[PlanCandidate]:
        record = self.record(experiment_id)
        record.require_phase("registered", "planned")
        goal_tags = set(body.get("goal_tags") or record.context.goal_tags)
        goal = GoalSpec(experiment_id=experiment_id, goal_tags=goal_tags,
                        constraints=body.get("constraints", {}),
                        k=body.get("k", 3))
        view = self.registry.snapshot(scopes)
        active = self._active_specs(experiment_id)
        candidates = self.planner.propose(
            goal, record.context, view, active,
            spec_id_source=self.ids.spec_id,
            version=record.next_version())
        with record.lock:
            record.plans = {c.plan_id: c for c in candidates}
            if record.phase == "registered":
                record.transition("planned")
        self.provenance.append(
            experiment_id, "plans_proposed", actor,
            {"plan_ids": [c.plan_id for c in candidates], "k": goal.k,
             "count": len(candidates)})
        return candidates

    def _active_specs(self, excluding: str):
        active = []
        with self._lock:
            records = list(self._records.values())
        for other in records:
            if other.experiment_id == excluding or other.phase != "executing":
                continue
            run = self.executor.run_for(other.experiment_id)
            spec = other.active_spec
            if run is None or spec is None:
                continue
            remaining = {n for n, rt in run.tasks.items()
                         if rt.state not in ("completed", "compensated")}
            active.append((spec, remaining))
        return active

    def required_node_scopes(self, spec: WorkflowSpec) -> set[str]:
        needed: set[str] = set()
        for node in spec.nodes:
            binding = self.registry.resolve_tool(node.tool_id)
            needed |= binding.descriptor.required_scopes
        return needed

    def select_plan(self, experiment_id: str, plan_id: str, actor: str,
                    token_value: str) -> ExperimentRecord:
        record = self.record(experiment_id)
        with record.lock:
            record.require_phase("planned")
            candidate = record.plans.get(plan_id)
            if candidate is None:
                raise UnknownPlan(plan_id)
            spec = candidate.spec
            spec.version = record.next_version()
            self.auth.require_scopes(token_value,
                                     self.required_node_scopes(spec))
            record.selected_plan_id = plan_id
            record.store_spec(spec)
            self.provenance.save_spec(experiment_id, spec)
            self.provenance.append(
                experiment_id, "plan_selected", actor,
                {"plan_id": plan_id, "spec_id": spec.spec_id,
                 "version": spec.version})
            self.executor.start(record, spec)
        return record

    def submit_workflow(self, experiment_id: str, spec_dict: dict, actor: str,
                        token_value: str) -> ExperimentRecord:
        record = self.record(experiment_id)
        with record.lock:
            record.require_phase("registered", "planned")
            spec = parse_workflow_dict(spec_dict)
            if spec.experiment_id != experiment_id:
                raise SchemaViolation("spec.experiment_id",
                                      f"{spec.experiment_id!r} does not match "
                                      f"{experiment_id!r}")
            spec.version = record.next_version()
            self.auth.require_scopes(token_value,
                                     self.required_node_scopes(spec))
            if record.phase == "registered":
                record.transition("planned")
            record.store_spec(spec)
            self.provenance.save_spec(experiment_id, spec)
            self.executor.start(record, spec)
        return record

    def control(self, experiment_id: str, action: str) -> ExperimentRecord:
        record = self.record(experiment_id)
        self.executor.control(record, action)
        return record

    def status(self, experiment_id: str) -> dict:
        record = self.record(experiment_id)
        return {
            "context": record.context.to_dict(),
            "phase": record.phase,
            "task_states": self.executor.task_states(experiment_id),
            "selected_plan_id": record.selected_plan_id,
            "active_spec_version": record.active_spec_version,
            "plans": [c.to_dict() for c in record.plans.values()],
            "last_seq": (self.provenance.last_seq(experiment_id)
                         if self.provenance.known(experiment_id) else 0),
        }

    def archive(self, experiment_id: str) -> str:
        record = self.record(experiment_id)
        with record.lock:
            if not record.is_terminal():
                raise NotTerminal(record.phase)
            bundle = self.provenance.archive(experiment_id)
            record.transition("archived")
        return str(bundle)

    # --- background maintenance -----------------------------------------------------

    def tick(self) -> None:
        """One maintenance pass: lease sweep plus per-run anomaly checks."""
        self.registry.sweep_leases()
        with self._lock:
            ids = list(self._records)
        for experiment_id in ids:
            self.executor.detect_anomalies(experiment_id)

    def run_until_idle(self, max_steps: int = 100_000) -> int:
        """Local mode only: pump the in-process dispatcher dry."""
        return self.dispatcher.run_until_idle(on_tick=self.tick,
                                              max_steps=max_steps)
