"""Workflow execution: dispatch in dependency order, validate results,
retry, substitute, roll back, and drive the experiment state machine.

Per-experiment state is mutated under a single run lock, so result
callbacks may arrive from any thread. A node is dispatched only when every
dependency has completed; while paused the dispatched set never grows;
rollback visits completed nodes in exact reverse completion order and
invokes each reversible node's compensation tool, skipping irreversible
(physical) ones.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from ..clock import Clock
from ..dispatch import Dispatcher, Invocation
from ..errors import (NoAlternative, NotFinished, SchemaViolation, StaleResult,
                      ToolUnavailable, UnknownTask, UnknownTool,
                      ValidationFailed, WrongPhase)
from ..graph import topological_layers
from ..provenance import ProvenanceStore
from ..types import (SCOPES, Event, TaskNode, ToolDescriptor, Violation,
                     WorkflowSpec, parse_config_ref, parse_ref)
from ..validation import validate_output, validate_workflow
from .lifecycle import ExperimentRecord
from .registry import Registry

LEGAL_TASK_TRANSITIONS = {
    ("pending", "dispatched"),
    ("dispatched", "running"),
    ("running", "completed"),
    ("running", "failed"),
    ("failed", "dispatched"),
    ("completed", "compensated"),
    ("pending", "cancelled"),
}


@dataclass
class ExecutionPolicy:
    default_max_retries: int = 2
    consecutive_failure_pause_threshold: int = 3
    latency_warning_factor: float = 5.0
    fallback: str = "none"  # none | substitute_tool | pause_for_human

    def __post_init__(self):
        if self.default_max_retries < 0:
            raise SchemaViolation("policy.default_max_retries", "must be >= 0")
        if self.consecutive_failure_pause_threshold < 1:
            raise SchemaViolation("policy.consecutive_failure_pause_threshold",
                                  "must be >= 1")
        if self.latency_warning_factor <= 1:
            raise SchemaViolation("policy.latency_warning_factor", "must be > 1")
        if self.fallback not in ("none", "substitute_tool", "pause_for_human"):
            raise SchemaViolation("policy.fallback", f"unknown {self.fallback!r}")

    def to_dict(self) -> dict:
        return {"default_max_retries": self.default_max_retries,
                "consecutive_failure_pause_threshold":
                    self.consecutive_failure_pause_threshold,
                "latency_warning_factor": self.latency_warning_factor,
                "fallback": self.fallback}

    @classmethod
    def from_dict(cls, d: dict) -> "ExecutionPolicy":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass
class TaskRuntime:
    node: TaskNode
    state: str = "pending"
    attempts: int = 0
    outputs: Optional[dict] = None
    bound_tool_id: str = ""  # differs from node.tool_id after substitution
    descriptor: Optional[ToolDescriptor] = None
    server_id: str = ""
    current_task_id: str = ""
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    latency_ms: Optional[float] = None
    cancel_requested: bool = False
    failed_terminal: bool = False
    substituted: bool = False
    latency_warned_attempt: int = 0
    offline_since: Optional[float] = None

    @property
    def tool_id(self) -> str:
        return self.bound_tool_id or self.node.tool_id

    def transition(self, to: str) -> None:
        if (self.state, to) not in LEGAL_TASK_TRANSITIONS:
            raise StaleResult(f"illegal task transition {self.state} -> {to} "
                              f"on node {self.node.node_id}")
        self.state = to

    def snapshot(self) -> dict:
        d = {"node_id": self.node.node_id, "state": self.state,
             "attempts": self.attempts, "tool_id": self.tool_id}
        if self.outputs is not None:
            d["outputs"] = self.outputs
        if self.server_id:
            d["server_id"] = self.server_id
        if self.latency_ms is not None:
            d["latency_ms"] = self.latency_ms
        return d


@dataclass
class Run:
    record: ExperimentRecord
    spec: WorkflowSpec
    policy: ExecutionPolicy
    tasks: dict[str, TaskRuntime]
    dependents: dict[str, list[str]]
    started_at: float = 0.0
    completion_order: list[str] = field(default_factory=list)
    consecutive_failures: int = 0
    failure_pause_fired: bool = False
    aborting: bool = False
    rollback_requested: bool = False
    rollback_active: bool = False
    rollback_done: bool = False
    rollback_queue: list[str] = field(default_factory=list)
    rollback_results: list[dict] = field(default_factory=list)
    comp_pending: str = ""
    deferred_terminal: list[str] = field(default_factory=list)
    finished: bool = False
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @property
    def experiment_id(self) -> str:
        return self.record.experiment_id

    def max_retries(self, rt: TaskRuntime) -> int:
        if rt.node.max_retries is not None:
            return rt.node.max_retries
        return self.policy.default_max_retries

    def in_flight(self) -> list[TaskRuntime]:
        return [rt for rt in self.tasks.values()
                if rt.state in ("dispatched", "running")]

    def dispatched_set(self) -> set[str]:
        return {n for n, rt in self.tasks.items() if rt.attempts > 0}

    def ready_pending(self) -> list[str]:
        out = []
        for node_id, rt in self.tasks.items():
            if rt.state != "pending":
                continue
            if all(self.tasks[d].state in ("completed", "compensated")
                   for d in rt.node.depends_on):
                out.append(node_id)
        return sorted(out)


class Executor:
    """Runs selected workflow specs against the registry via a dispatcher."""

    def __init__(self, registry: Registry, provenance: ProvenanceStore,
                 clock: Clock, dispatcher: Dispatcher,
                 default_policy: Optional[ExecutionPolicy] = None,
                 offline_grace_seconds: float = 30.0):
        self._registry = registry
        self._provenance = provenance
        self._clock = clock
        self._dispatcher = dispatcher
        self._policy = default_policy or ExecutionPolicy()
        self._grace = offline_grace_seconds
        self._runs: dict[str, Run] = {}
        self._task_index: dict[str, tuple[str, str]] = {}
        self._lock = threading.RLock()
        if hasattr(dispatcher, "sink"):
            dispatcher.sink = self

    # --- helpers --------------------------------------------------------------

    def _append(self, run: Run, kind: str, payload: dict) -> Event:
        return self._provenance.append(run.experiment_id, kind, "hub", payload)

    def run_for(self, experiment_id: str) -> Optional[Run]:
        with self._lock:
            return self._runs.get(experiment_id)

    def task_states(self, experiment_id: str) -> dict[str, dict]:
        run = self.run_for(experiment_id)
        if run is None:
            return {}
        with run.lock:
            return {n: rt.snapshot() for n, rt in sorted(run.tasks.items())}

    def rollback_outcomes(self, experiment_id: str) -> list[dict]:
        run = self.run_for(experiment_id)
        if run is None:
            return []
        with run.lock:
            return list(run.rollback_results)

    # --- start ------------------------------------------------------------------

    def start(self, record: ExperimentRecord, spec: WorkflowSpec,
              policy: Optional[ExecutionPolicy] = None) -> None:
        record.require_phase("planned")
        snapshot = self._registry.snapshot(set(SCOPES))
        violations = validate_workflow(spec, snapshot.descriptors())
        violations += self._check_config_refs(spec, record)
        if violations:
            raise ValidationFailed(violations)
        run = Run(record=record, spec=spec, policy=policy or self._policy,
                  tasks={n.node_id: TaskRuntime(node=n) for n in spec.nodes},
                  dependents=self._dependents_of(spec),
                  started_at=self._clock.now())
        with self._lock:
            self._runs[record.experiment_id] = run
        record.transition("executing")
        self._append(run, "workflow_compiled",
                     {"spec_id": spec.spec_id, "version": spec.version,
                      "node_count": len(spec.nodes),
                      "layers": topological_layers(spec)})
        with run.lock:
            for node_id in run.ready_pending():
                self._dispatch(run, node_id)
            self._maybe_finish(run)

    @staticmethod
    def _dependents_of(spec: WorkflowSpec) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n.node_id: [] for n in spec.nodes}
        for node in spec.nodes:
            for dep in node.depends_on:
                out[dep].append(node.node_id)
        return out

    @staticmethod
    def _check_config_refs(spec: WorkflowSpec,
                           record: ExperimentRecord) -> list[Violation]:
        violations = []
        for node in spec.nodes:
            for name, value in node.params.items():
                key = parse_config_ref(value)
                if key is not None and key not in record.context.config:
                    violations.append(Violation(
                        "UnknownConfigKey", f"config has no key {key!r}",
                        node_id=node.node_id, param=name))
        return violations

    # --- dispatch ------------------------------------------------------------------

    def _resolve_params(self, run: Run, node: TaskNode) -> dict:
        params = {}
        for name, value in node.params.items():
            ref = parse_ref(value)
            if ref is not None:
                upstream = run.tasks[ref[0]]
                params[name] = (upstream.outputs or {}).get(ref[1])
                continue
            key = parse_config_ref(value)
            if key is not None:
                params[name] = run.record.context.config[key]
                continue
            params[name] = value
        return params

    def _dispatch(self, run: Run, node_id: str,
                  substituted_from: str = "") -> None:
        rt = run.tasks[node_id]
        rt.transition("dispatched")
        rt.attempts += 1
        rt.cancel_requested = False
        task_id = f"{run.experiment_id}/{node_id}/{rt.attempts}"
        rt.current_task_id = task_id
        with self._lock:
            self._task_index[task_id] = (run.experiment_id, node_id)
        payload = {"node_id": node_id, "tool_id": rt.tool_id,
                   "attempt": rt.attempts}
        if substituted_from:
            payload["substituted_from"] = substituted_from
        try:
            binding = self._registry.resolve_tool(rt.tool_id)
        except (UnknownTool, ToolUnavailable) as exc:
            payload["server_id"] = ""
            self._append(run, "task_dispatched", payload)
            rt.transition("running")
            rt.started_at = self._clock.now()
            self._handle_failure(run, rt, f"dispatch_failed: {exc.code}")
            return
        rt.descriptor = binding.descriptor
        rt.server_id = binding.server_id
        rt.offline_since = None
        payload["server_id"] = binding.server_id
        self._append(run, "task_dispatched", payload)
        self._dispatcher.dispatch(Invocation(
            task_id=task_id, experiment_id=run.experiment_id,
            node_id=node_id, tool_id=rt.tool_id,
            server_id=binding.server_id, callback_url=binding.callback_url,
            params=self._resolve_params(run, rt.node),
            expected_outputs=rt.node.expected_outputs,
            context=run.record.context.to_dict()))

    # --- result callbacks --------------------------------------------------------------

    def _locate(self, task_id: str) -> tuple[Run, TaskRuntime]:
        with self._lock:
            entry = self._task_index.get(task_id)
        if entry is None:
            raise UnknownTask(task_id)
        run = self.run_for(entry[0])
        if run is None:
            raise UnknownTask(task_id)
        return run, run.tasks[entry[1]]

    def on_task_started(self, task_id: str) -> None:
        try:
            run, rt = self._locate(task_id)
        except UnknownTask:
            return
        with run.lock:
            if rt.current_task_id != task_id or rt.state != "dispatched":
                return
            rt.transition("running")
            rt.started_at = self._clock.now()
            self._append(run, "task_progress",
                         {"node_id": rt.node.node_id, "progress": 0.0,
                          "message": "started"})

    def on_task_progress(self, task_id: str, progress: float,
                         message: str = "") -> None:
        try:
            run, rt = self._locate(task_id)
        except UnknownTask:
            return
        with run.lock:
            if rt.current_task_id != task_id or rt.state != "running":
                return  # stale progress is harmless
            self._append(run, "task_progress",
                         {"node_id": rt.node.node_id, "progress": progress,
                          "message": message})

    def on_task_result(self, task_id: str, outputs: Optional[dict] = None,
                       error: Optional[str] = None) -> None:
        run, rt = self._locate(task_id)
        with run.lock:
            if task_id.endswith("/comp"):
                self._on_compensation_result(run, rt, outputs, error)
                return
            if rt.current_task_id != task_id:
                raise StaleResult(task_id)
            if rt.state == "dispatched":  # edge skipped the started signal
                rt.transition("running")
                rt.started_at = rt.started_at or self._clock.now()
            if rt.state != "running":
                raise StaleResult(f"{task_id} is {rt.state}")
            if error is not None:
                self._handle_failure(run, rt, error)
            else:
                violations = self._validate_outputs(rt.node, outputs or {})
                if violations:
                    self._append(run, "validation_failed",
                                 {"node_id": rt.node.node_id,
                                  "violations": [v.to_dict() for v in violations]})
                    self._handle_failure(run, rt, "output_validation_failed")
                else:
                    self._complete_task(run, rt, outputs or {})
            self._maybe_finish(run)

    @staticmethod
    def _validate_outputs(node: TaskNode, outputs: dict) -> list[Violation]:
        violations = []
        for schema in node.expected_outputs:
            if schema.name not in outputs:
                if schema.required:
                    violations.append(Violation(
                        "MissingOutput", f"output {schema.name!r} absent",
                        node_id=node.node_id, param=schema.name))
                continue
            v = validate_output(outputs[schema.name], schema)
            if v is not None:
                violations.append(Violation(v.code, v.detail,
                                            node_id=node.node_id,
                                            param=schema.name))
        return violations

    def _complete_task(self, run: Run, rt: TaskRuntime, outputs: dict) -> None:
        rt.transition("completed")
        rt.outputs = outputs
        rt.finished_at = self._clock.now()
        rt.latency_ms = (rt.finished_at - (rt.started_at or rt.finished_at)) * 1000
        run.completion_order.append(rt.node.node_id)
        run.consecutive_failures = 0
        run.failure_pause_fired = False
        self._append(run, "task_completed",
                     {"node_id": rt.node.node_id, "outputs": outputs,
                      "latency_ms": rt.latency_ms})
        if run.aborting or run.record.phase == "paused":
            return  # recorded, but dependents stay put
        for node_id in run.ready_pending():
            self._dispatch(run, node_id)

    def _handle_failure(self, run: Run, rt: TaskRuntime, error: str) -> None:
        run.consecutive_failures += 1
        cancelled = (error == "cancelled" or rt.cancel_requested or run.aborting)
        retriable = (not cancelled and rt.attempts <= run.max_retries(rt))
        self._append(run, "task_failed",
                     {"node_id": rt.node.node_id, "error": error,
                      "attempt": rt.attempts,
                      "terminal": not retriable})
        rt.transition("failed")
        self._check_failure_streak(run)
        if retriable:
            if run.record.phase == "paused" or run.aborting:
                return  # resume or abort handling picks this node up
            self._dispatch(run, rt.node.node_id)
            return
        # terminal failure: fallback, then the node's on_failure policy
        if (run.policy.fallback == "substitute_tool" and not rt.substituted
                and not cancelled):
            try:
                self._substitute(run, rt)
                return
            except NoAlternative:
                pass
        rt.failed_terminal = True
        if run.aborting:
            return
        if run.record.phase == "paused":
            run.deferred_terminal.append(rt.node.node_id)
            return
        self._apply_on_failure(run, rt)

    def _check_failure_streak(self, run: Run) -> None:
        threshold = run.policy.consecutive_failure_pause_threshold
        if run.consecutive_failures >= threshold and not run.failure_pause_fired:
            run.failure_pause_fired = True
            self._append(run, "anomaly_warning",
                         {"kind": "consecutive_failures",
                          "detail": f"{run.consecutive_failures} consecutive "
                                    f"failures (threshold {threshold})",
                          "node_ids": []})
            if run.record.phase == "executing" and not run.aborting:
                run.record.transition("paused")
                self._append(run, "control_applied",
                             {"action": "pause", "phase_before": "executing",
                              "phase_after": "paused",
                              "reason": "consecutive_failures"})

    def _substitute(self, run: Run, rt: TaskRuntime) -> None:
        """Rebind a terminally failed node to another tool of its class."""
        snapshot = self._registry.snapshot(set(SCOPES))
        choices = [b for b in snapshot.by_class(rt.node.capability_class)
                   if b.descriptor.tool_id != rt.tool_id]
        if not choices:
            raise NoAlternative(rt.node.capability_class)
        choices.sort(key=lambda b: (b.descriptor.estimates["latency_ms"],
                                    b.descriptor.tool_id))
        old = rt.tool_id
        rt.bound_tool_id = choices[0].descriptor.tool_id
        rt.substituted = True
        rt.attempts = 0
        self._dispatch(run, rt.node.node_id, substituted_from=old)

    def _apply_on_failure(self, run: Run, rt: TaskRuntime) -> None:
        mode = rt.node.on_failure
        if mode == "pause":
            if run.record.phase == "executing":
                run.record.transition("paused")
                self._append(run, "control_applied",
                             {"action": "pause", "phase_before": "executing",
                              "phase_after": "paused",
                              "reason": f"node {rt.node.node_id} failed"})
            return
        if mode == "rollback":
            run.rollback_requested = True
        self._cancel_outstanding(run)

    def _cancel_outstanding(self, run: Run) -> None:
        for node_id in sorted(run.tasks):
            other = run.tasks[node_id]
            if other.state == "pending":
                other.transition("cancelled")
                self._append(run, "task_failed",
                             {"node_id": node_id, "error": "cancelled",
                              "attempt": 0, "terminal": True,
                              "cancelled_before_dispatch": True})
            elif other.state in ("dispatched", "running"):
                other.cancel_requested = True
                self._dispatcher.cancel(other.current_task_id)

    # --- control -------------------------------------------------------------------------

    def control(self, record: ExperimentRecord, action: str) -> None:
        run = self.run_for(record.experiment_id)
        if run is None:
            raise WrongPhase(record.phase, wanted="executing|paused")
        with run.lock:
            if action == "pause":
                before = record.phase
                record.require_phase("executing")
                record.transition("paused")
            elif action == "resume":
                before = record.phase
                record.require_phase("paused")
                record.transition("executing")
            elif action == "abort":
                before = record.phase
                record.require_phase("executing", "paused")
                run.aborting = True
            else:
                raise SchemaViolation("action", f"unknown control {action!r}")
            self._append(run, "control_applied",
                         {"action": action, "phase_before": before,
                          "phase_after": record.phase})
            if action == "resume":
                self._resume(run)
            elif action == "abort":
                self._cancel_outstanding(run)
                self._maybe_finish(run)

    def _resume(self, run: Run) -> None:
        for node_id in list(run.deferred_terminal):
            run.deferred_terminal.remove(node_id)
            self._apply_on_failure(run, run.tasks[node_id])
        for node_id in sorted(run.tasks):
            rt = run.tasks[node_id]
            if (rt.state == "failed" and not rt.failed_terminal
                    and rt.attempts <= run.max_retries(rt)):
                self._dispatch(run, node_id)
        if run.record.phase == "executing" and not run.aborting:
            for node_id in run.ready_pending():
                self._dispatch(run, node_id)
        self._maybe_finish(run)

    # --- rollback -------------------------------------------------------------------------

    def _start_rollback(self, run: Run) -> None:
        run.rollback_active = True
        run.rollback_queue = [n for n in reversed(run.completion_order)
                              if run.tasks[n].state == "completed"]
        self._advance_rollback(run)

    def _advance_rollback(self, run: Run) -> None:
        while run.rollback_queue:
            node_id = run.rollback_queue.pop(0)
            rt = run.tasks[node_id]
            descriptor = rt.descriptor
            if (descriptor is None or not descriptor.reversible
                    or descriptor.side_effect == "physical"):
                reason = ("physical side effect"
                          if descriptor and descriptor.side_effect == "physical"
                          else "irreversible")
                self._append(run, "rollback_skipped",
                             {"node_id": node_id, "reason": reason})
                run.rollback_results.append({"node_id": node_id,
                                             "outcome": "rollback_skipped"})
                continue
            comp = descriptor.compensation
            params = {param: (rt.outputs or {}).get(out)
                      for out, param in comp["param_map"].items()}
            task_id = f"{run.experiment_id}/{node_id}/comp"
            try:
                binding = self._registry.resolve_tool(comp["tool_id"])
            except (UnknownTool, ToolUnavailable) as exc:
                self._record_compensation(run, rt, "failed",
                                          error=f"compensation_unresolvable: "
                                                f"{exc.code}")
                continue
            with self._lock:
                self._task_index[task_id] = (run.experiment_id, node_id)
            run.comp_pending = node_id
            self._dispatcher.dispatch(Invocation(
                task_id=task_id, experiment_id=run.experiment_id,
                node_id=node_id, tool_id=comp["tool_id"],
                server_id=binding.server_id, callback_url=binding.callback_url,
                params=params, kind="compensation",
                context=run.record.context.to_dict()))
            return  # compensations run one at a time, strictly in order
        run.rollback_active = False
        run.rollback_done = True
        self._maybe_finish(run)

    def _record_compensation(self, run: Run, rt: TaskRuntime, status: str,
                             error: str = "") -> None:
        payload = {"node_id": rt.node.node_id, "status": status,
                   "compensation_tool_id":
                       (rt.descriptor.compensation or {}).get("tool_id", "")}
        if error:
            payload["error"] = error
        self._append(run, "task_compensated", payload)
        if status == "ok":
            rt.transition("compensated")
            run.rollback_results.append({"node_id": rt.node.node_id,
                                         "outcome": "compensated"})
        else:
            run.rollback_results.append({"node_id": rt.node.node_id,
                                         "outcome": "compensation_failed"})

    def _on_compensation_result(self, run: Run, rt: TaskRuntime,
                                outputs: Optional[dict],
                                error: Optional[str]) -> None:
        if run.comp_pending != rt.node.node_id:
            raise StaleResult(f"unexpected compensation result for "
                              f"{rt.node.node_id}")
        run.comp_pending = ""
        self._record_compensation(run, rt, "failed" if error else "ok",
                                  error=error or "")
        self._advance_rollback(run)

    # --- anomaly detection -----------------------------------------------------------------

    def detect_anomalies(self, experiment_id: str) -> list[Event]:
        run = self.run_for(experiment_id)
        if run is None or run.finished:
            return []
        emitted: list[Event] = []
        now = self._clock.now()
        with run.lock:
            for node_id in sorted(run.tasks):
                rt = run.tasks[node_id]
                if rt.state not in ("dispatched", "running"):
                    continue
                estimate = (rt.descriptor.estimates["latency_ms"]
                            if rt.descriptor else 0.0)
                if (rt.state == "running" and estimate > 0
                        and rt.latency_warned_attempt != rt.attempts):
                    elapsed_ms = (now - (rt.started_at or now)) * 1000
                    if elapsed_ms > run.policy.latency_warning_factor * estimate:
                        rt.latency_warned_attempt = rt.attempts
                        emitted.append(self._append(
                            run, "anomaly_warning",
                            {"kind": "latency_overrun",
                             "detail": f"{elapsed_ms:.0f} ms vs estimate "
                                       f"{estimate:.0f} ms",
                             "node_ids": [node_id]}))
                if rt.server_id and \
                        self._registry.server_status(rt.server_id) == "offline":
                    if rt.offline_since is None:
                        rt.offline_since = now
                        emitted.append(self._append(
                            run, "anomaly_warning",
                            {"kind": "server_offline",
                             "detail": f"server {rt.server_id} offline "
                                       f"mid-task", "node_ids": [node_id]}))
                    elif now - rt.offline_since > self._grace:
                        if rt.state == "dispatched":
                            rt.transition("running")
                            rt.started_at = rt.started_at or now
                        self._handle_failure(run, rt, "server_offline")
                        self._maybe_finish(run)
                else:
                    rt.offline_since = None
        return emitted

    # --- completion ------------------------------------------------------------------------

    def _maybe_finish(self, run: Run) -> None:
        if run.finished or run.in_flight() or run.comp_pending:
            return
        if (run.aborting or run.rollback_requested) and not run.rollback_done:
            if not run.rollback_active:
                self._start_rollback(run)
            return
        if run.record.phase == "paused":
            return
        states = {n: rt.state for n, rt in run.tasks.items()}
        pending = [n for n, s in states.items() if s == "pending"]
        if pending and self._any_runnable(run, pending):
            return  # scheduler will still reach them
        if any(s == "failed" and not run.tasks[n].failed_terminal
               for n, s in states.items()):
            return  # retriable failure awaiting resume
        self._finalize(run, states)

    @staticmethod
    def _any_runnable(run: Run, pending: list[str]) -> bool:
        """True when some pending node is not transitively blocked by a
        terminal failure or cancellation."""
        blocked = {n for n, rt in run.tasks.items()
                   if rt.failed_terminal or rt.state == "cancelled"}
        changed = True
        while changed:
            changed = False
            for node_id, rt in run.tasks.items():
                if node_id not in blocked and \
                        any(d in blocked for d in rt.node.depends_on):
                    blocked.add(node_id)
                    changed = True
        return any(n not in blocked for n in pending)

    def _finalize(self, run: Run, states: dict[str, str]) -> None:
        run.finished = True
        all_completed = all(s == "completed" for s in states.values())
        total_latency_ms = (self._clock.now() - run.started_at) * 1000
        if all_completed:
            run.record.transition("completed")
            self._append(run, "experiment_completed",
                         {"node_states": states,
                          "total_latency_ms": total_latency_ms})
        else:
            outcome = "aborted" if run.aborting else "failed"
            run.record.transition(outcome)
            self._append(run, "experiment_failed",
                         {"node_states": states, "outcome": outcome,
                          "total_latency_ms": total_latency_ms})

    def finalize(self, record: ExperimentRecord) -> dict:
        """Explicit finalize check; raises NotFinished while work remains."""
        run = self.run_for(record.experiment_id)
        if run is None:
            raise WrongPhase(record.phase, wanted="executing")
        with run.lock:
            if not run.finished:
                if run.in_flight() or run.comp_pending:
                    raise NotFinished(record.experiment_id)
                self._maybe_finish(run)
            if not run.finished:
                raise NotFinished(record.experiment_id)
            return {"phase": record.phase,
                    "task_states": {n: rt.state
                                    for n, rt in sorted(run.tasks.items())}}


def replay_task_states(events) -> dict[str, str]:
    """Fold an event stream back into the final node-state map."""
    states: dict[str, str] = {}
    for event in events:
        node_id = event.payload.get("node_id")
        if not node_id:
            continue
        if event.kind == "task_dispatched":
            states[node_id] = "dispatched"
        elif event.kind == "task_progress":
            if states.get(node_id) == "dispatched":
                states[node_id] = "running"
        elif event.kind == "task_completed":
            states[node_id] = "completed"
        elif event.kind == "task_failed":
            if event.payload.get("cancelled_before_dispatch"):
                states[node_id] = "cancelled"
            else:
                states[node_id] = "failed"
        elif event.kind == "task_compensated":
            if event.payload.get("status") == "ok":
                states[node_id] = "compensated"
    return states
