"""Deterministic workflow planning over a template library.

Goal tags select templates, templates are instantiated against a registry
snapshot (placeholder ``@<capability_class>`` node bindings resolved by
lowest latency, then tool id), candidates are scored on critical-path
latency, summed cost, and composed risk, then ranked ascending by weighted
total. A pluggable planner could synthesize task graphs some other way;
this one trades cleverness for reproducibility.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .. import canonical
from ..errors import CycleDetected, Infeasible, NoTemplateMatched, SchemaViolation
from ..graph import find_cycle, dependency_map, topological_layers
from ..types import (DEFAULT_WEIGHTS, ExperimentContext, GovernanceWarning,
                     PlanCandidate, PlanScore, TaskNode, ToolDescriptor,
                     WorkflowSpec, parse_config_ref)
from ..validation import validate_workflow
from .registry import RegistryView

PLACEHOLDER_PREFIX = "@"
DEFAULT_K = 3


@dataclass
class WorkflowTemplate:
    template_id: str
    goal_tags: set[str]
    nodes: list[TaskNode]  # tool_id may be "@<capability_class>"
    description: str = ""

    def to_dict(self) -> dict:
        return {"template_id": self.template_id,
                "goal_tags": sorted(self.goal_tags),
                "nodes": [n.to_dict() for n in self.nodes],
                "description": self.description}

    @classmethod
    def from_dict(cls, d: dict, path: str = "template") -> "WorkflowTemplate":
        nodes = [TaskNode.from_dict(n, f"{path}.nodes[{i}]")
                 for i, n in enumerate(d.get("nodes", []))]
        cycle = find_cycle({n.node_id: n.depends_on for n in nodes})
        if cycle:
            raise CycleDetected(cycle)
        for n in nodes:
            if n.tool_id.startswith(PLACEHOLDER_PREFIX):
                cls_name = n.tool_id[1:]
                if not cls_name or " " in cls_name:
                    raise SchemaViolation(f"{path}.nodes[{n.node_id}].tool_id",
                                          f"bad placeholder {n.tool_id!r}")
        return cls(template_id=d["template_id"],
                   goal_tags=set(d.get("goal_tags", [])),
                   nodes=nodes,
                   description=d.get("description", ""))


@dataclass
class GoalSpec:
    experiment_id: str
    goal_tags: set[str]
    constraints: dict = field(default_factory=dict)
    k: int = DEFAULT_K

    def __post_init__(self):
        if self.k < 1:
            raise SchemaViolation("goal.k", "must be >= 1")

    @property
    def exclude_tools(self) -> set[str]:
        return set(self.constraints.get("exclude_tools", []))


def match_templates(goal: GoalSpec,
                    library: Iterable[WorkflowTemplate]) -> list[WorkflowTemplate]:
    """Templates sharing at least one goal tag, best overlap first."""
    scored = []
    for template in library:
        overlap = len(template.goal_tags & goal.goal_tags)
        if overlap >= 1:
            scored.append((-overlap, template.template_id, template))
    if not scored:
        raise NoTemplateMatched(f"no template matches tags {sorted(goal.goal_tags)}")
    scored.sort(key=lambda t: (t[0], t[1]))
    return [t for _, _, t in scored]


def _resolve_config_params(params: dict, config: dict, node_id: str) -> dict:
    resolved = {}
    for name, value in params.items():
        key = parse_config_ref(value)
        if key is not None:
            if key not in config:
                raise SchemaViolation(f"{node_id}.params.{name}",
                                      f"experiment config has no key {key!r}")
            resolved[name] = config[key]
        else:
            resolved[name] = value
    return resolved


def instantiate(template: WorkflowTemplate, view: RegistryView,
                goal: GoalSpec, context: ExperimentContext,
                spec_id: str, version: int = 1) -> WorkflowSpec:
    """Bind placeholders and ``$config:`` params into an executable spec.

    Placeholder classes bind to the available tool with the lowest latency
    estimate (tool id breaks ties); pinned tool ids must be available too.
    Raises Infeasible naming the unbindable capability class.
    """
    excluded = goal.exclude_tools
    nodes = []
    for skeleton in template.nodes:
        if skeleton.tool_id.startswith(PLACEHOLDER_PREFIX):
            cls_name = skeleton.tool_id[1:]
            choices = [b for b in view.by_class(cls_name)
                       if b.descriptor.tool_id not in excluded]
            if not choices:
                raise Infeasible(cls_name)
            choices.sort(key=lambda b: (b.descriptor.estimates["latency_ms"],
                                        b.descriptor.tool_id))
            tool = choices[0].descriptor
        else:
            binding = view.get(skeleton.tool_id)
            if binding is None or skeleton.tool_id in excluded:
                raise Infeasible(skeleton.capability_class or skeleton.tool_id)
            tool = binding.descriptor
        nodes.append(TaskNode(
            node_id=skeleton.node_id,
            tool_id=tool.tool_id,
            capability_class=tool.capability_class,
            params=_resolve_config_params(skeleton.params, context.config,
                                          skeleton.node_id),
            expected_outputs=skeleton.expected_outputs or tool.outputs_schema,
            depends_on=skeleton.depends_on,
            max_retries=skeleton.max_retries,
            on_failure=skeleton.on_failure,
        ))
    return WorkflowSpec(spec_id=spec_id, experiment_id=context.experiment_id,
                        version=version, nodes=nodes, created_from="planner")


def score_plan(spec: WorkflowSpec,
               descriptors: dict[str, ToolDescriptor],
               weights: dict | None = None) -> PlanScore:
    """Critical-path latency under full parallelism, summed cost, composed risk."""
    weights = dict(weights or DEFAULT_WEIGHTS)
    layers = topological_layers(spec)
    latency = 0.0
    cost = 0.0
    survival = 1.0
    by_node = {n.node_id: n for n in spec.nodes}
    for layer in layers:
        latency += max(descriptors[by_node[n].tool_id].estimates["latency_ms"]
                       for n in layer)
    for node in spec.nodes:
        est = descriptors[node.tool_id].estimates
        cost += est["cost_units"]
        survival *= 1.0 - est["risk"]
    risk = 1.0 - survival
    total = (weights["w_l"] * latency + weights["w_c"] * cost
             + weights["w_r"] * risk * 1000.0)
    return PlanScore(latency_ms=latency, cost_units=cost, risk=risk,
                     total=total, weights=weights)


def rank_plans(candidates: list[PlanCandidate],
               k: int = DEFAULT_K) -> list[PlanCandidate]:
    """Ascending by total score, plan_id breaking ties; at most k survive."""
    ranked = sorted(candidates, key=lambda c: (c.score.total, c.plan_id))
    return ranked[:max(k, 0)]


def check_conflicts(spec: WorkflowSpec,
                    active_specs: Iterable[tuple[WorkflowSpec, set[str]]],
                    view: RegistryView) -> list[GovernanceWarning]:
    """Device-exclusivity conflicts and single-server concentration.

    ``active_specs`` pairs each concurrently executing spec with the set of
    its node ids that have not completed yet.
    """
    warnings: list[GovernanceWarning] = []
    device_nodes: dict[str, list[str]] = {}
    for node in spec.nodes:
        binding = view.get(node.tool_id)
        if binding and binding.descriptor.capability_class.startswith("device."):
            device_nodes.setdefault(node.tool_id, []).append(node.node_id)
    for other, remaining in active_specs:
        for other_node in other.nodes:
            if other_node.node_id not in remaining:
                continue
            if other_node.tool_id in device_nodes:
                mine = device_nodes[other_node.tool_id]
                warnings.append(GovernanceWarning(
                    kind="exclusive_device_conflict",
                    detail=f"device {other_node.tool_id!r} also scheduled by "
                           f"experiment {other.experiment_id}",
                    node_ids=tuple(sorted(set(mine) | {other_node.node_id}))))
    server_load: dict[str, list[str]] = {}
    for node in spec.nodes:
        binding = view.get(node.tool_id)
        if binding:
            server_load.setdefault(binding.server_id, []).append(node.node_id)
    for server_id, nodes in sorted(server_load.items()):
        if len(spec.nodes) > 1 and len(nodes) * 2 > len(spec.nodes):
            warnings.append(GovernanceWarning(
                kind="single_point_of_failure",
                detail=f"server {server_id} hosts {len(nodes)} of "
                       f"{len(spec.nodes)} nodes",
                node_ids=tuple(sorted(nodes))))
    return warnings


def forecast_budget(score: PlanScore, budget: Optional[dict],
                    constraints: dict | None = None) -> list[GovernanceWarning]:
    warnings = []
    limit = (budget or {}).get("cost_units")
    if limit is not None and score.cost_units > limit:
        warnings.append(GovernanceWarning(
            kind="budget_exceeded",
            detail=f"plan cost {score.cost_units} exceeds budget {limit}"))
    max_latency = (constraints or {}).get("max_latency_ms")
    if max_latency is not None and score.latency_ms > max_latency:
        warnings.append(GovernanceWarning(
            kind="latency_exceeded",
            detail=f"plan latency {score.latency_ms} ms exceeds "
                   f"constraint {max_latency} ms"))
    max_cost = (constraints or {}).get("max_cost_units")
    if max_cost is not None and score.cost_units > max_cost:
        warnings.append(GovernanceWarning(
            kind="budget_exceeded",
            detail=f"plan cost {score.cost_units} exceeds "
                   f"constraint {max_cost}"))
    return warnings


def plan_id_for(spec: WorkflowSpec) -> str:
    """Content hash of the plan: stable across re-planning runs.

    spec_id and version are minting artifacts, not plan identity, so they
    are excluded; two calls that bind the same nodes for the same
    experiment produce the same plan id.
    """
    body = {k: v for k, v in spec.to_dict().items()
            if k not in ("spec_id", "version")}
    digest = hashlib.sha256(canonical.dumps_bytes(body)).hexdigest()
    return f"pln-{digest[:12]}"


class Planner:
    """Template library plus the propose pipeline."""

    def __init__(self, library: list[WorkflowTemplate] | None = None):
        self._library: list[WorkflowTemplate] = list(library or [])

    @property
    def library(self) -> list[WorkflowTemplate]:
        return list(self._library)

    def replace_library(self, templates: list[WorkflowTemplate]) -> None:
        self._library = list(templates)

    def propose(self, goal: GoalSpec, context: ExperimentContext,
                view: RegistryView,
                active_specs: Iterable[tuple[WorkflowSpec, set[str]]] = (),
                spec_id_source=None, version: int = 1) -> list[PlanCandidate]:
        """Top-k scored candidates; infeasible templates are skipped."""
        matched = match_templates(goal, self._library)
        descriptors = {b.descriptor.tool_id: b.descriptor for b in view.bindings}
        active = list(active_specs)
        candidates = []
        for template in matched:
            spec_id = spec_id_source() if spec_id_source else \
                f"wf-{template.template_id[:12]}"
            try:
                spec = instantiate(template, view, goal, context, spec_id,
                                   version=version)
            except Infeasible:
                continue
            violations = validate_workflow(spec, descriptors.values())
            if violations:  # snapshot moved under us; drop the candidate
                continue
            score = score_plan(spec, descriptors)
            warnings = check_conflicts(spec, active, view)
            warnings += forecast_budget(score, context.budget, goal.constraints)
            candidates.append(PlanCandidate(
                plan_id=plan_id_for(spec), spec=spec, score=score,
                rationale=f"template {template.template_id}: matched tags "
                          f"{sorted(template.goal_tags & goal.goal_tags)}, "
                          f"{len(spec.nodes)} steps",
                warnings=warnings))
        return rank_plans(candidates, goal.k)
