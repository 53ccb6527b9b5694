"""Protocol data types and their canonical JSON encodings.

Every type round-trips through ``to_dict`` / ``from_dict``; ``from_dict``
enforces the type invariants and raises SchemaViolation with a JSON-path
style location. Sets are encoded as sorted lists and absent optionals are
omitted, so ``canonical.dumps(x.to_dict())`` is deterministic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import SchemaViolation

EXPERIMENT_ID_RE = re.compile(r"^exp-[0-9a-f]{12}$")
SERVER_ID_RE = re.compile(r"^srv-[0-9a-f]{12}$")
TOKEN_RE = re.compile(r"^sk-[0-9a-f]{32}$")
SEMVER_RE = re.compile(r"^\d+\.\d+\.\d+([-+].*)?$")
HASH_RE = re.compile(r"^[0-9a-f]{64}$")
GENESIS_HASH = "0" * 64

EXPERIMENT_TYPES = ("dry", "wet", "hybrid")
FIELD_TYPES = ("string", "number", "boolean", "array", "object", "uri")
SIDE_EFFECTS = ("none", "data_write", "physical")
ON_FAILURE = ("abort", "rollback", "pause")
CREATED_FROM = ("planner", "manual", "replay")
DEVICE_STATUSES = ("ready", "busy", "fault")
SCOPES = ("tools.read", "experiments.write", "dry.execute", "wet.execute", "admin")
WARNING_KINDS = ("exclusive_device_conflict", "budget_exceeded",
                 "latency_exceeded", "single_point_of_failure")

EVENT_KINDS = (
    "experiment_registered", "plans_proposed", "plan_selected",
    "workflow_compiled", "task_dispatched", "task_progress",
    "task_completed", "task_failed", "task_compensated", "rollback_skipped",
    "validation_failed", "anomaly_warning", "control_applied",
    "experiment_completed", "experiment_failed", "experiment_archived",
)

TASK_STATES = ("pending", "dispatched", "running", "completed", "failed",
               "cancelled", "compensated")
PHASES = ("registered", "planned", "executing", "paused", "completed",
          "failed", "aborted", "archived")

REF_PREFIX = "$ref:"
CONFIG_PREFIX = "$config:"


# --- small validation helpers ------------------------------------------------

def _need(d: Any, path: str) -> dict:
    if not isinstance(d, dict):
        raise SchemaViolation(path, f"expected object, got {type(d).__name__}")
    return d


def _get(d: dict, key: str, path: str) -> Any:
    if key not in d:
        raise SchemaViolation(f"{path}.{key}", "missing required field")
    return d[key]


def _str(v: Any, path: str) -> str:
    if not isinstance(v, str):
        raise SchemaViolation(path, f"expected string, got {type(v).__name__}")
    return v


def _num(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(path, f"expected number, got {type(v).__name__}")
    return v


def _int(v: Any, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaViolation(path, f"expected integer, got {type(v).__name__}")
    return v


def _bool(v: Any, path: str) -> bool:
    if not isinstance(v, bool):
        raise SchemaViolation(path, f"expected boolean, got {type(v).__name__}")
    return v


def _list(v: Any, path: str) -> list:
    if not isinstance(v, list):
        raise SchemaViolation(path, f"expected array, got {type(v).__name__}")
    return v


def _enum(v: Any, allowed, path: str) -> str:
    _str(v, path)
    if v not in allowed:
        raise SchemaViolation(path, f"{v!r} not one of {list(allowed)}")
    return v


def _str_set(v: Any, path: str) -> set[str]:
    return {_str(x, f"{path}[{i}]") for i, x in enumerate(_list(v, path))}


def parse_ref(value: Any) -> Optional[tuple[str, str]]:
    """Return (node_id, output_name) when value is a ``$ref:`` string."""
    if isinstance(value, str) and value.startswith(REF_PREFIX):
        body = value[len(REF_PREFIX):]
        node, dot, output = body.partition(".")
        if not node or not dot or not output:
            raise SchemaViolation(value, "malformed $ref, want $ref:<node>.<output>")
        return node, output
    return None


def parse_config_ref(value: Any) -> Optional[str]:
    """Return the config key when value is a ``$config:`` string."""
    if isinstance(value, str) and value.startswith(CONFIG_PREFIX):
        key = value[len(CONFIG_PREFIX):]
        if not key:
            raise SchemaViolation(value, "malformed $config reference")
        return key
    return None


# --- violations and warnings -------------------------------------------------

@dataclass(frozen=True)
class Violation:
    """A validation finding. Data, not an exception."""
    code: str
    detail: str
    node_id: str = ""
    param: str = ""

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"code": self.code, "detail": self.detail}
        if self.node_id:
            d["node_id"] = self.node_id
        if self.param:
            d["param"] = self.param
        return d


@dataclass(frozen=True)
class GovernanceWarning:
    kind: str
    detail: str
    node_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in WARNING_KINDS:
            raise SchemaViolation("warning.kind", f"unknown kind {self.kind!r}")
        if self.kind == "exclusive_device_conflict" and not self.node_ids:
            raise SchemaViolation("warning.node_ids", "required for device conflicts")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail,
                "node_ids": sorted(self.node_ids)}

    @classmethod
    def from_dict(cls, d: dict) -> "GovernanceWarning":
        return cls(kind=d["kind"], detail=d["detail"],
                   node_ids=tuple(d.get("node_ids", [])))


# --- experiment context --------------------------------------------------------

@dataclass
class ExperimentContext:
    experiment_id: str
    experiment_type: str
    goal: str
    goal_tags: set[str]
    data_uris: list[str]
    config: dict[str, Any]
    priority: int
    owner: str
    created_at: str
    budget: Optional[dict] = None  # {"cost_units": float}

    def to_dict(self) -> dict:
        d = {
            "experiment_id": self.experiment_id,
            "experiment_type": self.experiment_type,
            "goal": self.goal,
            "goal_tags": sorted(self.goal_tags),
            "data_uris": list(self.data_uris),
            "config": self.config,
            "priority": self.priority,
            "owner": self.owner,
            "created_at": self.created_at,
        }
        if self.budget is not None:
            d["budget"] = self.budget
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str = "context") -> "ExperimentContext":
        _need(d, path)
        eid = _str(_get(d, "experiment_id", path), f"{path}.experiment_id")
        if not EXPERIMENT_ID_RE.match(eid):
            raise SchemaViolation(f"{path}.experiment_id",
                                  "must match exp- + 12 lowercase hex chars")
        priority = _int(_get(d, "priority", path), f"{path}.priority")
        if not 0 <= priority <= 9:
            raise SchemaViolation(f"{path}.priority", "must be in [0, 9]")
        tags = _str_set(d.get("goal_tags", []), f"{path}.goal_tags")
        for t in tags:
            if t != t.lower():
                raise SchemaViolation(f"{path}.goal_tags", f"tag {t!r} not lowercase")
        budget = d.get("budget")
        if budget is not None:
            _need(budget, f"{path}.budget")
            cost = _num(_get(budget, "cost_units", f"{path}.budget"),
                        f"{path}.budget.cost_units")
            if cost < 0:
                raise SchemaViolation(f"{path}.budget.cost_units", "must be >= 0")
        return cls(
            experiment_id=eid,
            experiment_type=_enum(_get(d, "experiment_type", path), EXPERIMENT_TYPES,
                                  f"{path}.experiment_type"),
            goal=_str(_get(d, "goal", path), f"{path}.goal"),
            goal_tags=tags,
            data_uris=[_str(u, f"{path}.data_uris[{i}]")
                       for i, u in enumerate(_list(d.get("data_uris", []),
                                                   f"{path}.data_uris"))],
            config=_need(d.get("config", {}), f"{path}.config"),
            priority=priority,
            owner=_str(_get(d, "owner", path), f"{path}.owner"),
            created_at=_str(_get(d, "created_at", path), f"{path}.created_at"),
            budget=budget,
        )


# --- tool descriptors ------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    """One entry of a params/outputs schema."""
    name: str
    type: str
    required: bool = True
    constraints: Optional[dict] = None  # {"min":, "max":, "enum": [...]}

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "type": self.type,
                             "required": self.required}
        if self.constraints is not None:
            d["constraints"] = self.constraints
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "FieldSpec":
        _need(d, path)
        constraints = d.get("constraints")
        if constraints is not None:
            _need(constraints, f"{path}.constraints")
            for key in constraints:
                if key not in ("min", "max", "enum"):
                    raise SchemaViolation(f"{path}.constraints.{key}",
                                          "unknown constraint")
            for key in ("min", "max"):
                if key in constraints:
                    _num(constraints[key], f"{path}.constraints.{key}")
            if "enum" in constraints:
                _list(constraints["enum"], f"{path}.constraints.enum")
        return cls(
            name=_str(_get(d, "name", path), f"{path}.name"),
            type=_enum(_get(d, "type", path), FIELD_TYPES, f"{path}.type"),
            required=_bool(d.get("required", True), f"{path}.required"),
            constraints=constraints,
        )


@dataclass(frozen=True)
class ToolDescriptor:
    tool_id: str
    capability_class: str
    version: str
    description: str
    params_schema: tuple[FieldSpec, ...]
    outputs_schema: tuple[FieldSpec, ...]
    side_effect: str = "none"
    reversible: bool = False
    compensation: Optional[dict] = None  # {"tool_id":, "param_map": {out->param}}
    estimates: dict = field(default_factory=lambda: {"latency_ms": 0.0,
                                                     "cost_units": 0.0, "risk": 0.0})
    security: dict = field(default_factory=lambda: {"required_scopes": []})

    @property
    def required_scopes(self) -> set[str]:
        return set(self.security.get("required_scopes", []))

    def output_spec(self, name: str) -> Optional[FieldSpec]:
        for spec in self.outputs_schema:
            if spec.name == name:
                return spec
        return None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "tool_id": self.tool_id,
            "capability_class": self.capability_class,
            "version": self.version,
            "description": self.description,
            "params_schema": [p.to_dict() for p in self.params_schema],
            "outputs_schema": [o.to_dict() for o in self.outputs_schema],
            "side_effect": self.side_effect,
            "reversible": self.reversible,
            "estimates": self.estimates,
            "security": {"required_scopes":
                         sorted(self.security.get("required_scopes", []))},
        }
        if self.compensation is not None:
            d["compensation"] = self.compensation
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str = "tool") -> "ToolDescriptor":
        _need(d, path)
        tool_id = _str(_get(d, "tool_id", path), f"{path}.tool_id")
        path = f"{path}[{tool_id}]"
        capability = _str(_get(d, "capability_class", path),
                          f"{path}.capability_class")
        version = _str(_get(d, "version", path), f"{path}.version")
        if not SEMVER_RE.match(version):
            raise SchemaViolation(f"{path}.version", f"{version!r} is not semver")
        side_effect = _enum(d.get("side_effect", "none"), SIDE_EFFECTS,
                            f"{path}.side_effect")
        if side_effect == "physical" and not capability.startswith("device."):
            raise SchemaViolation(f"{path}.side_effect",
                                  "physical tools must be in a device.* class")
        reversible = _bool(d.get("reversible", False), f"{path}.reversible")
        compensation = d.get("compensation")
        if reversible and compensation is None:
            raise SchemaViolation(f"{path}.compensation",
                                  "reversible tools must declare a compensation")
        if compensation is not None:
            if not reversible:
                raise SchemaViolation(f"{path}.reversible",
                                      "compensation declared but reversible is false")
            _need(compensation, f"{path}.compensation")
            _str(_get(compensation, "tool_id", f"{path}.compensation"),
                 f"{path}.compensation.tool_id")
            _need(_get(compensation, "param_map", f"{path}.compensation"),
                  f"{path}.compensation.param_map")
        estimates = _need(d.get("estimates", {}), f"{path}.estimates")
        est = {
            "latency_ms": _num(estimates.get("latency_ms", 0.0),
                               f"{path}.estimates.latency_ms"),
            "cost_units": _num(estimates.get("cost_units", 0.0),
                               f"{path}.estimates.cost_units"),
            "risk": _num(estimates.get("risk", 0.0), f"{path}.estimates.risk"),
        }
        if est["latency_ms"] < 0 or est["cost_units"] < 0:
            raise SchemaViolation(f"{path}.estimates", "latency/cost must be >= 0")
        if not 0.0 <= est["risk"] <= 1.0:
            raise SchemaViolation(f"{path}.estimates.risk", "must be in [0, 1]")
        security = _need(d.get("security", {}), f"{path}.security")
        scopes = _str_set(security.get("required_scopes", []),
                          f"{path}.security.required_scopes")
        for s in scopes:
            if s not in SCOPES:
                raise SchemaViolation(f"{path}.security.required_scopes",
                                      f"unknown scope {s!r}")
        return cls(
            tool_id=tool_id,
            capability_class=capability,
            version=version,
            description=_str(d.get("description", ""), f"{path}.description"),
            params_schema=tuple(FieldSpec.from_dict(p, f"{path}.params_schema[{i}]")
                                for i, p in enumerate(_list(d.get("params_schema", []),
                                                            f"{path}.params_schema"))),
            outputs_schema=tuple(FieldSpec.from_dict(o, f"{path}.outputs_schema[{i}]")
                                 for i, o in enumerate(_list(d.get("outputs_schema", []),
                                                             f"{path}.outputs_schema"))),
            side_effect=side_effect,
            reversible=reversible,
            compensation=compensation,
            estimates=est,
            security={"required_scopes": sorted(scopes)},
        )


# --- workflow specs -----------------------------------------------------------------

@dataclass
class TaskNode:
    node_id: str
    tool_id: str
    capability_class: str
    params: dict[str, Any]
    expected_outputs: tuple[FieldSpec, ...] = ()
    depends_on: tuple[str, ...] = ()
    max_retries: Optional[int] = None  # None: executor policy default applies
    on_failure: str = "abort"

    def output_spec(self, name: str) -> Optional[FieldSpec]:
        for spec in self.expected_outputs:
            if spec.name == name:
                return spec
        return None

    def refs(self):
        """Yield (param_name, node_id, output_name) for every $ref param."""
        for name, value in self.params.items():
            ref = parse_ref(value)
            if ref is not None:
                yield name, ref[0], ref[1]

    def to_dict(self) -> dict:
        d = {
            "node_id": self.node_id,
            "tool_id": self.tool_id,
            "capability_class": self.capability_class,
            "params": self.params,
            "expected_outputs": [o.to_dict() for o in self.expected_outputs],
            "depends_on": list(self.depends_on),
            "on_failure": self.on_failure,
        }
        if self.max_retries is not None:
            d["max_retries"] = self.max_retries
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "TaskNode":
        _need(d, path)
        node_id = _str(_get(d, "node_id", path), f"{path}.node_id")
        path = f"{path}[{node_id}]"
        retries = d.get("max_retries")
        if retries is not None:
            retries = _int(retries, f"{path}.max_retries")
            if retries < 0:
                raise SchemaViolation(f"{path}.max_retries", "must be >= 0")
        params = _need(d.get("params", {}), f"{path}.params")
        for value in params.values():
            parse_ref(value)  # raises on malformed $ref syntax
            parse_config_ref(value)
        return cls(
            node_id=node_id,
            tool_id=_str(_get(d, "tool_id", path), f"{path}.tool_id"),
            capability_class=_str(_get(d, "capability_class", path),
                                  f"{path}.capability_class"),
            params=params,
            expected_outputs=tuple(
                FieldSpec.from_dict(o, f"{path}.expected_outputs[{i}]")
                for i, o in enumerate(_list(d.get("expected_outputs", []),
                                            f"{path}.expected_outputs"))),
            depends_on=tuple(_str(x, f"{path}.depends_on[{i}]")
                             for i, x in enumerate(_list(d.get("depends_on", []),
                                                         f"{path}.depends_on"))),
            max_retries=retries,
            on_failure=_enum(d.get("on_failure", "abort"), ON_FAILURE,
                             f"{path}.on_failure"),
        )


@dataclass
class WorkflowSpec:
    spec_id: str
    experiment_id: str
    version: int
    nodes: list[TaskNode]
    created_from: str = "manual"

    def node(self, node_id: str) -> TaskNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def node_ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]

    def to_dict(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "experiment_id": self.experiment_id,
            "version": self.version,
            "nodes": [n.to_dict() for n in self.nodes],
            "created_from": self.created_from,
        }

    @classmethod
    def from_dict(cls, d: dict, path: str = "spec") -> "WorkflowSpec":
        _need(d, path)
        version = _int(_get(d, "version", path), f"{path}.version")
        if version < 1:
            raise SchemaViolation(f"{path}.version", "must be >= 1")
        nodes = [TaskNode.from_dict(n, f"{path}.nodes[{i}]")
                 for i, n in enumerate(_list(_get(d, "nodes", path),
                                             f"{path}.nodes"))]
        return cls(
            spec_id=_str(_get(d, "spec_id", path), f"{path}.spec_id"),
            experiment_id=_str(_get(d, "experiment_id", path),
                               f"{path}.experiment_id"),
            version=version,
            nodes=nodes,
            created_from=_enum(d.get("created_from", "manual"), CREATED_FROM,
                               f"{path}.created_from"),
        )


# --- plans -----------------------------------------------------------------------------

DEFAULT_WEIGHTS = {"w_l": 1.0, "w_c": 1.0, "w_r": 1.0}


@dataclass(frozen=True)
class PlanScore:
    latency_ms: float
    cost_units: float
    risk: float
    total: float
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def to_dict(self) -> dict:
        return {"latency_ms": self.latency_ms, "cost_units": self.cost_units,
                "risk": self.risk, "total": self.total, "weights": self.weights}


@dataclass
class PlanCandidate:
    plan_id: str
    spec: WorkflowSpec
    score: PlanScore
    rationale: str
    warnings: list[GovernanceWarning] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "spec": self.spec.to_dict(),
            "score": self.score.to_dict(),
            "rationale": self.rationale,
            "warnings": [w.to_dict() for w in self.warnings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlanCandidate":
        s = d["score"]
        return cls(
            plan_id=d["plan_id"],
            spec=WorkflowSpec.from_dict(d["spec"]),
            score=PlanScore(latency_ms=s["latency_ms"], cost_units=s["cost_units"],
                            risk=s["risk"], total=s["total"],
                            weights=s.get("weights", dict(DEFAULT_WEIGHTS))),
            rationale=d.get("rationale", ""),
            warnings=[GovernanceWarning.from_dict(w) for w in d.get("warnings", [])],
        )


# --- events ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    seq: int
    timestamp: str
    experiment_id: str
    kind: str
    actor: str
    payload: dict
    prev_hash: str
    hash: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "experiment_id": self.experiment_id,
            "kind": self.kind,
            "actor": self.actor,
            "payload": self.payload,
            "prev_hash": self.prev_hash,
            "hash": self.hash,
        }

    @classmethod
    def from_dict(cls, d: dict, path: str = "event") -> "Event":
        _need(d, path)
        seq = _int(_get(d, "seq", path), f"{path}.seq")
        if seq < 1:
            raise SchemaViolation(f"{path}.seq", "must be >= 1")
        kind = _enum(_get(d, "kind", path), EVENT_KINDS, f"{path}.kind")
        prev_hash = _str(_get(d, "prev_hash", path), f"{path}.prev_hash")
        ev_hash = _str(_get(d, "hash", path), f"{path}.hash")
        for name, value in (("prev_hash", prev_hash), ("hash", ev_hash)):
            if not HASH_RE.match(value):
                raise SchemaViolation(f"{path}.{name}", "must be 64 hex chars")
        return cls(
            seq=seq,
            timestamp=_str(_get(d, "timestamp", path), f"{path}.timestamp"),
            experiment_id=_str(_get(d, "experiment_id", path),
                               f"{path}.experiment_id"),
            kind=kind,
            actor=_str(_get(d, "actor", path), f"{path}.actor"),
            payload=_need(_get(d, "payload", path), f"{path}.payload"),
            prev_hash=prev_hash,
            hash=ev_hash,
        )


# --- server health and manifests ----------------------------------------------------------

@dataclass
class HealthReport:
    server_id: str
    device_status: dict[str, str]   # tool_id -> ready|busy|fault
    model_readiness: dict[str, bool]
    resource_utilization: dict      # {"cpu_pct":, "mem_pct":}
    reported_at: str

    def to_dict(self) -> dict:
        return {
            "server_id": self.server_id,
            "device_status": self.device_status,
            "model_readiness": self.model_readiness,
            "resource_utilization": self.resource_utilization,
            "reported_at": self.reported_at,
        }

    @classmethod
    def from_dict(cls, d: dict, path: str = "report") -> "HealthReport":
        _need(d, path)
        status = _need(d.get("device_status", {}), f"{path}.device_status")
        for tool_id, s in status.items():
            _enum(s, DEVICE_STATUSES, f"{path}.device_status.{tool_id}")
        readiness = _need(d.get("model_readiness", {}), f"{path}.model_readiness")
        for tool_id, r in readiness.items():
            _bool(r, f"{path}.model_readiness.{tool_id}")
        util = _need(d.get("resource_utilization", {}),
                     f"{path}.resource_utilization")
        for key in ("cpu_pct", "mem_pct"):
            pct = _num(util.get(key, 0.0), f"{path}.resource_utilization.{key}")
            if not 0.0 <= pct <= 100.0:
                raise SchemaViolation(f"{path}.resource_utilization.{key}",
                                      "must be in [0, 100]")
        return cls(
            server_id=_str(_get(d, "server_id", path), f"{path}.server_id"),
            device_status=status,
            model_readiness=readiness,
            resource_utilization={"cpu_pct": util.get("cpu_pct", 0.0),
                                  "mem_pct": util.get("mem_pct", 0.0)},
            reported_at=_str(d.get("reported_at", ""), f"{path}.reported_at"),
        )


@dataclass
class ServerManifest:
    name: str
    callback_url: str
    tools: list[ToolDescriptor]
    labels: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "callback_url": self.callback_url,
            "tools": [t.to_dict() for t in self.tools],
            "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, d: dict, path: str = "manifest") -> "ServerManifest":
        _need(d, path)
        url = _str(_get(d, "callback_url", path), f"{path}.callback_url")
        if "://" not in url:
            raise SchemaViolation(f"{path}.callback_url", "must be an absolute URI")
        tools = [ToolDescriptor.from_dict(t, f"{path}.tools[{i}]")
                 for i, t in enumerate(_list(_get(d, "tools", path),
                                             f"{path}.tools"))]
        seen: set[str] = set()
        for t in tools:
            if t.tool_id in seen:
                raise SchemaViolation(f"{path}.tools", f"duplicate tool_id {t.tool_id!r}")
            seen.add(t.tool_id)
        labels = _need(d.get("labels", {}), f"{path}.labels")
        for k, v in labels.items():
            _str(v, f"{path}.labels.{k}")
        return cls(
            name=_str(_get(d, "name", path), f"{path}.name"),
            callback_url=url,
            tools=tools,
            labels=labels,
        )
