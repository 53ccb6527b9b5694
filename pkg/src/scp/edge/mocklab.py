"""Deterministic mock laboratory built from a JSON fixture file.

Every tool's behavior is data: a lookup table keyed by one input param
(optionally applied per item of a list param), a sandboxed expression over
the params, or a canned wet-lab script step. Latency and failure draws are
derived from ``seed + task_id`` alone, so two runs with the same seed
produce byte-identical outcome projections.

Fixture file shape (canonical JSON)::

    {
      "name": "mock-lab",
      "tools": [
        {
          "descriptor": { ...ToolDescriptor... },
          "latency_model": {"kind": "fixed", "ms": 20}
                        or {"kind": "uniform", "low_ms": 10, "high_ms": 40},
          "failure_rate": 0.0,
          "seed_sensitivity": true,
          "behavior": {"kind": "table", "key_param": "...", "rows": {...},
                       "per_item": {"collect_as": "...", "include_key_as": "..."}}
                   or {"kind": "expression", "outputs": {"name": "<expr>"}}
                   or {"kind": "script_step", "op": "...", "outputs": {...}}
        }
      ]
    }
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .. import canonical
from ..errors import FixtureError, SchemaViolation
from ..types import ServerManifest, ToolDescriptor
from .exprs import ExpressionError, safe_eval

BEHAVIOR_KINDS = ("table", "expression", "script_step")
LATENCY_KINDS = ("fixed", "uniform")


@dataclass(frozen=True)
class MockToolFixture:
    descriptor: ToolDescriptor
    latency_model: dict
    failure_rate: float
    behavior: dict
    seed_sensitivity: bool = True

    @property
    def tool_id(self) -> str:
        return self.descriptor.tool_id


@dataclass(frozen=True)
class MockOutcome:
    latency_ms: float
    outputs: Optional[dict] = None
    error: Optional[str] = None


def _validate_tool_entry(entry: dict, path: str) -> MockToolFixture:
    try:
        descriptor = ToolDescriptor.from_dict(entry["descriptor"],
                                              f"{path}.descriptor")
    except (KeyError, SchemaViolation) as exc:
        raise FixtureError(path, f"bad descriptor: {exc}") from exc
    latency = entry.get("latency_model", {"kind": "fixed", "ms": 10})
    if latency.get("kind") not in LATENCY_KINDS:
        raise FixtureError(path, f"unknown latency kind {latency.get('kind')!r}")
    if latency["kind"] == "uniform" and not (
            0 <= latency.get("low_ms", -1) <= latency.get("high_ms", -1)):
        raise FixtureError(path, "uniform latency needs 0 <= low_ms <= high_ms")
    failure_rate = entry.get("failure_rate", 0.0)
    if not 0.0 <= failure_rate <= 1.0:
        raise FixtureError(path, "failure_rate must be in [0, 1]")
    behavior = entry.get("behavior", {})
    kind = behavior.get("kind")
    if kind not in BEHAVIOR_KINDS:
        raise FixtureError(path, f"unknown behavior kind {kind!r}")
    if kind == "table" and "key_param" not in behavior:
        raise FixtureError(path, "table behavior needs key_param")
    if kind == "expression" and not isinstance(behavior.get("outputs"), dict):
        raise FixtureError(path, "expression behavior needs an outputs map")
    if kind == "script_step" and not isinstance(behavior.get("outputs"), dict):
        raise FixtureError(path, "script_step behavior needs literal outputs")
    return MockToolFixture(descriptor=descriptor, latency_model=latency,
                           failure_rate=failure_rate, behavior=behavior,
                           seed_sensitivity=entry.get("seed_sensitivity", True))


class MockLab:
    """Seeded, deterministic simulated tool set."""

    def __init__(self, name: str, fixtures: list[MockToolFixture], seed: int):
        self.name = name
        self.seed = seed
        self._tools = {f.tool_id: f for f in fixtures}
        if len(self._tools) != len(fixtures):
            raise FixtureError(name, "duplicate tool_id in fixture")

    def descriptors(self) -> list[ToolDescriptor]:
        return [f.descriptor for _, f in sorted(self._tools.items())]

    def fixture(self, tool_id: str) -> MockToolFixture:
        return self._tools[tool_id]

    def manifest(self, callback_url: str, labels: dict | None = None) -> ServerManifest:
        return ServerManifest(name=self.name, callback_url=callback_url,
                              tools=self.descriptors(),
                              labels=labels or {"kind": "mock-lab"})

    def _rng(self, task_id: str, tool_id: str) -> random.Random:
        return random.Random(f"{self.seed}|{task_id}|{tool_id}")

    def execute(self, tool_id: str, params: dict, task_id: str) -> MockOutcome:
        fixture = self._tools.get(tool_id)
        if fixture is None:
            return MockOutcome(latency_ms=0.0, error=f"unknown_tool:{tool_id}")
        rng = self._rng(task_id, tool_id)
        failed = rng.random() < fixture.failure_rate
        latency = self._draw_latency(fixture, rng)
        if failed:
            return MockOutcome(latency_ms=latency,
                               error=f"injected_failure:{tool_id}")
        try:
            outputs = self._behave(fixture, params)
        except FixtureError as exc:
            return MockOutcome(latency_ms=latency, error=exc.message)
        return MockOutcome(latency_ms=latency, outputs=outputs)

    def _draw_latency(self, fixture: MockToolFixture,
                      rng: random.Random) -> float:
        model = fixture.latency_model
        if model["kind"] == "fixed":
            return float(model.get("ms", 10))
        low, high = model["low_ms"], model["high_ms"]
        if not fixture.seed_sensitivity:
            return (low + high) / 2.0
        return rng.uniform(low, high)

    def _behave(self, fixture: MockToolFixture, params: dict) -> dict:
        behavior = fixture.behavior
        kind = behavior["kind"]
        if kind == "script_step":
            outputs = dict(behavior["outputs"])
            outputs.setdefault("op", behavior.get("op", fixture.tool_id))
            return outputs
        if kind == "expression":
            outputs = {}
            for name, expr in behavior["outputs"].items():
                try:
                    outputs[name] = safe_eval(expr, dict(params))
                except ExpressionError as exc:
                    raise FixtureError(fixture.tool_id,
                                       f"expression_error:{name}:{exc}")
            return outputs
        # table
        key_param = behavior["key_param"]
        if key_param not in params:
            raise FixtureError(fixture.tool_id, f"missing_param:{key_param}")
        rows = behavior.get("rows", {})
        value = params[key_param]
        per_item = behavior.get("per_item")
        if per_item:
            if not isinstance(value, list):
                raise FixtureError(fixture.tool_id,
                                   f"param {key_param} must be an array")
            collected = []
            plucked: dict[str, list] = {name: []
                                        for name in per_item.get("pluck", {})}
            for item in value:
                key = item if isinstance(item, str) else canonical.dumps(item)
                if key not in rows:
                    raise FixtureError(fixture.tool_id, f"no_table_entry:{key}")
                row = dict(rows[key])
                for name, source in per_item.get("pluck", {}).items():
                    plucked[name].append(row.get(source))
                include_as = per_item.get("include_key_as")
                if include_as:
                    row[include_as] = item
                collected.append(row)
            outputs = {per_item["collect_as"]: collected}
            outputs.update(plucked)
            return outputs
        key = value if isinstance(value, str) else canonical.dumps(value)
        if key not in rows:
            raise FixtureError(fixture.tool_id, f"no_table_entry:{key}")
        return dict(rows[key])


def parse_fixtures(data: dict, source: str = "<fixture>") -> tuple[str, list[MockToolFixture]]:
    if not isinstance(data, dict) or not isinstance(data.get("tools"), list):
        raise FixtureError(source, "fixture must be an object with a tools array")
    fixtures = [_validate_tool_entry(entry, f"{source}.tools[{i}]")
                for i, entry in enumerate(data["tools"])]
    return data.get("name", "mock-lab"), fixtures


def load_mock_lab(path: str | Path, seed: int) -> MockLab:
    """Build a MockLab from a fixture file; FixtureError on any defect."""
    path = Path(path)
    try:
        data = canonical.loads(path.read_bytes())
    except OSError as exc:
        raise FixtureError(str(path), f"unreadable: {exc}") from exc
    except Exception as exc:
        raise FixtureError(str(path), f"bad JSON: {exc}") from exc
    name, fixtures = parse_fixtures(data, str(path))
    return MockLab(name, fixtures, seed)
