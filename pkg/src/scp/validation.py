"""Workflow parsing, canonical serialization, and validation.

Parsing enforces structural invariants (shape, duplicate node ids, unknown
dependencies) but not graph or registry properties; those belong to
``validate_workflow`` so a cyclic or unroutable spec can still be inspected.
"""

from __future__ import annotations

from typing import Any, Iterable, Optional

from . import canonical
from .errors import DuplicateNodeId, UnknownDependency
from .graph import find_cycle, dependency_map
from .types import (FieldSpec, TaskNode, ToolDescriptor, Violation,
                    WorkflowSpec, parse_config_ref, parse_ref)


def parse_workflow_spec(text: str | bytes) -> WorkflowSpec:
    """Parse canonical (or any) JSON text into a validated WorkflowSpec."""
    return parse_workflow_dict(canonical.loads(text))


def parse_workflow_dict(data: dict) -> WorkflowSpec:
    """Structural validation of an already-parsed spec object."""
    spec = WorkflowSpec.from_dict(data)
    seen: set[str] = set()
    for node in spec.nodes:
        if node.node_id in seen:
            raise DuplicateNodeId(f"duplicate node_id {node.node_id!r}",
                                  node_id=node.node_id)
        seen.add(node.node_id)
    for node in spec.nodes:
        for dep in node.depends_on:
            if dep not in seen:
                raise UnknownDependency(
                    f"node {node.node_id!r} depends on unknown node {dep!r}",
                    node_id=node.node_id, dep=dep)
    return spec


def canonicalize(spec: WorkflowSpec) -> str:
    """Deterministic serialization; canonicalize∘parse∘canonicalize = canonicalize."""
    return canonical.dumps(spec.to_dict())


JSON_TYPE_CHECKS = {
    "string": lambda v: isinstance(v, str),
    "uri": lambda v: isinstance(v, str) and ":" in v,
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "array": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}


def validate_output(value: Any, schema: FieldSpec) -> Optional[Violation]:
    """Check one value against one outputs-schema entry. None means ok."""
    if not JSON_TYPE_CHECKS[schema.type](value):
        return Violation("TypeMismatch",
                         f"expected {schema.type}, got {type(value).__name__}",
                         param=schema.name)
    c = schema.constraints or {}
    if "min" in c and isinstance(value, (int, float)) and value < c["min"]:
        return Violation("ConstraintViolated", f"{value} < min {c['min']}",
                         param=schema.name)
    if "max" in c and isinstance(value, (int, float)) and value > c["max"]:
        return Violation("ConstraintViolated", f"{value} > max {c['max']}",
                         param=schema.name)
    if "enum" in c and value not in c["enum"]:
        return Violation("ConstraintViolated", f"{value!r} not in enum {c['enum']}",
                         param=schema.name)
    return None


def _validate_node_params(node: TaskNode, descriptor: ToolDescriptor,
                          by_id: dict[str, TaskNode]) -> Iterable[Violation]:
    declared = {p.name: p for p in descriptor.params_schema}
    for p in descriptor.params_schema:
        if p.required and p.name not in node.params:
            yield Violation("MissingParam", f"required param {p.name!r} absent",
                            node_id=node.node_id, param=p.name)
    for name, value in node.params.items():
        schema = declared.get(name)
        ref = parse_ref(value)
        if ref is not None:
            dep_id, output = ref
            if dep_id not in node.depends_on:
                yield Violation("RefOutsideDependencies",
                                f"$ref target {dep_id!r} not in depends_on",
                                node_id=node.node_id, param=name)
                continue
            upstream = by_id.get(dep_id)
            out_spec = upstream.output_spec(output) if upstream else None
            if out_spec is None:
                yield Violation("UnknownRefOutput",
                                f"{dep_id!r} declares no output {output!r}",
                                node_id=node.node_id, param=name)
            elif schema is not None and out_spec.type != schema.type:
                yield Violation("TypeMismatch",
                                f"$ref output is {out_spec.type}, "
                                f"param wants {schema.type}",
                                node_id=node.node_id, param=name)
            continue
        if parse_config_ref(value) is not None:
            continue  # resolved against experiment config at instantiation
        if schema is None:
            continue  # extra literal params are tolerated
        violation = validate_output(value, schema)
        if violation:
            yield Violation(violation.code, violation.detail,
                            node_id=node.node_id, param=name)


def validate_workflow(spec: WorkflowSpec,
                      tools: Iterable[ToolDescriptor]) -> list[Violation]:
    """Full static validation: graph shape, tool routing, params, dataflow.

    Returns an empty list iff the spec is acyclic, every node's tool exists
    with a matching capability class, literal params satisfy the tool's
    params_schema, and every $ref resolves to a declared upstream output.
    """
    violations: list[Violation] = []
    cycle = find_cycle(dependency_map(spec))
    if cycle:
        violations.append(Violation("CycleDetected",
                                    " -> ".join(cycle), node_id=cycle[0]))
    by_tool = {t.tool_id: t for t in tools}
    by_id = {n.node_id: n for n in spec.nodes}
    for node in spec.nodes:
        descriptor = by_tool.get(node.tool_id)
        if descriptor is None:
            violations.append(Violation("UnknownTool", node.tool_id,
                                        node_id=node.node_id))
            continue
        if descriptor.capability_class != node.capability_class:
            violations.append(Violation(
                "CapabilityMismatch",
                f"node says {node.capability_class!r}, "
                f"tool is {descriptor.capability_class!r}",
                node_id=node.node_id))
        violations.extend(_validate_node_params(node, descriptor, by_id))
    return violations
