"""Protocol core: parsing, canonicalization, graph layering, validation, hashing."""

from __future__ import annotations

import hashlib
import itertools
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scp import canonical
from scp.errors import (CycleDetected, DuplicateNodeId, MalformedJson,
                        SchemaViolation, UnknownDependency)
from scp.events import hash_event, make_event, verify_sequence
from scp.graph import topological_layers
from scp.types import GENESIS_HASH, FieldSpec, WorkflowSpec
from scp.validation import (canonicalize, parse_workflow_spec, validate_output,
                            validate_workflow)

from conftest import make_node, make_spec, make_tool, random_dag_edges


# --- parse_workflow_spec -------------------------------------------------------

def node_dict(node_id, depends_on=(), params=None, tool_id="t1"):
    return {
        "node_id": node_id, "tool_id": tool_id,
        "capability_class": "compute.generic",
        "params": params or {}, "expected_outputs": [],
        "depends_on": list(depends_on), "max_retries": 0, "on_failure": "abort",
    }


def spec_dict(nodes):
    return {"spec_id": "s1", "experiment_id": "exp-000000000001",
            "version": 1, "nodes": nodes, "created_from": "manual"}


def test_parse_minimal_single_node():
    spec = parse_workflow_spec(json.dumps(spec_dict([node_dict("a")])))
    assert spec.node_ids() == ["a"]


def test_parse_accepts_cycle_validate_rejects():
    # graph checks are deferred to validation, not parsing
    text = json.dumps(spec_dict([node_dict("a", depends_on=["b"]),
                                 node_dict("b", depends_on=["a"])]))
    spec = parse_workflow_spec(text)
    assert len(spec.nodes) == 2
    with pytest.raises(CycleDetected):
        topological_layers(spec)
    violations = validate_workflow(spec, [make_tool("t1")])
    assert any(v.code == "CycleDetected" for v in violations)


def test_parse_duplicate_node_id():
    with pytest.raises(DuplicateNodeId):
        parse_workflow_spec(json.dumps(spec_dict([node_dict("a"), node_dict("a")])))


def test_parse_unknown_dependency():
    with pytest.raises(UnknownDependency):
        parse_workflow_spec(json.dumps(spec_dict([node_dict("a", depends_on=["zz"])])))


def test_parse_malformed_json():
    with pytest.raises(MalformedJson):
        parse_workflow_spec("{not json")


def test_parse_rejects_bad_enum():
    bad = spec_dict([node_dict("a")])
    bad["created_from"] = "dreamt"
    with pytest.raises(SchemaViolation):
        parse_workflow_spec(json.dumps(bad))


def test_parse_ten_step_docking_spec():
    # ten chained nodes mirroring the screening pipeline shape
    nodes = [node_dict(f"s{i:02d}", depends_on=[f"s{i-1:02d}"] if i else [])
             for i in range(10)]
    spec = parse_workflow_spec(json.dumps(spec_dict(nodes)))
    assert len(spec.nodes) == 10


# --- canonicalize ------------------------------------------------------------------

def test_canonical_key_order_invariance():
    a = json.dumps(spec_dict([node_dict("a", params={"b": 1, "a": 2})]))
    shuffled = json.loads(a)
    shuffled["nodes"][0]["params"] = {"a": 2, "b": 1}
    b = json.dumps(shuffled, indent=3)
    assert canonicalize(parse_workflow_spec(a)) == canonicalize(parse_workflow_spec(b))


def test_canonical_sorts_payload_keys():
    assert canonical.dumps({"b": 1, "a": 2}) == '{"a":2,"b":1}'


def test_canonical_rejects_nan():
    with pytest.raises(MalformedJson):
        canonical.dumps({"x": float("nan")})
    with pytest.raises(MalformedJson):
        canonical.loads('{"x": NaN}')
    with pytest.raises(MalformedJson):
        canonical.loads('{"x": 1e999}')


json_scalars = st.one_of(
    st.none(), st.booleans(),
    st.integers(min_value=-10**9, max_value=10**9),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.text(max_size=12),
)


@st.composite
def workflow_specs(draw) -> WorkflowSpec:
    n = draw(st.integers(min_value=0, max_value=6))
    nodes = []
    for i in range(n):
        deps = [f"n{j}" for j in range(i) if draw(st.booleans())]
        params = draw(st.dictionaries(
            st.text(st.characters(codec="ascii", categories=["L", "N"]),
                    min_size=1, max_size=6),
            json_scalars, max_size=3))
        nodes.append(make_node(f"n{i}", params=params, depends_on=deps))
    return make_spec(nodes, version=draw(st.integers(min_value=1, max_value=9)))


@given(workflow_specs())
@settings(max_examples=150, deadline=None)
def test_canonicalize_roundtrip_is_fixed_point(spec):
    text = canonicalize(spec)
    again = canonicalize(parse_workflow_spec(text))
    assert again == text
    assert parse_workflow_spec(again).to_dict() == spec.to_dict()


# --- topological_layers ----------------------------------------------------------------

def test_layers_empty_graph():
    assert topological_layers(make_spec([])) == []


def test_layers_chain():
    spec = make_spec([make_node("a"), make_node("b", depends_on=["a"]),
                      make_node("c", depends_on=["b"])])
    assert topological_layers(spec) == [["a"], ["b"], ["c"]]


def test_layers_diamond():
    spec = make_spec([make_node("a"),
                      make_node("b", depends_on=["a"]),
                      make_node("c", depends_on=["a"]),
                      make_node("d", depends_on=["b", "c"])])
    assert topological_layers(spec) == [["a"], ["b", "c"], ["d"]]


def brute_force_longest_path(deps: dict, node: str) -> int:
    best = 0
    def walk(n, length):
        nonlocal best
        best = max(best, length)
        for d in deps[n]:
            walk(d, length + 1)
    walk(node, 0)
    return best


def all_orders_respect_edges(layers, deps) -> bool:
    """Every interleaving consistent with the layers must respect depends_on."""
    per_layer_orders = [itertools.permutations(layer) for layer in layers]
    for combo in itertools.product(*per_layer_orders):
        order = [n for layer in combo for n in layer]
        position = {n: i for i, n in enumerate(order)}
        for node, node_deps in deps.items():
            for dep in node_deps:
                if position[dep] >= position[node]:
                    return False
    return True


def test_layers_match_brute_force_on_random_dags():
    rng = random.Random(7)
    for _ in range(60):
        n = rng.randint(1, 8)
        names, deps = random_dag_edges(rng, n)
        spec = make_spec([make_node(name, depends_on=deps[name]) for name in names])
        layers = topological_layers(spec)
        # oracle 1: layer index equals brute-force longest dependency path
        expected: dict[int, list] = {}
        for name in names:
            expected.setdefault(brute_force_longest_path(deps, name), []).append(name)
        assert layers == [sorted(expected[i]) for i in range(len(expected))]
        # oracle 2: every layer-consistent execution order respects all edges
        assert all_orders_respect_edges(layers, deps)


# --- validate_workflow --------------------------------------------------------------------

NUM = FieldSpec("x", "number")
OUT_NUM = FieldSpec("y", "number")


def test_validate_clean_two_node_chain():
    tools = [make_tool("t1", params=[NUM], outputs=[OUT_NUM])]
    spec = make_spec([
        make_node("a", params={"x": 1.5}, expected_outputs=[OUT_NUM]),
        make_node("b", params={"x": "$ref:a.y"}, depends_on=["a"]),
    ])
    assert validate_workflow(spec, tools) == []


def test_validate_unknown_tool():
    spec = make_spec([make_node("a", tool_id="ghost")])
    violations = validate_workflow(spec, [make_tool("t1")])
    assert [v.code for v in violations] == ["UnknownTool"]
    assert violations[0].detail == "ghost"


def test_validate_capability_mismatch():
    spec = make_spec([make_node("a", capability="other.class")])
    violations = validate_workflow(spec, [make_tool("t1")])
    assert [v.code for v in violations] == ["CapabilityMismatch"]


def test_validate_missing_required_param():
    tools = [make_tool("t1", params=[NUM])]
    violations = validate_workflow(spec := make_spec([make_node("a")]), tools)
    assert [v.code for v in violations] == ["MissingParam"]


def test_validate_ref_must_be_in_depends_on():
    tools = [make_tool("t1", params=[NUM], outputs=[OUT_NUM])]
    spec = make_spec([
        make_node("a", params={"x": 1}, expected_outputs=[OUT_NUM]),
        make_node("b", params={"x": "$ref:a.y"}),  # no depends_on edge
    ])
    codes = [v.code for v in validate_workflow(spec, tools)]
    assert codes == ["RefOutsideDependencies"]


def test_validate_ref_unknown_output():
    tools = [make_tool("t1", params=[NUM], outputs=[OUT_NUM])]
    spec = make_spec([
        make_node("a", params={"x": 1}, expected_outputs=[OUT_NUM]),
        make_node("b", params={"x": "$ref:a.zzz"}, depends_on=["a"]),
    ])
    codes = [v.code for v in validate_workflow(spec, tools)]
    assert codes == ["UnknownRefOutput"]


def test_validate_single_type_mismatch_located_by_node_and_param():
    # Plant exactly one bad literal in a random 8-node DAG, then re-derive the
    # full violation set by brute-force checking every (node, param) pair.
    rng = random.Random(99)
    names, deps = random_dag_edges(rng, 8)
    schema = [FieldSpec("x", "number"), FieldSpec("flag", "boolean")]
    tools = [make_tool("t1", params=schema)]
    nodes = []
    bad_node = names[rng.randrange(len(names))]
    for name in names:
        params = {"x": rng.uniform(0, 5), "flag": bool(rng.getrandbits(1))}
        if name == bad_node:
            params["x"] = "not-a-number"
        nodes.append(make_node(name, params=params, depends_on=deps[name]))
    spec = make_spec(nodes)

    expected = []
    for node in nodes:  # independent oracle: exhaustive pair re-check
        for fs in schema:
            value = node.params[fs.name]
            ok = isinstance(value, bool) if fs.type == "boolean" else (
                isinstance(value, (int, float)) and not isinstance(value, bool))
            if not ok:
                expected.append((node.node_id, fs.name))

    got = [(v.node_id, v.param) for v in validate_workflow(spec, tools)]
    assert got == expected == [(bad_node, "x")]


# --- validate_output -----------------------------------------------------------------------

def test_output_number_in_range():
    assert validate_output(0.75, FieldSpec("q", "number",
                                           constraints={"min": 0, "max": 1})) is None


def test_output_type_mismatch():
    v = validate_output("abc", FieldSpec("q", "number"))
    assert v is not None and v.code == "TypeMismatch"


def test_output_affinity_threshold_boundary():
    # a docking affinity of -7.3 satisfies a max of -7.0 (lower is better)
    schema = FieldSpec("affinity", "number", constraints={"max": -7.0})
    assert validate_output(-7.3, schema) is None
    v = validate_output(-6.9, schema)
    assert v is not None and v.code == "ConstraintViolated"


def test_output_enum_constraint():
    schema = FieldSpec("state", "string", constraints={"enum": ["ok", "warn"]})
    assert validate_output("ok", schema) is None
    assert validate_output("nope", schema).code == "ConstraintViolated"


# --- hash_event ---------------------------------------------------------------------------

GENESIS_DIGEST_GOLDEN = "tests/data/genesis_event_hash.txt"


def genesis_fields():
    return {
        "seq": 1, "timestamp": "2026-01-01T00:00:00Z",
        "experiment_id": "exp-000000000001", "kind": "experiment_registered",
        "actor": "hub", "payload": {"goal": "demo"}, "prev_hash": GENESIS_HASH,
    }


def test_genesis_hash_matches_golden(tmp_path):
    import pathlib
    golden = pathlib.Path(__file__).parent / "data" / "genesis_event_hash.txt"
    digest = hash_event(genesis_fields())
    assert digest == golden.read_text().strip()


def test_hash_changes_on_any_field_flip():
    base = hash_event(genesis_fields())
    for key, mutated in [("seq", 2), ("timestamp", "2026-01-01T00:00:01Z"),
                         ("kind", "plans_proposed"), ("actor", "srv-000000000001"),
                         ("payload", {"goal": "demo!"}),
                         ("prev_hash", "1" * 64)]:
        fields = genesis_fields()
        fields[key] = mutated
        assert hash_event(fields) != base, key


def test_chain_of_100_verifies_against_independent_recomputation():
    events = []
    prev = GENESIS_HASH
    for seq in range(1, 101):
        ev = make_event(seq, f"2026-01-01T00:00:{seq % 60:02d}Z",
                        "exp-0000000000aa", "task_progress", "hub",
                        {"node_id": "n", "progress": seq / 100}, prev)
        events.append(ev)
        prev = ev.hash
    assert verify_sequence(events) is None

    # independent oracle: hand-rolled json+sha256 recomputation
    prev = "0" * 64
    for ev in events:
        body = {"seq": ev.seq, "timestamp": ev.timestamp,
                "experiment_id": ev.experiment_id, "kind": ev.kind,
                "actor": ev.actor, "payload": ev.payload, "prev_hash": prev}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False)
        assert hashlib.sha256(text.encode()).hexdigest() == ev.hash
        prev = ev.hash


def test_verify_sequence_detects_tamper():
    events = []
    prev = GENESIS_HASH
    for seq in range(1, 6):
        ev = make_event(seq, "2026-01-01T00:00:00Z", "exp-0000000000aa",
                        "task_progress", "hub", {"n": seq}, prev)
        events.append(ev)
        prev = ev.hash
    import dataclasses
    tampered = list(events)
    tampered[2] = dataclasses.replace(tampered[2], payload={"n": 999})
    assert verify_sequence(tampered) == 3
    assert verify_sequence(events[:2] + events[3:]) == 4  # dropped event
    assert verify_sequence([events[1], events[0]] + events[2:]) == 2  # reorder
