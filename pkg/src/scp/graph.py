"""Pure graph algorithms over workflow dependency edges."""

from __future__ import annotations

from .errors import CycleDetected
from .types import WorkflowSpec


def dependency_map(spec: WorkflowSpec) -> dict[str, tuple[str, ...]]:
    return {n.node_id: n.depends_on for n in spec.nodes}


def find_cycle(deps: dict[str, tuple[str, ...]]) -> list[str] | None:
    """Return one dependency cycle as a node list, or None if acyclic."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in deps}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GREY
        stack.append(node)
        for dep in deps.get(node, ()):
            if dep not in color:
                continue  # dangling deps are a validation concern, not a cycle
            if color[dep] == GREY:
                return stack[stack.index(dep):] + [dep]
            if color[dep] == WHITE:
                cycle = visit(dep)
                if cycle:
                    return cycle
        stack.pop()
        color[node] = BLACK
        return None

    for node in sorted(deps):
        if color[node] == WHITE:
            cycle = visit(node)
            if cycle:
                return cycle
    return None


def topological_layers(spec: WorkflowSpec) -> list[list[str]]:
    """Group nodes by longest dependency path length.

    Layer i holds every node whose longest chain of dependencies has length
    i; ids within a layer are sorted lexicographically so the output is
    deterministic. Raises CycleDetected on cyclic specs.
    """
    deps = dependency_map(spec)
    cycle = find_cycle(deps)
    if cycle:
        raise CycleDetected(cycle)

    depth: dict[str, int] = {}

    def node_depth(node: str) -> int:
        if node not in depth:
            parents = [d for d in deps[node] if d in deps]
            depth[node] = 1 + max((node_depth(d) for d in parents), default=-1)
        return depth[node]

    layers: list[list[str]] = []
    for node in deps:
        d = node_depth(node)
        while len(layers) <= d:
            layers.append([])
        layers[d].append(node)
    for layer in layers:
        layer.sort()
    return layers


def layer_index(spec: WorkflowSpec) -> dict[str, int]:
    return {node: i
            for i, layer in enumerate(topological_layers(spec))
            for node in layer}
