/**
 * Task-graph layout: nodes grouped by longest dependency path length,
 * lexicographic within a layer — the same layering the hub compiles with,
 * so the rendered DAG is visually deterministic.
 */

import type { SpecNode } from "./types.js";

export function topologicalLayers(nodes: SpecNode[]): string[][] {
  const deps = new Map<string, string[]>(
    nodes.map((n) => [n.node_id, n.depends_on ?? []]),
  );
  const depth = new Map<string, number>();
  const visiting = new Set<string>();

  const depthOf = (id: string): number => {
    const known = depth.get(id);
    if (known !== undefined) return known;
    if (visiting.has(id)) throw new Error(`dependency cycle at ${id}`);
    visiting.add(id);
    const parents = (deps.get(id) ?? []).filter((d) => deps.has(d));
    const value =
      parents.length === 0 ? 0 : 1 + Math.max(...parents.map(depthOf));
    visiting.delete(id);
    depth.set(id, value);
    return value;
  };

  const layers: string[][] = [];
  for (const id of deps.keys()) {
    const d = depthOf(id);
    while (layers.length <= d) layers.push([]);
    layers[d].push(id);
  }
  for (const layer of layers) layer.sort();
  return layers;
}
