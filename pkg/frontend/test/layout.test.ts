import { describe, expect, it } from "vitest";

import { topologicalLayers } from "../src/layout.js";
import type { SpecNode } from "../src/types.js";

function node(id: string, deps: string[] = []): SpecNode {
  return { node_id: id, tool_id: "t", capability_class: "c",
           params: {}, depends_on: deps };
}

describe("task-graph layering", () => {
  it("chains layer one per node", () => {
    const layers = topologicalLayers([
      node("a"), node("b", ["a"]), node("c", ["b"]),
    ]);
    expect(layers).toEqual([["a"], ["b"], ["c"]]);
  });

  it("diamond matches the hub's layering with lexicographic ties", () => {
    const layers = topologicalLayers([
      node("d", ["c", "b"]), node("b", ["a"]), node("c", ["a"]), node("a"),
    ]);
    expect(layers).toEqual([["a"], ["b", "c"], ["d"]]);
  });

  it("longest path wins over shortest", () => {
    // a -> b -> d and a -> d: d sits at depth 2
    const layers = topologicalLayers([
      node("a"), node("b", ["a"]), node("d", ["a", "b"]),
    ]);
    expect(layers).toEqual([["a"], ["b"], ["d"]]);
  });

  it("cycles are an error", () => {
    expect(() =>
      topologicalLayers([node("a", ["b"]), node("b", ["a"])]),
    ).toThrow(/cycle/);
  });

  it("dangling dependencies are tolerated for partial graphs", () => {
    expect(topologicalLayers([node("a", ["ghost"])])).toEqual([["a"]]);
  });
});
