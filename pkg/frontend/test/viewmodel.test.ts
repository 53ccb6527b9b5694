/**
 * The view model is a pure fold: replaying the recorded stream must land on
 * exactly the hub's snapshot, reconnects (with or without overlap) must
 * change nothing, and the tail stays a bounded ring buffer.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import type { ExperimentStatus, HubEvent, TaskView } from "../src/types.js";
import {
  TAIL_LIMIT,
  applyEvent,
  canSelectPlan,
  enabledControls,
  foldEvents,
  initialState,
  taskStateNames,
} from "../src/viewmodel.js";

const here = dirname(fileURLToPath(import.meta.url));

function loadStream(): HubEvent[] {
  return readFileSync(join(here, "fixtures", "stream.jsonl"), "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as HubEvent);
}

function loadSnapshot(): ExperimentStatus {
  return JSON.parse(
    readFileSync(join(here, "fixtures", "status.json"), "utf-8"),
  ) as ExperimentStatus;
}

function comparableTask(task: TaskView): Record<string, unknown> {
  const out: Record<string, unknown> = {
    node_id: task.node_id,
    state: task.state,
    attempts: task.attempts,
    tool_id: task.tool_id,
  };
  if (task.outputs !== undefined) out.outputs = task.outputs;
  if (task.server_id) out.server_id = task.server_id;
  if (task.latency_ms !== undefined) out.latency_ms = task.latency_ms;
  return out;
}

describe("event fold against the recorded hub run", () => {
  const events = loadStream();
  const snapshot = loadSnapshot();

  it("the fixture is a 200+ event stream", () => {
    expect(events.length).toBeGreaterThanOrEqual(200);
    expect(events.map((e) => e.seq)).toEqual(
      events.map((_, i) => i + 1),
    );
  });

  it("folding the whole stream reproduces the hub snapshot exactly", () => {
    const view = foldEvents(
      initialState(snapshot.context.experiment_id),
      events,
    );
    expect(view.phase).toBe(snapshot.phase);
    expect(view.lastSeq).toBe(snapshot.last_seq);
    const folded = Object.fromEntries(
      Object.entries(view.tasks).map(([id, task]) => [
        id,
        comparableTask(task),
      ]),
    );
    const expected = Object.fromEntries(
      Object.entries(snapshot.task_states).map(([id, task]) => [
        id,
        comparableTask(task as TaskView),
      ]),
    );
    expect(folded).toEqual(expected);
  });

  it("reconnecting mid-stream yields the same final render", () => {
    const full = foldEvents(
      initialState(snapshot.context.experiment_id),
      events,
    );
    for (const cut of [1, 7, 50, 113, events.length - 1]) {
      // clean resume at lastSeq + 1
      let view = foldEvents(
        initialState(snapshot.context.experiment_id),
        events.slice(0, cut),
      );
      view = foldEvents(view, events.slice(cut));
      expect(view).toEqual(full);

      // sloppy resume with overlapping prefix: duplicates must be dropped
      let overlapped = foldEvents(
        initialState(snapshot.context.experiment_id),
        events.slice(0, cut),
      );
      overlapped = foldEvents(
        overlapped,
        events.slice(Math.max(0, cut - 10)),
      );
      expect(overlapped).toEqual(full);
    }
  });

  it("task states equal the snapshot's state names", () => {
    const view = foldEvents(
      initialState(snapshot.context.experiment_id),
      events,
    );
    const expected = Object.fromEntries(
      Object.entries(snapshot.task_states).map(([id, task]) => [
        id,
        (task as TaskView).state,
      ]),
    );
    expect(taskStateNames(view)).toEqual(expected);
  });

  it("the event tail is a bounded ring buffer keeping the newest events", () => {
    const view = foldEvents(initialState("exp-x"), events);
    expect(view.tail.length).toBeLessThanOrEqual(TAIL_LIMIT);
    const expectedTail = events.slice(-view.tail.length);
    expect(view.tail.map((e) => e.seq)).toEqual(
      expectedTail.map((e) => e.seq),
    );
  });
});

describe("fold mechanics", () => {
  const base = {
    timestamp: "t",
    experiment_id: "exp-a",
    actor: "hub",
    prev_hash: "0".repeat(64),
    hash: "0".repeat(64),
  };

  it("stale and duplicate events are ignored", () => {
    const first: HubEvent = {
      ...base,
      seq: 1,
      kind: "task_dispatched",
      payload: { node_id: "a", tool_id: "t", attempt: 1 },
    };
    const view = applyEvent(initialState("exp-a"), first);
    expect(applyEvent(view, first)).toBe(view);
    expect(applyEvent(view, { ...first, seq: 0 })).toBe(view);
  });

  it("retry path: failed then redispatched bumps attempts", () => {
    const events: HubEvent[] = [
      { ...base, seq: 1, kind: "task_dispatched",
        payload: { node_id: "a", tool_id: "t", attempt: 1 } },
      { ...base, seq: 2, kind: "task_failed",
        payload: { node_id: "a", error: "boom", attempt: 1, terminal: false } },
      { ...base, seq: 3, kind: "task_dispatched",
        payload: { node_id: "a", tool_id: "t", attempt: 2 } },
      { ...base, seq: 4, kind: "task_progress",
        payload: { node_id: "a", progress: 0.5 } },
      { ...base, seq: 5, kind: "task_completed",
        payload: { node_id: "a", outputs: { v: 1 }, latency_ms: 3 } },
    ];
    const view = foldEvents(initialState("exp-a"), events);
    expect(view.tasks["a"].state).toBe("completed");
    expect(view.tasks["a"].attempts).toBe(2);
    expect(view.tasks["a"].outputs).toEqual({ v: 1 });
    expect(view.tasks["a"].error).toBeUndefined();
  });

  it("cancelled-before-dispatch is distinguished from failure", () => {
    const view = foldEvents(initialState("exp-a"), [
      { ...base, seq: 1, kind: "task_failed",
        payload: { node_id: "z", error: "cancelled", attempt: 0,
                   terminal: true, cancelled_before_dispatch: true } },
    ]);
    expect(view.tasks["z"].state).toBe("cancelled");
  });

  it("phase follows lifecycle and control events", () => {
    const view = foldEvents(initialState("exp-a"), [
      { ...base, seq: 1, kind: "experiment_registered", payload: {} },
      { ...base, seq: 2, kind: "plans_proposed",
        payload: { plan_ids: ["pln-1"], k: 3, count: 1 } },
      { ...base, seq: 3, kind: "plan_selected",
        payload: { plan_id: "pln-1" } },
      { ...base, seq: 4, kind: "workflow_compiled", payload: {} },
      { ...base, seq: 5, kind: "control_applied",
        payload: { action: "pause", phase_before: "executing",
                   phase_after: "paused" } },
    ]);
    expect(view.phase).toBe("paused");
    expect(view.planIds).toEqual(["pln-1"]);
    expect(view.selectedPlanId).toBe("pln-1");
    const aborted = foldEvents(view, [
      { ...base, seq: 6, kind: "experiment_failed",
        payload: { outcome: "aborted", node_states: {} } },
    ]);
    expect(aborted.phase).toBe("aborted");
  });
});

describe("control legality", () => {
  it("buttons only offer legal transitions", () => {
    expect(enabledControls("executing")).toEqual(
      { pause: true, resume: false, abort: true });
    expect(enabledControls("paused")).toEqual(
      { pause: false, resume: true, abort: true });
    for (const phase of ["registered", "planned", "completed", "failed",
                         "aborted", "archived"] as const) {
      expect(enabledControls(phase)).toEqual(
        { pause: false, resume: false, abort: false });
    }
  });

  it("plan selection closes once execution begins", () => {
    expect(canSelectPlan("registered")).toBe(true);
    expect(canSelectPlan("planned")).toBe(true);
    for (const phase of ["executing", "paused", "completed", "failed",
                         "aborted", "archived"] as const) {
      expect(canSelectPlan(phase)).toBe(false);
    }
  });
});
