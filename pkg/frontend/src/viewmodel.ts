/**
 * The dashboard's state is a pure fold over the experiment event stream:
 * no polling for anything the stream already carries, and replaying events
 * 1..n always reproduces the exact same view. Events at or below the seq
 * cursor are dropped, so a reconnect that overlaps the already-seen prefix
 * renders identically.
 */

import type { HubEvent, Phase, TaskStateName, TaskView } from "./types.js";

export const TAIL_LIMIT = 500;

export interface ViewState {
  experimentId: string;
  phase: Phase;
  lastSeq: number;
  tasks: Record<string, TaskView>;
  tail: HubEvent[];
  planIds: string[];
  selectedPlanId: string;
  warnings: HubEvent[];
}

export function initialState(experimentId: string): ViewState {
  return {
    experimentId,
    phase: "registered",
    lastSeq: 0,
    tasks: {},
    tail: [],
    planIds: [],
    selectedPlanId: "",
    warnings: [],
  };
}

function taskOf(state: ViewState, nodeId: string): TaskView {
  return (
    state.tasks[nodeId] ?? { node_id: nodeId, state: "pending", attempts: 0 }
  );
}

function str(value: unknown): string | undefined {
  return typeof value === "string" ? value : undefined;
}

function num(value: unknown): number | undefined {
  return typeof value === "number" ? value : undefined;
}

export function applyEvent(state: ViewState, event: HubEvent): ViewState {
  if (event.seq <= state.lastSeq) return state; // duplicate or replayed prefix
  const next: ViewState = {
    ...state,
    lastSeq: event.seq,
    tasks: { ...state.tasks },
    tail: [...state.tail, event].slice(-TAIL_LIMIT),
    warnings: state.warnings,
    planIds: state.planIds,
  };
  const p = event.payload;
  const nodeId = str(p["node_id"]);

  switch (event.kind) {
    case "experiment_registered":
      next.phase = "registered";
      break;
    case "plans_proposed":
      next.phase = "planned";
      next.planIds = Array.isArray(p["plan_ids"])
        ? (p["plan_ids"] as string[])
        : [];
      break;
    case "plan_selected":
      next.selectedPlanId = str(p["plan_id"]) ?? "";
      break;
    case "workflow_compiled":
      next.phase = "executing";
      break;
    case "task_dispatched": {
      if (!nodeId) break;
      const task = { ...taskOf(next, nodeId) };
      task.state = "dispatched";
      task.attempts = num(p["attempt"]) ?? task.attempts + 1;
      task.tool_id = str(p["tool_id"]) ?? task.tool_id;
      const server = str(p["server_id"]);
      if (server) task.server_id = server;
      delete task.error;
      next.tasks[nodeId] = task;
      break;
    }
    case "task_progress": {
      if (!nodeId) break;
      const task = { ...taskOf(next, nodeId) };
      if (task.state === "dispatched") task.state = "running";
      task.progress = num(p["progress"]) ?? task.progress;
      next.tasks[nodeId] = task;
      break;
    }
    case "task_completed": {
      if (!nodeId) break;
      const task = { ...taskOf(next, nodeId) };
      task.state = "completed";
      task.outputs = (p["outputs"] as Record<string, unknown>) ?? {};
      task.latency_ms = num(p["latency_ms"]);
      delete task.progress;
      next.tasks[nodeId] = task;
      break;
    }
    case "task_failed": {
      if (!nodeId) break;
      const task = { ...taskOf(next, nodeId) };
      task.state = p["cancelled_before_dispatch"] ? "cancelled" : "failed";
      task.error = str(p["error"]);
      delete task.progress;
      next.tasks[nodeId] = task;
      break;
    }
    case "task_compensated": {
      if (!nodeId) break;
      const task = { ...taskOf(next, nodeId) };
      if (p["status"] === "ok") task.state = "compensated";
      next.tasks[nodeId] = task;
      break;
    }
    case "validation_failed":
    case "anomaly_warning":
      next.warnings = [...state.warnings, event].slice(-TAIL_LIMIT);
      break;
    case "control_applied": {
      const after = str(p["phase_after"]);
      if (after) next.phase = after as Phase;
      break;
    }
    case "experiment_completed":
      next.phase = "completed";
      break;
    case "experiment_failed":
      next.phase = p["outcome"] === "aborted" ? "aborted" : "failed";
      break;
    case "experiment_archived":
      next.phase = "archived";
      break;
    default:
      break;
  }
  return next;
}

export function foldEvents(state: ViewState, events: HubEvent[]): ViewState {
  return events.reduce(applyEvent, state);
}

/** Controls may only offer legal ExperimentState transitions. */
export function enabledControls(phase: Phase): {
  pause: boolean;
  resume: boolean;
  abort: boolean;
} {
  return {
    pause: phase === "executing",
    resume: phase === "paused",
    abort: phase === "executing" || phase === "paused",
  };
}

/** Plan selection is disabled once execution has begun. */
export function canSelectPlan(phase: Phase): boolean {
  return phase === "registered" || phase === "planned";
}

/** The comparable projection of a fold, for checks against hub snapshots. */
export function taskStateNames(
  state: ViewState,
): Record<string, TaskStateName> {
  const out: Record<string, TaskStateName> = {};
  for (const [nodeId, task] of Object.entries(state.tasks)) {
    out[nodeId] = task.state;
  }
  return out;
}
