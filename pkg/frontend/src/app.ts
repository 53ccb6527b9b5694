/**
 * Browser wiring: connect to a hub, pick an experiment, review plans, and
 * steer the live run. All rendered state is a fold over the event stream;
 * the one snapshot fetch just bootstraps plans and the spec for layout.
 */

import { ApiError, EventStream, HubApi } from "./api.js";
import { renderPlanReview } from "./planView.js";
import { renderRunView } from "./runView.js";
import type { ExperimentStatus, SpecNode } from "./types.js";
import {
  foldEvents,
  initialState,
  type ViewState,
} from "./viewmodel.js";

interface AppState {
  api: HubApi | null;
  experimentId: string;
  status: ExperimentStatus | null;
  view: ViewState;
  stream: EventStream | null;
  connection: string;
}

const app: AppState = {
  api: null,
  experimentId: "",
  status: null,
  view: initialState(""),
  stream: null,
  connection: "idle",
};

function $(selector: string): HTMLElement {
  const element = document.querySelector(selector);
  if (!element) throw new Error(`missing element ${selector}`);
  return element as HTMLElement;
}

function specNodes(): SpecNode[] {
  if (!app.status) return [];
  const selected = app.status.plans.find(
    (plan) => plan.plan_id === (app.view.selectedPlanId ||
      app.status?.selected_plan_id),
  );
  if (selected) return selected.spec.nodes;
  // manual-path runs: reconstruct minimal nodes from observed task states
  return Object.keys(app.view.tasks).map((nodeId) => ({
    node_id: nodeId,
    tool_id: app.view.tasks[nodeId].tool_id ?? "",
    capability_class: "",
    params: {},
    depends_on: [],
  }));
}

function render(): void {
  $("#connection").textContent = app.connection;
  if (!app.status) {
    $("#main").innerHTML = `<p class="empty">connect and load an experiment</p>`;
    return;
  }
  const phase = app.view.phase;
  const showPlans = phase === "registered" || phase === "planned";
  $("#experiment-meta").innerHTML =
    `<code>${app.experimentId}</code> — ${app.status.context.goal} ` +
    `<span class="phase phase-${phase}">${phase}</span>`;
  $("#main").innerHTML = showPlans
    ? renderPlanReview(app.status.plans, phase)
    : renderRunView(specNodes(), app.view);
}

function promptForToken(): void {
  app.connection = "token expired — reconnect with a fresh token";
  ($("#token") as HTMLInputElement).value = "";
  ($("#token") as HTMLInputElement).focus();
  render();
}

async function loadExperiment(): Promise<void> {
  if (!app.api) return;
  const eid = ($("#experiment-id") as HTMLInputElement).value.trim();
  app.experimentId = eid;
  app.stream?.close();
  try {
    app.status = await app.api.listExperimentStatus(eid);
  } catch (error) {
    if (error instanceof ApiError && error.status === 401) {
      promptForToken();
      return;
    }
    throw error;
  }
  app.view = initialState(eid);
  const stream = new EventStream(app.api, eid, {
    onEvent: (event) => {
      app.view = foldEvents(app.view, [event]);
      render();
    },
    onStatusChange: (status) => {
      app.connection = status;
      render();
    },
  });
  app.stream = stream;
  void stream.run();
  render();
}

async function onClick(event: Event): Promise<void> {
  const target = event.target as HTMLElement;
  if (!app.api || !app.experimentId) return;
  const planButton = target.closest<HTMLElement>("button.select-plan");
  if (planButton && !planButton.hasAttribute("disabled")) {
    await app.api.selectPlan(app.experimentId, planButton.dataset.planId!);
    app.status = await app.api.listExperimentStatus(app.experimentId);
    return;
  }
  const control = target.closest<HTMLElement>("button.control");
  if (control && !control.hasAttribute("disabled")) {
    await app.api.control(
      app.experimentId,
      control.dataset.action as "pause" | "resume" | "abort",
    );
  }
}

export function start(): void {
  $("#connect").addEventListener("click", () => {
    const hubUrl = ($("#hub-url") as HTMLInputElement).value.trim();
    const token = ($("#token") as HTMLInputElement).value.trim();
    app.api = new HubApi(hubUrl, token);
    $("#load").removeAttribute("disabled");
  });
  $("#load").addEventListener("click", () => void loadExperiment());
  document.addEventListener("click", (event) => void onClick(event));
  render();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  start();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
