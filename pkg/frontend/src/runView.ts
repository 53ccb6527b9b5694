/** Live run view: layered task graph, legal controls, event tail. */

import { topologicalLayers } from "./layout.js";
import type { HubEvent, SpecNode, TaskView } from "./types.js";
import { enabledControls, type ViewState } from "./viewmodel.js";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

function nodeBox(nodeId: string, task: TaskView | undefined): string {
  const state = task?.state ?? "pending";
  const attempts = task && task.attempts > 1 ? ` ×${task.attempts}` : "";
  const progress =
    task?.progress !== undefined && state === "running"
      ? ` ${(task.progress * 100).toFixed(0)}%`
      : "";
  const title = task?.error ? ` title="${esc(task.error)}"` : "";
  return `<div class="node state-${state}" data-node-id="${esc(nodeId)}"${title}>
    <span class="node-id">${esc(nodeId)}</span>
    <span class="node-state">${state}${attempts}${progress}</span>
  </div>`;
}

export function renderDag(nodes: SpecNode[], state: ViewState): string {
  const layers = topologicalLayers(nodes);
  const columns = layers
    .map(
      (layer, i) =>
        `<div class="layer" data-layer="${i}">` +
        layer.map((id) => nodeBox(id, state.tasks[id])).join("") +
        `</div>`,
    )
    .join("\n");
  return `<div class="dag">${columns}</div>`;
}

export function renderControls(state: ViewState): string {
  const enabled = enabledControls(state.phase);
  const button = (action: "pause" | "resume" | "abort") =>
    `<button class="control" data-action="${action}" ` +
    `${enabled[action] ? "" : "disabled"}>${action}</button>`;
  return `<div class="controls" data-phase="${state.phase}">
    <span class="phase phase-${state.phase}">${state.phase}</span>
    ${button("pause")}${button("resume")}${button("abort")}
  </div>`;
}

function tailLine(event: HubEvent): string {
  const nodeId = (event.payload["node_id"] as string) ?? "";
  const extra =
    event.kind === "task_failed"
      ? ` — ${esc(String(event.payload["error"] ?? ""))}`
      : event.kind === "control_applied"
        ? ` — ${esc(String(event.payload["action"] ?? ""))}`
        : "";
  return `<li data-seq="${event.seq}">
    <span class="seq">${event.seq}</span>
    <span class="kind kind-${esc(event.kind)}">${esc(event.kind)}</span>
    <span class="node">${esc(nodeId)}</span>${extra}
  </li>`;
}

export function renderEventTail(state: ViewState, limit = 50): string {
  const items = state.tail.slice(-limit).map(tailLine).join("\n");
  return `<ol class="event-tail">${items}</ol>`;
}

export function renderRunView(nodes: SpecNode[], state: ViewState): string {
  return `<section class="run-view">
    ${renderControls(state)}
    ${renderDag(nodes, state)}
    ${renderEventTail(state)}
  </section>`;
}
