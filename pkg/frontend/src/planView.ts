/** Plan review: one card per ranked candidate, select disabled once running. */

import type { PlanCandidate, Phase } from "./types.js";
import { canSelectPlan } from "./viewmodel.js";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderPlanCard(
  candidate: PlanCandidate,
  rank: number,
  phase: Phase,
): string {
  const score = candidate.score;
  const selectable = canSelectPlan(phase);
  const warnings = candidate.warnings
    .map(
      (w) =>
        `<span class="badge warn" title="${esc(w.detail)}">${esc(w.kind)}</span>`,
    )
    .join(" ");
  return `
  <article class="plan-card" data-plan-id="${esc(candidate.plan_id)}">
    <header>
      <span class="rank">#${rank}</span>
      <code>${esc(candidate.plan_id)}</code>
      ${warnings}
    </header>
    <dl class="score">
      <div><dt>latency</dt><dd>${score.latency_ms.toFixed(1)} ms</dd></div>
      <div><dt>cost</dt><dd>${score.cost_units.toFixed(2)}</dd></div>
      <div><dt>risk</dt><dd>${score.risk.toFixed(4)}</dd></div>
      <div><dt>total</dt><dd>${score.total.toFixed(2)}</dd></div>
      <div><dt>steps</dt><dd>${candidate.spec.nodes.length}</dd></div>
    </dl>
    <p class="rationale">${esc(candidate.rationale)}</p>
    <button class="select-plan" data-plan-id="${esc(candidate.plan_id)}"
            ${selectable ? "" : "disabled"}>select and run</button>
  </article>`;
}

export function renderPlanReview(
  candidates: PlanCandidate[],
  phase: Phase,
): string {
  if (candidates.length === 0) {
    return `<p class="empty">no plans yet — request planning first</p>`;
  }
  const cards = candidates
    .map((candidate, i) => renderPlanCard(candidate, i + 1, phase))
    .join("\n");
  return `<section class="plan-review">${cards}</section>`;
}
