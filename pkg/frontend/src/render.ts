// HTML builders for the conversation view. Pure string builders so the
// rendering logic is testable without a browser; main.ts mounts the output.

import { buildSeries, renderChartSvg } from "./chart.js";
import type { ViewModel } from "./state.js";
import type { Action, Answer } from "./types.js";

function esc(value: string): string {
  return value.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderAction(action: Action, selected: string[],
                             interactive: boolean): string {
  const cls = interactive ? "" : " disabled";
  if (action.kind === "ask") {
    const chips = action.attrs.map((id) => {
      const on = selected.includes(id) ? " selected" : "";
      return `<button class="chip${on}${cls}" data-attr="${esc(id)}">` +
        `attribute ${esc(id)}</button>`;
    });
    return `<div class="ask${cls}">` +
      `<p>Which of these do you like?</p>${chips.join("")}` +
      `<button class="submit-clicks${cls}">submit</button>` +
      `<button class="skip${cls}">none of these</button></div>`;
  }
  const cards = action.items.map((id) =>
    `<div class="card${cls}" data-item="${esc(id)}">item ${esc(id)}` +
    `<button class="accept${cls}" data-item="${esc(id)}">accept</button></div>`);
  return `<div class="recommend${cls}"><p>How about one of these?</p>` +
    `${cards.join("")}<button class="reject-all${cls}">none of these</button></div>`;
}

function renderAnswer(answer: Answer): string {
  if ("clicked" in answer) {
    return answer.clicked.length
      ? `<p class="answer">clicked: ${answer.clicked.map(esc).join(", ")}</p>`
      : `<p class="answer">clicked nothing</p>`;
  }
  if ("accepted" in answer) {
    return `<p class="answer">accepted item ${esc(answer.accepted)}</p>`;
  }
  return `<p class="answer">rejected all</p>`;
}

export function renderConversation(model: ViewModel): string {
  const parts: string[] = [];
  if (model.error) {
    parts.push(`<div class="banner error">${esc(model.error)}` +
      `<button class="retry">retry</button></div>`);
  }
  for (const turn of model.turns) {
    parts.push(renderAction(turn.action, [], false));
    if (turn.answer) {
      parts.push(renderAnswer(turn.answer));
    }
  }
  if (model.pending && model.status !== "done") {
    parts.push(renderAction(model.pending, model.selected,
                            model.status === "ready"));
  }
  if (model.status === "done") {
    parts.push(`<div class="terminal outcome-${esc(model.outcome ?? "unknown")}">` +
      `conversation finished: ${esc(model.outcome ?? "unknown")}</div>`);
  }
  parts.push(renderChartSvg(buildSeries(model.snapshots)));
  return parts.join("\n");
}
