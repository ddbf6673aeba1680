// Client-side legality checks mirroring the service preconditions, so an
// illegal answer never leaves the browser.

import type { Action, Answer } from "./types.js";

export function validateAnswer(pending: Action, answer: Answer): string | null {
  if (pending.kind === "ask") {
    if (!("clicked" in answer)) {
      return "a question expects a clicked-attributes answer";
    }
    const displayed = new Set(pending.attrs);
    for (const id of answer.clicked) {
      if (!displayed.has(id)) {
        return `attribute ${id} was not displayed`;
      }
    }
    if (new Set(answer.clicked).size !== answer.clicked.length) {
      return "clicked attributes contain duplicates";
    }
    return null;
  }
  if ("clicked" in answer) {
    return "a recommendation expects accept or reject";
  }
  if ("accepted" in answer && !pending.items.includes(answer.accepted)) {
    return `item ${answer.accepted} was not recommended`;
  }
  return null;
}
