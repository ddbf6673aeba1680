// Browser bootstrap: wires the store to the DOM. The service base URL comes
// from ?api=... or defaults to same-origin.

import { SessionApi } from "./api.js";
import { ConversationStore } from "./state.js";
import { renderConversation } from "./render.js";

function baseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  return fromQuery ?? "";
}

function mount(): void {
  const root = document.getElementById("conversation");
  const form = document.getElementById("start-form") as HTMLFormElement | null;
  if (!root || !form) {
    throw new Error("missing #conversation or #start-form");
  }
  const store = new ConversationStore(new SessionApi(baseUrl()));
  store.subscribe((model) => {
    root.innerHTML = renderConversation(model);
  });

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    void store.start(String(data.get("checkpoint") ?? "agent"),
                     String(data.get("p0") ?? "0"));
  });

  root.addEventListener("click", (event) => {
    const el = event.target as HTMLElement;
    if (el.classList.contains("disabled")) {
      return;
    }
    if (el.matches("button.chip")) {
      store.toggleChip(el.dataset.attr ?? "");
    } else if (el.matches("button.submit-clicks")) {
      void store.submitClicks();
    } else if (el.matches("button.skip")) {
      void store.submitClicks();
    } else if (el.matches("button.accept")) {
      void store.accept(el.dataset.item ?? "");
    } else if (el.matches("button.reject-all")) {
      void store.rejectAll();
    } else if (el.matches("button.retry")) {
      const data = new FormData(form);
      void store.start(String(data.get("checkpoint") ?? "agent"),
                       String(data.get("p0") ?? "0"));
    }
  });
}

mount();
