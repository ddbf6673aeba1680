// Conversation state machine. All view state derives from service responses;
// nothing is rescored locally. One request may be in flight per session, and
// submissions while a request is pending are ignored (double-submit guard).

import { ApiError, SessionApi } from "./api.js";
import type { Action, Answer, Snapshot, TurnView } from "./types.js";
import { validateAnswer } from "./validate.js";

export type Status =
  | "idle"
  | "connecting"
  | "ready"
  | "submitting"
  | "done"
  | "error";

export interface ViewModel {
  status: Status;
  sessionId: string | null;
  turns: TurnView[];
  pending: Action | null;
  selected: string[];
  snapshots: Snapshot[];
  outcome: string | null;
  error: string | null;
}

export class ConversationStore {
  private model: ViewModel = {
    status: "idle",
    sessionId: null,
    turns: [],
    pending: null,
    selected: [],
    snapshots: [],
    outcome: null,
    error: null,
  };
  private listeners: Array<(m: ViewModel) => void> = [];

  constructor(private api: SessionApi) {}

  get view(): ViewModel {
    return this.model;
  }

  subscribe(listener: (m: ViewModel) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) {
      listener(this.model);
    }
  }

  private patch(update: Partial<ViewModel>): void {
    this.model = { ...this.model, ...update };
    this.emit();
  }

  async start(checkpoint: string, p0: string): Promise<void> {
    if (this.model.status === "connecting" || this.model.status === "submitting") {
      return;
    }
    this.patch({ status: "connecting", error: null });
    try {
      const resp = await this.api.createSession(checkpoint, p0);
      this.patch({
        status: "ready",
        sessionId: resp.session_id,
        pending: resp.action,
        selected: [],
        turns: [],
        snapshots: [resp.snapshot],
        outcome: null,
      });
    } catch (err) {
      this.patch({ status: "error", error: describe(err) });
    }
  }

  toggleChip(id: string): void {
    if (this.model.status !== "ready" || this.model.pending?.kind !== "ask") {
      return;
    }
    if (!this.model.pending.attrs.includes(id)) {
      return; // never select something that was not displayed
    }
    const selected = this.model.selected.includes(id)
      ? this.model.selected.filter((s) => s !== id)
      : [...this.model.selected, id];
    this.patch({ selected });
  }

  /** Submit the current chip selection (possibly empty = "none of these"). */
  async submitClicks(): Promise<void> {
    await this.submit({ clicked: [...this.model.selected] });
  }

  async accept(itemId: string): Promise<void> {
    await this.submit({ accepted: itemId });
  }

  async rejectAll(): Promise<void> {
    await this.submit({ reject: true });
  }

  private async submit(answer: Answer): Promise<void> {
    const { status, pending, sessionId } = this.model;
    if (status !== "ready" || pending === null || sessionId === null) {
      return; // request in flight or session not ready: ignore
    }
    const problem = validateAnswer(pending, answer);
    if (problem !== null) {
      this.patch({ error: problem });
      return;
    }
    this.patch({ status: "submitting", error: null });
    try {
      const resp = await this.api.submitAnswer(sessionId, answer);
      const turns = [...this.model.turns, { action: pending, answer }];
      if (resp.done) {
        this.patch({
          status: "done",
          turns,
          pending: null,
          selected: [],
          snapshots: [...this.model.snapshots, resp.snapshot],
          outcome: resp.outcome ?? null,
        });
      } else {
        this.patch({
          status: "ready",
          turns,
          pending: resp.action ?? null,
          selected: [],
          snapshots: [...this.model.snapshots, resp.snapshot],
        });
      }
    } catch (err) {
      // Validation errors keep the turn alive; the user can retry.
      this.patch({ status: "ready", error: describe(err) });
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `service error ${err.status}: ${err.message}`;
  }
  return err instanceof Error ? err.message : String(err);
}
