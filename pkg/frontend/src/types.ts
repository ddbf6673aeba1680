// Payload shapes of the session service JSON API. All entity ids are strings;
// scores are JSON numbers and must be displayed as received, never recomputed.

export interface ScoreEntry {
  id: string;
  score: number;
}

export interface Snapshot {
  turn: number;
  items: ScoreEntry[];
  attrs: ScoreEntry[];
}

export interface AskAction {
  kind: "ask";
  type: string;
  attrs: string[];
}

export interface RecommendAction {
  kind: "recommend";
  items: string[];
}

export type Action = AskAction | RecommendAction;

export interface CreateResponse {
  session_id: string;
  action: Action;
  snapshot: Snapshot;
  turn: number;
  done: boolean;
}

export interface AnswerResponse {
  turn: number;
  done: boolean;
  snapshot: Snapshot;
  action?: Action;
  outcome?: string;
}

export type Answer =
  | { clicked: string[] }
  | { accepted: string }
  | { reject: true };

export interface TurnView {
  action: Action;
  answer: Answer | null;
}
