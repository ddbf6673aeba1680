// Thin typed client over the session service HTTP API.

import type { Answer, AnswerResponse, CreateResponse } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const text = await resp.text();
  if (!resp.ok) {
    let detail = text;
    try {
      detail = JSON.parse(text).detail ?? text;
    } catch {
      // keep the raw body
    }
    throw new ApiError(resp.status, String(detail));
  }
  return JSON.parse(text) as T;
}

export class SessionApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async createSession(checkpoint: string, p0: string): Promise<CreateResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ checkpoint, p0 }),
    });
    return parse<CreateResponse>(resp);
  }

  async submitAnswer(sessionId: string, answer: Answer): Promise<AnswerResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/answer`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(answer),
    });
    return parse<AnswerResponse>(resp);
  }

  async listCheckpoints(): Promise<string[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/checkpoints`);
    return (await parse<{ checkpoints: string[] }>(resp)).checkpoints;
  }
}
