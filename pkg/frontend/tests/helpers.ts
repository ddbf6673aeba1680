import { readFileSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchLike } from "../src/api.js";

const here = dirname(fileURLToPath(import.meta.url));

export interface RecordedExchange {
  request: { method: string; path: string; body?: unknown };
  status: number;
  response: unknown;
  raw: string;
}

export function loadFixture(): RecordedExchange[] {
  const text = readFileSync(join(here, "fixtures", "recorded_session.json"), "utf-8");
  return JSON.parse(text) as RecordedExchange[];
}

export function fixtureRawText(): string {
  return readFileSync(join(here, "fixtures", "recorded_session.json"), "utf-8");
}

/** Serve the recorded exchanges in order, verifying the requests match. */
export function replayFetch(exchanges: RecordedExchange[]): FetchLike & { calls: number } {
  let cursor = 0;
  const fn = (async (url: string, init?: RequestInit) => {
    const expected = exchanges[cursor];
    if (!expected) {
      throw new Error(`unexpected request beyond fixture: ${url}`);
    }
    cursor += 1;
    const method = init?.method ?? "GET";
    if (method !== expected.request.method || !url.endsWith(expected.request.path)) {
      throw new Error(
        `request mismatch: got ${method} ${url}, expected ` +
        `${expected.request.method} ${expected.request.path}`);
    }
    fn.calls = cursor;
    return new Response(expected.raw, {
      status: expected.status,
      headers: { "content-type": "application/json" },
    });
  }) as FetchLike & { calls: number };
  fn.calls = 0;
  return fn;
}

/** A fetch that resolves when release() is called; for in-flight guard tests. */
export function gatedFetch(body: unknown): FetchLike & { release: () => void; calls: number } {
  let releaseFn: (() => void) | null = null;
  const gate = new Promise<void>((resolve) => {
    releaseFn = resolve;
  });
  const fn = (async () => {
    fn.calls += 1;
    await gate;
    return new Response(JSON.stringify(body), {
      status: 200,
      headers: { "content-type": "application/json" },
    });
  }) as FetchLike & { release: () => void; calls: number };
  fn.calls = 0;
  fn.release = () => releaseFn?.();
  return fn;
}
