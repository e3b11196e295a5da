// Thin JSON client plus the two request-discipline helpers the UI relies on:
// latest-wins for overlapping allocation requests, single-flight for the
// (slow) simulation endpoint.

import { ApiError } from "./types.js";
import type {
  AllocateBody,
  AllocateResponse,
  PresetsResponse,
  SimulateBody,
  SimulateResponse,
} from "./types.js";

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(path, init);
  const text = await res.text();
  let body: unknown = null;
  try {
    body = text ? JSON.parse(text) : null;
  } catch {
    body = text;
  }
  if (!res.ok) {
    const detail =
      body && typeof body === "object" && "detail" in body
        ? JSON.stringify((body as { detail: unknown }).detail)
        : String(body);
    throw new ApiError(res.status, detail);
  }
  return body as T;
}

export function getPresets(): Promise<PresetsResponse> {
  return request<PresetsResponse>("/presets");
}

export function postAllocate(body: AllocateBody): Promise<AllocateResponse> {
  return request<AllocateResponse>("/allocate", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
}

export function postSimulate(body: SimulateBody): Promise<SimulateResponse> {
  return request<SimulateResponse>("/simulate", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
}

/** Overlapping calls may resolve out of order; only the newest result lands. */
export function makeLatestWins<A extends unknown[], T>(
  fn: (...args: A) => Promise<T>,
): (...args: A) => Promise<T | undefined> {
  let counter = 0;
  return async (...args: A) => {
    const ticket = ++counter;
    const result = await fn(...args);
    return ticket === counter ? result : undefined;
  };
}

/** At most one call in flight; further calls are rejected until it settles. */
export function makeSingleFlight<A extends unknown[], T>(
  fn: (...args: A) => Promise<T>,
): { call: (...args: A) => Promise<T>; busy: () => boolean } {
  let inFlight = false;
  return {
    busy: () => inFlight,
    call: async (...args: A) => {
      if (inFlight) throw new Error("a simulation is already running");
      inFlight = true;
      try {
        return await fn(...args);
      } finally {
        inFlight = false;
      }
    },
  };
}
