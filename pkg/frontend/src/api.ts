// Thin fetch client for the chat service. Every helper throws ApiError with
// the server-reported message (or the HTTP status) on non-2xx responses.

import type { Trace, Turn } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, `network error: ${String(err)}`);
  }
  let body: unknown = null;
  try {
    body = await res.json();
  } catch {
    // non-JSON error bodies fall through to the status message below
  }
  if (!res.ok) {
    const detail =
      body && typeof body === "object" && "error" in body
        ? String((body as { error: unknown }).error)
        : `HTTP ${res.status}`;
    throw new ApiError(res.status, detail);
  }
  return body as T;
}

export function createSession(base: string): Promise<{ session_id: string }> {
  return request(`${base}/api/sessions`, { method: "POST" });
}

export function postMessage(
  base: string,
  sessionId: string,
  text: string,
): Promise<{ reply: string; trace: Trace }> {
  return request(`${base}/api/sessions/${sessionId}/messages`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ text }),
  });
}

export function getSession(
  base: string,
  sessionId: string,
): Promise<{ turns: Turn[] }> {
  return request(`${base}/api/sessions/${sessionId}`);
}

export function getHealth(
  base: string,
): Promise<{ status: string; model_loaded: boolean }> {
  return request(`${base}/api/health`);
}
