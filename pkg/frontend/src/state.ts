// Pure view-state transitions. The DOM layer renders whatever state says;
// every user/network event maps to exactly one of these functions.

import type { Message, Trace, Turn, ViewState } from "./types.js";

export function initialState(): ViewState {
  return {
    sessionId: null,
    messages: [],
    pending: false,
    lastTrace: null,
    inspectorOpen: false,
    error: null,
    draft: "",
  };
}

export function sessionReady(state: ViewState, sessionId: string): ViewState {
  return { ...state, sessionId };
}

export function editDraft(state: ViewState, draft: string): ViewState {
  return { ...state, draft };
}

export function canSend(state: ViewState): boolean {
  return !state.pending && state.sessionId !== null && state.draft.trim().length > 0;
}

/** Optimistically append the user bubble and lock the input. */
export function beginSend(state: ViewState, text: string, now: string): ViewState {
  const message: Message = { speaker: "user", text, ts: now };
  return {
    ...state,
    pending: true,
    error: null,
    draft: "",
    messages: [...state.messages, message],
  };
}

/** Append the bot bubble and store the decision trace. */
export function completeSend(
  state: ViewState,
  reply: string,
  trace: Trace,
  now: string,
): ViewState {
  const message: Message = { speaker: "bot", text: reply, ts: now };
  return {
    ...state,
    pending: false,
    lastTrace: trace,
    messages: [...state.messages, message],
  };
}

/** Roll back the optimistic bubble, surface the banner, restore the draft. */
export function failSend(state: ViewState, originalText: string, error: string): ViewState {
  return {
    ...state,
    pending: false,
    error,
    draft: originalText,
    messages: state.messages.slice(0, -1),
  };
}

/** Mirror the server-side history (authoritative after every exchange). */
export function syncMessages(state: ViewState, turns: Turn[], now: string): ViewState {
  const keepTs = (i: number): string => state.messages[i]?.ts ?? now;
  return {
    ...state,
    messages: turns.map((turn, i) => ({ ...turn, ts: keepTs(i) })),
  };
}

export function toggleInspector(state: ViewState): ViewState {
  return { ...state, inspectorOpen: !state.inspectorOpen };
}

export function dismissError(state: ViewState): ViewState {
  return { ...state, error: null };
}
