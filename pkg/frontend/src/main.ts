// Wiring: one in-flight request per session, state transitions on every
// event, full re-render after each transition.

import { createSession, getSession, postMessage } from "./api.js";
import {
  beginSend,
  canSend,
  completeSend,
  dismissError,
  editDraft,
  failSend,
  initialState,
  sessionReady,
  syncMessages,
  toggleInspector,
} from "./state.js";
import { renderApp, type Mounts } from "./render.js";
import type { ViewState } from "./types.js";

const BASE = "";

function mounts(): Mounts {
  const get = (id: string): HTMLElement => {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node;
  };
  return {
    messages: get("messages"),
    banner: get("banner"),
    inspector: get("inspector"),
    input: get("input") as HTMLInputElement,
    send: get("send") as HTMLButtonElement,
    inspectorToggle: get("inspector-toggle") as HTMLButtonElement,
  };
}

export function boot(): void {
  const ui = mounts();
  let state: ViewState = initialState();

  const apply = (next: ViewState): void => {
    state = next;
    renderApp(ui, state, canSend(state));
  };

  const send = async (): Promise<void> => {
    if (!canSend(state) || state.sessionId === null) return;
    const text = state.draft.trim();
    apply(beginSend(state, text, new Date().toISOString()));
    try {
      const result = await postMessage(BASE, state.sessionId, text);
      apply(completeSend(state, result.reply, result.trace, new Date().toISOString()));
      // keep the thread mirrored on the server's authoritative history
      const history = await getSession(BASE, state.sessionId);
      apply(syncMessages(state, history.turns, new Date().toISOString()));
    } catch (err) {
      apply(failSend(state, text, err instanceof Error ? err.message : String(err)));
    }
  };

  ui.input.addEventListener("input", () => {
    state = editDraft(state, ui.input.value);
    ui.send.disabled = !canSend(state);
  });
  ui.input.addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
      event.preventDefault();
      void send();
    }
  });
  ui.send.addEventListener("click", () => void send());
  ui.inspectorToggle.addEventListener("click", () => apply(toggleInspector(state)));
  ui.banner.addEventListener("click", () => apply(dismissError(state)));

  apply(state);
  createSession(BASE)
    .then((created) => apply(sessionReady(state, created.session_id)))
    .catch((err) =>
      apply({ ...state, error: `could not create a session: ${String(err)}` }),
    );
}

if (typeof document !== "undefined" && document.getElementById("messages")) {
  boot();
}
