// DOM rendering: full re-render from state into fixed mount points. The
// selected inspector row always shows the post-processed reply the chat
// displays, never a diverging variant.

import type { Trace, ViewState } from "./types.js";

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderMessages(container: HTMLElement, state: ViewState): void {
  container.replaceChildren();
  for (const message of state.messages) {
    const bubble = el("div", `msg ${message.speaker}`, message.text);
    bubble.title = message.ts;
    container.appendChild(bubble);
  }
  if (state.pending) {
    container.appendChild(el("div", "msg bot typing", "..."));
  }
  container.scrollTop = container.scrollHeight;
}

export function renderBanner(container: HTMLElement, state: ViewState): void {
  container.replaceChildren();
  if (state.error === null) {
    container.hidden = true;
    return;
  }
  container.hidden = false;
  container.appendChild(el("span", "banner-text", state.error));
}

export function renderTrace(panel: HTMLElement, trace: Trace | null): void {
  panel.replaceChildren();
  if (trace === null) {
    panel.appendChild(el("p", "trace-empty", "No trace yet - send a message."));
    return;
  }
  if (trace.fallback) {
    panel.appendChild(
      el("p", "trace-fallback", "Every candidate was filtered out; a fallback reply was used."),
    );
  }
  const table = document.createElement("table");
  table.className = "trace";
  const head = document.createElement("tr");
  for (const title of ["#", "candidate", "coherence", "rank", "flags", "dropped at"]) {
    head.appendChild(el("th", "", title));
  }
  table.appendChild(head);
  trace.candidates.forEach((cand, i) => {
    const selected = !trace.fallback && i === trace.selected_index;
    const row = document.createElement("tr");
    row.className = selected ? "cand selected" : "cand";
    row.appendChild(el("td", "idx", String(i + 1)));
    // the chat shows the post-processed reply; the selected row must match it
    row.appendChild(el("td", "text", selected ? trace.reply : cand.text));
    row.appendChild(el("td", "score", fmtScore(cand.scores["coherence"])));
    row.appendChild(el("td", "score", fmtScore(cand.scores["rank"])));
    const flags = el("td", "flags");
    if (cand.abusive) flags.appendChild(el("span", "badge abusive", "abusive"));
    if (cand.conflict) flags.appendChild(el("span", "badge conflict", "conflict"));
    if (cand.planned) flags.appendChild(el("span", "badge planned", "planned"));
    row.appendChild(flags);
    row.appendChild(el("td", "stage", cand.dropped_at ?? (selected ? "selected" : "-")));
    table.appendChild(row);
  });
  panel.appendChild(table);
}

function fmtScore(value: number | undefined): string {
  return value === undefined ? "-" : value.toFixed(3);
}

export interface Mounts {
  messages: HTMLElement;
  banner: HTMLElement;
  inspector: HTMLElement;
  input: HTMLInputElement;
  send: HTMLButtonElement;
  inspectorToggle: HTMLButtonElement;
}

export function renderApp(mounts: Mounts, state: ViewState, canSendNow: boolean): void {
  renderMessages(mounts.messages, state);
  renderBanner(mounts.banner, state);
  mounts.input.value = state.draft;
  mounts.input.disabled = state.pending;
  mounts.send.disabled = !canSendNow;
  mounts.inspector.hidden = !state.inspectorOpen;
  mounts.inspectorToggle.textContent = state.inspectorOpen ? "Hide trace" : "Show trace";
  if (state.inspectorOpen) {
    renderTrace(mounts.inspector, state.lastTrace);
  }
}
