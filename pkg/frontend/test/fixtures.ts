import type { Trace, TraceCandidate } from "../src/types.js";

export function candidate(overrides: Partial<TraceCandidate> = {}): TraceCandidate {
  return {
    text: "a plain candidate",
    planned: false,
    scores: { coherence: 0.42, rank: 0.61 },
    abusive: false,
    conflict: false,
    dropped_at: null,
    ...overrides,
  };
}

export function trace(overrides: Partial<Trace> = {}): Trace {
  return {
    reply: "A plain candidate",
    selected_index: 0,
    fallback: false,
    stage_counts: { input: 3, abusive: 1, coherence: 0, conflict: 1, ranked: 1 },
    candidates: [
      candidate(),
      candidate({ text: "rude words here", abusive: true, dropped_at: "abusive", scores: {} }),
      candidate({ text: "i hate cats", conflict: true, dropped_at: "conflict", scores: { coherence: 0.3 } }),
    ],
    ...overrides,
  };
}

export function domScaffold(): void {
  document.body.innerHTML = `
    <div id="header"><button id="inspector-toggle"></button></div>
    <div id="banner" hidden></div>
    <div id="messages"></div>
    <div id="inspector" hidden></div>
    <input id="input">
    <button id="send" disabled></button>
  `;
}
