// @vitest-environment jsdom
import { beforeEach, describe, expect, it } from "vitest";

import { renderApp, renderMessages, renderTrace, type Mounts } from "../src/render.js";
import {
  beginSend,
  canSend,
  completeSend,
  editDraft,
  failSend,
  initialState,
  sessionReady,
  toggleInspector,
} from "../src/state.js";
import { candidate, domScaffold, trace } from "./fixtures.js";

const NOW = "2026-08-08T12:00:00Z";

function mounts(): Mounts {
  return {
    messages: document.getElementById("messages")!,
    banner: document.getElementById("banner")!,
    inspector: document.getElementById("inspector")!,
    input: document.getElementById("input") as HTMLInputElement,
    send: document.getElementById("send") as HTMLButtonElement,
    inspectorToggle: document.getElementById("inspector-toggle") as HTMLButtonElement,
  };
}

function ready() {
  return sessionReady(initialState(), "sid-1");
}

beforeEach(domScaffold);

describe("message bubbles", () => {
  it("a full exchange renders exactly two new bubbles", () => {
    const ui = mounts();
    renderMessages(ui.messages, ready());
    const before = ui.messages.querySelectorAll(".msg:not(.typing)").length;

    const t = trace();
    const done = completeSend(beginSend(ready(), "hi", NOW), t.reply, t, NOW);
    renderMessages(ui.messages, done);
    const bubbles = ui.messages.querySelectorAll(".msg:not(.typing)");
    expect(bubbles.length - before).toBe(2);
    expect(bubbles[0].className).toContain("user");
    expect(bubbles[1].className).toContain("bot");
    expect(bubbles[1].textContent).toBe(t.reply);
  });

  it("pending state shows a typing indicator and disables input", () => {
    const ui = mounts();
    const mid = beginSend(editDraft(ready(), "hi"), "hi", NOW);
    renderApp(ui, mid, canSend(mid));
    expect(ui.messages.querySelector(".typing")).not.toBeNull();
    expect(ui.input.disabled).toBe(true);
    expect(ui.send.disabled).toBe(true);
  });
});

describe("error banner", () => {
  it("a failed send shows the banner, keeps the bot bubble out, restores input", () => {
    const ui = mounts();
    const mid = beginSend(editDraft(ready(), "my text"), "my text", NOW);
    const failed = failSend(mid, "my text", "internal error");
    renderApp(ui, failed, canSend(failed));
    expect(ui.banner.hidden).toBe(false);
    expect(ui.banner.textContent).toContain("internal error");
    expect(ui.messages.querySelectorAll(".msg.bot:not(.typing)")).toHaveLength(0);
    expect(ui.input.value).toBe("my text");
    expect(ui.input.disabled).toBe(false);
  });

  it("no banner without an error", () => {
    const ui = mounts();
    renderApp(ui, ready(), false);
    expect(ui.banner.hidden).toBe(true);
  });
});

describe("trace inspector", () => {
  it("renders one row per candidate with badges and drop stages", () => {
    const panel = document.getElementById("inspector")!;
    const t = trace();
    renderTrace(panel, t);
    const rows = panel.querySelectorAll("tr.cand");
    expect(rows).toHaveLength(t.candidates.length);
    expect(panel.querySelectorAll(".badge.abusive")).toHaveLength(1);
    expect(panel.querySelectorAll(".badge.conflict")).toHaveLength(1);
    const stages = [...rows].map((r) => r.querySelector(".stage")!.textContent);
    expect(stages).toEqual(["selected", "abusive", "conflict"]);
  });

  it("highlights exactly one row and shows the displayed reply on it", () => {
    const panel = document.getElementById("inspector")!;
    const t = trace({ reply: "The post-processed reply" });
    renderTrace(panel, t);
    const selected = panel.querySelectorAll("tr.selected");
    expect(selected).toHaveLength(1);
    expect(selected[0].querySelector(".text")!.textContent).toBe("The post-processed reply");
  });

  it("fallback traces show the notice and highlight nothing", () => {
    const panel = document.getElementById("inspector")!;
    const t = trace({
      fallback: true,
      selected_index: null,
      candidates: [candidate({ abusive: true, dropped_at: "abusive" })],
    });
    renderTrace(panel, t);
    expect(panel.querySelector(".trace-fallback")).not.toBeNull();
    expect(panel.querySelectorAll("tr.selected")).toHaveLength(0);
    expect(panel.querySelectorAll("tr.cand")).toHaveLength(1);
  });

  it("inspector visibility follows state", () => {
    const ui = mounts();
    const open = toggleInspector({ ...ready(), lastTrace: trace() });
    renderApp(ui, open, false);
    expect(ui.inspector.hidden).toBe(false);
    expect(ui.inspector.querySelectorAll("tr.cand").length).toBeGreaterThan(0);
    renderApp(ui, toggleInspector(open), false);
    expect(ui.inspector.hidden).toBe(true);
  });
});
