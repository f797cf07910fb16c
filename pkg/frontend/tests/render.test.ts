import { describe, expect, it } from "vitest";

import type { RespondTrace } from "../src/api.js";
import { renderApp, renderDebugPanel, renderTranscript } from "../src/render.js";
import { beginSend, completeSend, initialState, setDebug } from "../src/state.js";

const TRACE: RespondTrace = {
  chosen: "hello there",
  candidate_count: 2,
  fallback: false,
  top: [
    {
      doc_id: 7,
      response: "hello there",
      fetch_score: 3.25,
      score: 1.23456789,
      features: [0.5, 1, 2, 0, 0, 0, 0, 0, 0, 0.25, 0.125],
    },
    {
      doc_id: 2,
      response: "something <else>",
      fetch_score: 1.5,
      score: -0.5,
      features: [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    },
  ],
};

describe("renderTranscript", () => {
  it("shows a hint for empty transcripts", () => {
    expect(renderTranscript(initialState())).toContain("Say something");
  });

  it("renders bubbles in send order and escapes content", () => {
    let s = beginSend(initialState(), "a <script> attack", 1);
    s = completeSend(s, s.epoch, "benign & sound", null, 2);
    const html = renderTranscript(s);
    expect(html).toContain("a &lt;script&gt; attack");
    expect(html).toContain("benign &amp; sound");
    expect(html.indexOf("user")).toBeLessThan(html.indexOf('bubble bot'));
  });

  it("marks a pending request", () => {
    const html = renderTranscript(beginSend(initialState(), "hi", 1));
    expect(html).toContain("pending");
  });
});

describe("renderDebugPanel", () => {
  function debugState() {
    let s = setDebug(initialState(), true);
    s = beginSend(s, "hi", 1);
    return completeSend(s, s.epoch, TRACE.chosen, TRACE, 2);
  }

  it("is empty when debug is off", () => {
    expect(renderDebugPanel(initialState())).toBe("");
  });

  it("renders one row per candidate with all 11 features at 4 decimals", () => {
    const html = renderDebugPanel(debugState());
    expect(html.match(/<tr>/g)).toHaveLength(1 + TRACE.top.length);
    expect(html).toContain("1.2346"); // score rounded to 4 places
    expect(html).toContain("0.1250"); // f10
    expect(html).toContain("f10");
    expect(html).toContain("something &lt;else&gt;");
  });

  it("flags fallback replies", () => {
    let s = setDebug(initialState(), true);
    s = beginSend(s, "zzz", 1);
    s = completeSend(
      s,
      s.epoch,
      "no idea",
      { chosen: "no idea", candidate_count: 0, fallback: true, top: [] },
      2,
    );
    expect(renderDebugPanel(s)).toContain("fallback");
  });
});

describe("renderApp", () => {
  it("is a pure function of state", () => {
    let s = setDebug(initialState(), true);
    s = beginSend(s, "hi", 1);
    s = completeSend(s, s.epoch, TRACE.chosen, TRACE, 2);
    const a = renderApp(s);
    const b = renderApp(s);
    expect(a).toEqual(b);
    expect(a.sessionLabel).toContain(s.sessionId.slice(0, 8));
  });
});
