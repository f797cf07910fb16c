// Pure HTML renderers: string in, string out, no DOM access.

import type { ChatViewState } from "./state.js";
import type { RespondTrace } from "./api.js";

export function escapeHtml(value: string): string {
  return value
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderTranscript(state: ChatViewState): string {
  if (state.transcript.length === 0) {
    return '<p class="empty">Say something to start the conversation.</p>';
  }
  const bubbles = state.transcript
    .map(
      (b) =>
        `<div class="bubble ${b.speaker}"><span class="speaker">${b.speaker}</span>` +
        `<span class="text">${escapeHtml(b.text)}</span></div>`,
    )
    .join("");
  const pending = state.pending ? '<div class="bubble bot pending">&hellip;</div>' : "";
  return bubbles + pending;
}

export function renderError(state: ChatViewState): string {
  if (!state.error) return "";
  return `<div class="error">Request failed: ${escapeHtml(state.error)}. Try sending again.</div>`;
}

export function renderDebugPanel(state: ChatViewState): string {
  if (!state.debug) return "";
  const trace = state.lastTrace;
  if (!trace) return '<p class="empty">No trace yet.</p>';
  const header =
    "<tr><th>#</th><th>doc</th><th>response</th><th>fetch</th><th>score</th>" +
    Array.from({ length: 11 }, (_, i) => `<th>f${i}</th>`).join("") +
    "</tr>";
  const rows = trace.top
    .map((cand, rank) => {
      const feats = cand.features.map((v) => `<td>${v.toFixed(4)}</td>`).join("");
      return (
        `<tr><td>${rank + 1}</td><td>${cand.doc_id}</td>` +
        `<td class="resp">${escapeHtml(cand.response)}</td>` +
        `<td>${cand.fetch_score.toFixed(4)}</td><td>${cand.score.toFixed(4)}</td>${feats}</tr>`
      );
    })
    .join("");
  const note = trace.fallback
    ? '<p class="fallback">Retrieval came back empty; this is the fallback reply.</p>'
    : "";
  return (
    `${note}<p class="meta">${trace.candidate_count} candidate(s) ranked</p>` +
    `<table class="trace">${header}${rows}</table>`
  );
}

export function renderApp(state: ChatViewState): {
  transcript: string;
  error: string;
  debugPanel: string;
  sessionLabel: string;
} {
  return {
    transcript: renderTranscript(state),
    error: renderError(state),
    debugPanel: renderDebugPanel(state),
    sessionLabel: `session ${state.sessionId.slice(0, 8)}`,
  };
}

export function traceRowsMatch(trace: RespondTrace, html: string): boolean {
  // every candidate from the API trace must appear in the rendered panel
  return trace.top.every(
    (cand) => html.includes(escapeHtml(cand.response)) && html.includes(cand.score.toFixed(4)),
  );
}
