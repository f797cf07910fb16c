// DOM wiring: one store, re-render on every state change.

import type { FetchLike } from "./api.js";
import { renderApp } from "./render.js";
import {
  canSend,
  createStore,
  initialState,
  resetSession,
  sendMessage,
  setDebug,
} from "./state.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

export function mount(): void {
  const transcriptEl = byId<HTMLDivElement>("transcript");
  const errorEl = byId<HTMLDivElement>("error");
  const debugEl = byId<HTMLDivElement>("debug-panel");
  const sessionEl = byId<HTMLSpanElement>("session-label");
  const inputEl = byId<HTMLInputElement>("message-input");
  const sendEl = byId<HTMLButtonElement>("send-button");
  const resetEl = byId<HTMLButtonElement>("reset-button");
  const debugToggle = byId<HTMLInputElement>("debug-toggle");

  const store = createStore(initialState(false), (state) => {
    const view = renderApp(state);
    transcriptEl.innerHTML = view.transcript;
    errorEl.innerHTML = view.error;
    debugEl.innerHTML = view.debugPanel;
    sessionEl.textContent = view.sessionLabel;
    debugEl.parentElement?.classList.toggle("hidden", !state.debug);
    sendEl.disabled = !canSend(state, inputEl.value);
    transcriptEl.scrollTop = transcriptEl.scrollHeight;
  });

  const refreshSendButton = () => {
    sendEl.disabled = !canSend(store.get(), inputEl.value);
  };

  const submit = () => {
    const text = inputEl.value;
    if (!canSend(store.get(), text)) return;
    inputEl.value = "";
    void sendMessage(store, text, fetch as unknown as FetchLike).then(refreshSendButton);
  };

  sendEl.addEventListener("click", submit);
  inputEl.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") submit();
  });
  inputEl.addEventListener("input", refreshSendButton);
  resetEl.addEventListener("click", () => store.set(resetSession(store.get())));
  debugToggle.addEventListener("change", () =>
    store.set(setDebug(store.get(), debugToggle.checked)),
  );

  store.set(store.get()); // initial paint
  inputEl.focus();
}

if (typeof document !== "undefined" && document.getElementById("transcript")) {
  mount();
}
