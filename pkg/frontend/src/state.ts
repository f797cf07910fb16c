// Chat view state and its transitions. All transitions are pure functions
// so the UI behaviour is snapshot-testable without a DOM; the transcript
// only ever changes through beginSend/completeSend/failSend/resetSession.

import type { FetchLike, RespondTrace } from "./api.js";
import { postChat } from "./api.js";

export interface Bubble {
  speaker: "user" | "bot";
  text: string;
  timestamp: number;
}

export interface ChatViewState {
  sessionId: string;
  transcript: Bubble[];
  pending: boolean;
  debug: boolean;
  lastTrace: RespondTrace | null;
  error: string | null;
  // bumped by resetSession; responses from an older epoch are discarded
  epoch: number;
}

export function newSessionId(): string {
  const bytes = new Uint8Array(16);
  if (typeof crypto !== "undefined" && crypto.getRandomValues) {
    crypto.getRandomValues(bytes);
  } else {
    for (let i = 0; i < bytes.length; i++) bytes[i] = Math.floor(Math.random() * 256);
  }
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export function initialState(debug = false): ChatViewState {
  return {
    sessionId: newSessionId(),
    transcript: [],
    pending: false,
    debug,
    lastTrace: null,
    error: null,
    epoch: 0,
  };
}

export function canSend(state: ChatViewState, text: string): boolean {
  return text.trim().length > 0 && !state.pending;
}

export function beginSend(state: ChatViewState, text: string, now: number): ChatViewState {
  return {
    ...state,
    transcript: [...state.transcript, { speaker: "user", text, timestamp: now }],
    pending: true,
    error: null,
  };
}

export function completeSend(
  state: ChatViewState,
  epoch: number,
  response: string,
  trace: RespondTrace | null,
  now: number,
): ChatViewState {
  if (epoch !== state.epoch) return state; // stale reply after a reset
  return {
    ...state,
    transcript: [...state.transcript, { speaker: "bot", text: response, timestamp: now }],
    pending: false,
    lastTrace: state.debug ? trace : null,
  };
}

export function failSend(state: ChatViewState, epoch: number, message: string): ChatViewState {
  if (epoch !== state.epoch) return state;
  // the user bubble stays; the notice invites a retry
  return { ...state, pending: false, error: message };
}

export function resetSession(state: ChatViewState): ChatViewState {
  return {
    sessionId: newSessionId(),
    transcript: [],
    pending: false,
    debug: state.debug,
    lastTrace: null,
    error: null,
    epoch: state.epoch + 1,
  };
}

export function setDebug(state: ChatViewState, debug: boolean): ChatViewState {
  return { ...state, debug, lastTrace: debug ? state.lastTrace : null };
}

export interface Store {
  get(): ChatViewState;
  set(next: ChatViewState): void;
}

export function createStore(
  state: ChatViewState,
  onChange: (s: ChatViewState) => void = () => {},
): Store {
  let current = state;
  return {
    get: () => current,
    set: (next) => {
      current = next;
      onChange(current);
    },
  };
}

export async function sendMessage(
  store: Store,
  text: string,
  fetchFn: FetchLike,
  now: () => number = Date.now,
): Promise<void> {
  const state = store.get();
  if (!canSend(state, text)) return;
  const epoch = state.epoch;
  store.set(beginSend(state, text, now()));
  try {
    const body = await postChat(fetchFn, state.sessionId, text, state.debug);
    store.set(completeSend(store.get(), epoch, body.response, body.trace ?? null, now()));
  } catch (err) {
    store.set(failSend(store.get(), epoch, err instanceof Error ? err.message : String(err)));
  }
}
