// Thin client for the chat service HTTP API.

export interface TraceCandidate {
  doc_id: number;
  response: string;
  fetch_score: number;
  score: number;
  features: number[];
}

export interface RespondTrace {
  chosen: string;
  candidate_count: number;
  fallback: boolean;
  top: TraceCandidate[];
}

export interface ChatResponseBody {
  response: string;
  trace?: RespondTrace;
}

// Narrow view of fetch so tests can inject a scripted double.
export type FetchLike = (
  url: string,
  init: { method: string; headers: Record<string, string>; body: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export async function postChat(
  fetchFn: FetchLike,
  sessionId: string,
  message: string,
  debug: boolean,
): Promise<ChatResponseBody> {
  const res = await fetchFn("/api/chat", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ session_id: sessionId, message, debug }),
  });
  const body = (await res.json()) as Record<string, unknown>;
  if (!res.ok) {
    const detail = typeof body.error === "string" ? body.error : `HTTP ${res.status}`;
    throw new Error(detail);
  }
  return body as unknown as ChatResponseBody;
}
