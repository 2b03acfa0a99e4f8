// Wire types for the chat service JSON API.

export interface TraceCandidate {
  text: string;
  planned: boolean;
  scores: Record<string, number>;
  abusive: boolean;
  conflict: boolean;
  dropped_at: string | null;
}

export interface Trace {
  reply: string;
  selected_index: number | null;
  fallback: boolean;
  stage_counts: Record<string, number>;
  seed?: number;
  candidates: TraceCandidate[];
}

export interface Turn {
  speaker: "user" | "bot";
  text: string;
}

export interface Message extends Turn {
  ts: string;
}

export interface ViewState {
  sessionId: string | null;
  messages: Message[];
  pending: boolean;
  lastTrace: Trace | null;
  inspectorOpen: boolean;
  error: string | null;
  draft: string;
}
