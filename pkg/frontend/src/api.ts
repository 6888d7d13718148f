/** Typed client for the session service HTTP API. */

import { readSse } from "./sse.js";

export type ElementKind = "topic" | "question" | "span";
export type SessionStatus =
  | "generating"
  | "paused"
  | "awaiting_user"
  | "completed"
  | "failed";

export interface WireEvent {
  seq: number;
  type: "created" | "element" | "status" | "action";
  kind?: string; // element event name, e.g. "TopicText"
  payload?: string;
  status?: SessionStatus;
  action?: "accept" | "edit" | "regenerate";
  text?: string;
  cause?: string;
}

export interface SessionInfo {
  session_id: string;
  status: SessionStatus;
  mode: string;
  task: string;
  verified_count: number;
  pending: { kind: ElementKind; text: string } | null;
  case_id: string;
  failure_cause?: string | null;
}

export interface CaseSummary {
  case_id: string;
  n_reports: number;
  chief_complaint: string | null;
}

export interface CaseDetail {
  case_id: string;
  discharge_summary: string;
  radiology_reports: string[];
  target_bhc: string;
  target_di: string;
}

export interface DocumentView {
  document: string;
  segmentation: {
    segments: { heading: string; question: string; span: string }[];
  };
}

export class ActionRejected extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ServiceClient {
  constructor(private baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      const body = await response.text().catch(() => "");
      throw new ActionRejected(response.status, body || response.statusText);
    }
    return (await response.json()) as T;
  }

  listCases(): Promise<CaseSummary[]> {
    return this.request("/cases");
  }

  getCase(caseId: string): Promise<CaseDetail> {
    return this.request(`/cases/${encodeURIComponent(caseId)}`);
  }

  createSession(body: {
    case_id: string;
    c?: string;
    g?: string;
    task?: string;
    mode?: string;
  }): Promise<SessionInfo> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  getSession(sessionId: string): Promise<SessionInfo> {
    return this.request(`/sessions/${sessionId}`);
  }

  postAction(
    sessionId: string,
    action: "accept" | "edit" | "regenerate",
    text?: string,
  ): Promise<SessionInfo> {
    return this.request(`/sessions/${sessionId}/action`, {
      method: "POST",
      body: JSON.stringify(text === undefined ? { type: action } : { type: action, text }),
    });
  }

  getDocument(sessionId: string): Promise<DocumentView> {
    return this.request(`/sessions/${sessionId}/document`);
  }

  /**
   * Stream session events, invoking onEvent per frame in wire order.
   * Resolves when the server closes the stream (terminal status reached).
   */
  async streamEvents(
    sessionId: string,
    since: number,
    onEvent: (event: WireEvent) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    await readSse(
      `${this.baseUrl}/sessions/${sessionId}/events?since=${since}`,
      (frame) => onEvent(JSON.parse(frame.data) as WireEvent),
      signal,
    );
  }
}
