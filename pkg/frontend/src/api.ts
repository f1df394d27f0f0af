// Typed client for the reader-study HTTP JSON API.

export interface SessionState {
  session_id: string;
  answered: number;
  total: number;
  closed: boolean;
  done: boolean;
}

export interface CaseView {
  case_id: string;
  type_tag: string;
  slices: Record<string, string>;
  position: Record<string, [number, number]>;
  index: number;
  total: number;
  done: false;
}

export interface DoneView extends SessionState {
  done: true;
}

export type NextResponse = CaseView | DoneView;

export type Verdict = "real" | "synthetic";

export interface ReportRow {
  counts: { tp: number; tn: number; fp: number; fn: number };
  sensitivity: number | null;
  specificity: number | null;
  accuracy: number | null;
  unanswered: number;
}

export interface GroupedReport {
  grouping: string;
  rows: Record<string, ReportRow>;
}

export interface SessionReport {
  total: GroupedReport;
  by_type: GroupedReport;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      const body = await response.text();
      throw new ApiError(response.status, `${path}: ${response.status} ${body}`);
    }
    return (await response.json()) as T;
  }

  createSession(readerId: string, readerLevel: string, seed?: number): Promise<SessionState> {
    return this.request<SessionState>("/api/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ reader_id: readerId, reader_level: readerLevel, seed: seed ?? null }),
    });
  }

  sessionState(sessionId: string): Promise<SessionState> {
    return this.request<SessionState>(`/api/sessions/${sessionId}`);
  }

  nextCase(sessionId: string): Promise<NextResponse> {
    return this.request<NextResponse>(`/api/sessions/${sessionId}/next`);
  }

  submitVerdict(sessionId: string, caseId: string, verdict: Verdict): Promise<SessionState> {
    return this.request<SessionState>(`/api/sessions/${sessionId}/verdicts`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ case_id: caseId, verdict, client_ts: Date.now() / 1000 }),
    });
  }

  closeSession(sessionId: string): Promise<SessionState> {
    return this.request<SessionState>(`/api/sessions/${sessionId}/close`, { method: "POST" });
  }

  sessionReport(sessionId: string): Promise<SessionReport> {
    return this.request<SessionReport>(`/api/sessions/${sessionId}/report`);
  }
}
