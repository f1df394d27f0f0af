// Session state machine: one case on screen at a time, verdicts delivered
// exactly once even across network failures (server submits are idempotent,
// failed submits are queued and retried before anything else proceeds).

import { ApiClient, CaseView, NextResponse, SessionReport, SessionState, Verdict } from "./api.js";

export type Phase = "idle" | "case" | "submitting" | "finished" | "report" | "error";

export interface ControllerEvents {
  onCase?: (view: CaseView) => void;
  onProgress?: (answered: number, total: number) => void;
  onFinished?: (state: SessionState) => void;
  onReport?: (report: SessionReport) => void;
  onError?: (message: string, retryable: boolean) => void;
}

interface QueuedVerdict {
  caseId: string;
  verdict: Verdict;
}

export class SessionController {
  phase: Phase = "idle";
  sessionId = "";
  current: CaseView | null = null;
  answered = 0;
  total = 0;
  private queue: QueuedVerdict[] = [];

  constructor(
    private api: ApiClient,
    private events: ControllerEvents = {},
    private maxRetries = 5,
  ) {}

  async start(readerId: string, readerLevel: string, seed?: number): Promise<void> {
    const state = await this.api.createSession(readerId, readerLevel, seed);
    this.sessionId = state.session_id;
    this.answered = state.answered;
    this.total = state.total;
    await this.advance();
  }

  async resume(sessionId: string): Promise<void> {
    const state = await this.api.sessionState(sessionId);
    this.sessionId = state.session_id;
    this.answered = state.answered;
    this.total = state.total;
    await this.advance();
  }

  private async advance(): Promise<void> {
    const next: NextResponse = await this.api.nextCase(this.sessionId);
    if (next.done) {
      this.phase = "finished";
      this.current = null;
      this.events.onFinished?.(next as SessionState);
      return;
    }
    this.current = next;
    this.phase = "case";
    this.events.onCase?.(next);
    this.events.onProgress?.(this.answered, this.total);
  }

  /** Submit the verdict for the displayed case, then advance. Returns false
   * when there is no case on screen or a submit is already in flight. */
  async submit(verdict: Verdict): Promise<boolean> {
    if (this.phase !== "case" || this.current === null) {
      return false;
    }
    const caseId = this.current.case_id;
    this.phase = "submitting";
    this.queue.push({ caseId, verdict });
    await this.flushQueue();
    await this.advance();
    return true;
  }

  /** Deliver queued verdicts in order; retries transient failures. The server
   * deduplicates repeats, so a retry after an ambiguous failure cannot
   * double-count. */
  private async flushQueue(): Promise<void> {
    while (this.queue.length > 0) {
      const item = this.queue[0];
      let delivered = false;
      let lastError = "";
      for (let attempt = 0; attempt < this.maxRetries && !delivered; attempt++) {
        try {
          const state = await this.api.submitVerdict(this.sessionId, item.caseId, item.verdict);
          this.answered = state.answered;
          this.total = state.total;
          delivered = true;
        } catch (err) {
          lastError = String(err);
          this.events.onError?.(`submit failed (attempt ${attempt + 1}): ${lastError}`, true);
        }
      }
      if (!delivered) {
        this.phase = "error";
        this.events.onError?.(`verdict for ${item.caseId} undeliverable: ${lastError}`, false);
        throw new Error(lastError);
      }
      this.queue.shift();
    }
  }

  async closeAndReport(): Promise<SessionReport> {
    await this.api.closeSession(this.sessionId);
    const report = await this.api.sessionReport(this.sessionId);
    this.phase = "report";
    this.events.onReport?.(report);
    return report;
  }
}
