// Typed client for the service API. The console holds no authoritative
// state: every displayed value comes from these endpoints.

import type {
  CaseRow,
  CaseStatus,
  FeedbackAck,
  FeedbackLabel,
  KbStats,
  QueueResponse,
  ReportView,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

export type ReportResult =
  | { ready: true; view: ReportView }
  | { ready: false; status: CaseStatus };

async function errorFrom(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(response.status, code, message);
}

export class ConsoleApi {
  private readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;
  private readonly authToken: string;

  constructor(baseUrl: string, options: { fetchFn?: typeof fetch; authToken?: string } = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = options.fetchFn ?? fetch;
    this.authToken = options.authToken ?? "";
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const out: Record<string, string> = { "Content-Type": "application/json", ...extra };
    if (this.authToken) out["Authorization"] = `Bearer ${this.authToken}`;
    return out;
  }

  async listCases(status?: CaseStatus): Promise<CaseRow[]> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    const response = await this.fetchFn(`${this.baseUrl}/cases${query}`);
    if (!response.ok) throw await errorFrom(response);
    const body = (await response.json()) as QueueResponse;
    return body.cases;
  }

  async getReport(caseId: string): Promise<ReportResult> {
    const response = await this.fetchFn(
      `${this.baseUrl}/cases/${encodeURIComponent(caseId)}/report`,
    );
    if (response.status === 202) {
      const body = (await response.json()) as { status: CaseStatus };
      return { ready: false, status: body.status };
    }
    if (!response.ok) throw await errorFrom(response);
    return { ready: true, view: (await response.json()) as ReportView };
  }

  async submitFeedback(
    reportId: string,
    label: FeedbackLabel,
    notes: string,
    idempotencyKey: string,
    judge = "console",
  ): Promise<FeedbackAck> {
    const response = await this.fetchFn(
      `${this.baseUrl}/reports/${encodeURIComponent(reportId)}/feedback`,
      {
        method: "POST",
        headers: this.headers({ "Idempotency-Key": idempotencyKey }),
        body: JSON.stringify({ label, notes, judge }),
      },
    );
    if (!response.ok) throw await errorFrom(response);
    return (await response.json()) as FeedbackAck;
  }

  async kbStats(): Promise<KbStats> {
    const response = await this.fetchFn(`${this.baseUrl}/kb/stats`);
    if (!response.ok) throw await errorFrom(response);
    return (await response.json()) as KbStats;
  }
}
