// Review-queue state machine: pure transitions over API data, no DOM.

import { ApiError, ConsoleApi } from "./api.js";
import type { CaseRow, FeedbackLabel, ReportView } from "./types.js";

export type QueueFilter = "all" | "review" | "gated" | "admitted";

export interface ConsoleState {
  filter: QueueFilter;
  rows: CaseRow[];
  selected: ReportView | null;
  banner: string | null;
}

// "review" = finished cases still waiting on a verdict or gate outcome
export function applyFilter(rows: CaseRow[], filter: QueueFilter): CaseRow[] {
  switch (filter) {
    case "all":
      return rows;
    case "review":
      return rows.filter(
        (r) => r.status === "Done" && (r.admission === "pending" || r.admission === "rejected"),
      );
    case "gated":
      return rows.filter((r) => r.status === "Done" && r.admission === "rejected");
    case "admitted":
      return rows.filter((r) => r.admission === "admitted");
  }
}

export class ReviewQueue {
  private readonly api: ConsoleApi;
  private readonly makeNonce: () => string;
  // stable idempotency key per (report, label) until the requested label
  // changes, so an accidental double submit replays instead of re-recording
  private readonly verdictKeys = new Map<string, { label: FeedbackLabel; key: string }>();
  state: ConsoleState = { filter: "all", rows: [], selected: null, banner: null };

  constructor(api: ConsoleApi, makeNonce: () => string = () => Math.random().toString(36).slice(2)) {
    this.api = api;
    this.makeNonce = makeNonce;
  }

  verdictKey(reportId: string, label: FeedbackLabel): string {
    const previous = this.verdictKeys.get(reportId);
    if (previous && previous.label === label) return previous.key;
    const key = `${reportId}:${label}:${this.makeNonce()}`;
    this.verdictKeys.set(reportId, { label, key });
    return key;
  }

  setFilter(filter: QueueFilter): ConsoleState {
    this.state = { ...this.state, filter };
    return this.state;
  }

  async refresh(): Promise<ConsoleState> {
    try {
      const rows = await this.api.listCases();
      this.state = { ...this.state, rows, banner: null };
    } catch (err) {
      this.state = { ...this.state, banner: bannerText(err) };
    }
    return this.state;
  }

  async open(caseId: string): Promise<ConsoleState> {
    try {
      const result = await this.api.getReport(caseId);
      if (result.ready) {
        this.state = { ...this.state, selected: result.view, banner: null };
      } else {
        this.state = { ...this.state, banner: `case ${caseId} still ${result.status}` };
      }
    } catch (err) {
      this.state = { ...this.state, banner: bannerText(err) };
    }
    return this.state;
  }

  async submitVerdict(
    reportId: string,
    label: FeedbackLabel,
    notes = "",
  ): Promise<ConsoleState> {
    try {
      await this.api.submitFeedback(reportId, label, notes, this.verdictKey(reportId, label));
      // re-read authoritative state rather than patching locally
      await this.refresh();
      if (this.state.selected?.case_id === reportId) {
        await this.open(reportId);
      }
    } catch (err) {
      this.state = { ...this.state, banner: bannerText(err) };
    }
    return this.state;
  }
}

export function bannerText(err: unknown): string {
  if (err instanceof ApiError) return `API error ${err.status} (${err.code}): ${err.message}`;
  if (err instanceof Error) return `connection error: ${err.message}`;
  return "connection error";
}
