// DTOs mirroring the service API (see ../docs/formats.md).

export type FeedbackLabel = "Good" | "Bad";

export type CaseStatus = "Pending" | "Analyzing" | "Done" | "Failed";

export type AdmissionState = "pending" | "admitted" | "rejected" | "revoked";

export interface CaseRow {
  case_id: string;
  status: CaseStatus;
  submitted_at: number;
  service: string;
  admission: AdmissionState;
}

export interface QueueResponse {
  cases: CaseRow[];
}

export interface FaultClass {
  kind: string;
  detail: string;
}

export interface RootCauseCandidate {
  candidate: string;
  rationale: string;
}

export interface CotSection {
  kind: string;
  text: string;
}

export interface Report {
  ticket_id: string;
  ecd_verdict: boolean;
  ecd_confidence: number;
  fault_class: FaultClass | null;
  root_cause_ranking: RootCauseCandidate[];
  cot: CotSection[];
  raw_model_output?: string;
  elapsed_ms?: number;
}

export interface CotScore {
  per_section: Record<string, number>;
  aggregate: number;
  passed: boolean;
  missing_sections: string[];
}

export interface Admission {
  state: AdmissionState;
  reason: string;
}

export interface FeedbackState {
  label: FeedbackLabel;
  notes: string;
  judge: string;
}

export interface ReportView {
  case_id: string;
  status: CaseStatus;
  report: Report;
  cot_score: CotScore | null;
  cot_weights: Record<string, number>;
  retrieved_ids: string[];
  recommended_action: string | null;
  admission: Admission;
  feedback: FeedbackState | null;
}

export interface FeedbackAck {
  report_id: string;
  active_label: FeedbackLabel;
  admission: Admission;
}

export interface KbStats {
  records: number;
  by_admitted: Record<string, number>;
  embedding_dim: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail?: unknown;
}
