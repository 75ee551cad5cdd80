"""Label Judge verdicts, knowledge-base admission, and alignment exports.

Human labels strictly override the score gate in both directions: Good
admits a case the gate rejected, Bad blocks one it passed. Exports are
line-delimited JSON directly consumable by preference-training toolchains;
actual weight updates happen elsewhere.
"""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass
from typing import Optional

from .cotscore import CoTScoreResult
from .engine import AuditStore
from .kb import AdmittedBy
from .model import AnalysisReport, GroundTruth, truth_from_dict, truth_to_dict


class UnknownReport(KeyError):
    pass


class NothingToExport(ValueError):
    pass


class FeedbackLabel(str, enum.Enum):
    GOOD = "Good"
    BAD = "Bad"


class ExportFormat(str, enum.Enum):
    KTO_BINARY = "KtoBinary"
    GRPO_GROUPS = "GrpoGroups"


@dataclass(frozen=True)
class FeedbackRecord:
    report_id: str
    label: FeedbackLabel
    notes: str = ""
    corrected_truth: Optional[GroundTruth] = None
    judge: str = ""
    created_at: int = 0


def feedback_to_dict(rec: FeedbackRecord) -> dict:
    return {
        "report_id": rec.report_id,
        "label": rec.label.value,
        "notes": rec.notes,
        "corrected_truth": truth_to_dict(rec.corrected_truth),
        "judge": rec.judge,
        "created_at": rec.created_at,
    }


def feedback_from_dict(d: dict) -> FeedbackRecord:
    return FeedbackRecord(
        report_id=d["report_id"],
        label=FeedbackLabel(d["label"]),
        notes=d.get("notes", ""),
        corrected_truth=truth_from_dict(d.get("corrected_truth")),
        judge=d.get("judge", ""),
        created_at=int(d.get("created_at", 0)),
    )


class FeedbackStore:
    """Append-only label log; the latest label per report is the active one.

    When an audit store is attached, labels must reference a report in it.
    """

    def __init__(self, path=None, audit: Optional[AuditStore] = None) -> None:
        self._path = path
        self._audit = audit
        self._lock = threading.Lock()
        self._records: list[FeedbackRecord] = []
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if line:
                            self._records.append(feedback_from_dict(json.loads(line)))
            except FileNotFoundError:
                pass

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[FeedbackRecord, ...]:
        return tuple(self._records)

    def record(self, rec: FeedbackRecord) -> str:
        with self._lock:
            if self._audit is not None and rec.report_id not in self._audit:
                raise UnknownReport(f"no audit record for report {rec.report_id}")
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(feedback_to_dict(rec), sort_keys=True,
                                        ensure_ascii=False) + "\n")
                    fh.flush()
            self._records.append(rec)
        return rec.report_id

    def active(self) -> dict[str, FeedbackRecord]:
        out: dict[str, FeedbackRecord] = {}
        for rec in self._records:
            out[rec.report_id] = rec
        return out

    def active_for(self, report_id: str) -> Optional[FeedbackRecord]:
        return self.active().get(report_id)


def record_feedback(rec: FeedbackRecord, store: FeedbackStore) -> str:
    return store.record(rec)


@dataclass(frozen=True)
class AdmissionDecision:
    admit: bool
    reason: str
    admitted_by: Optional[AdmittedBy] = None


def kb_update_decision(
    report: AnalysisReport,
    score: Optional[CoTScoreResult],
    feedback: Optional[FeedbackRecord] = None,
) -> AdmissionDecision:
    """Pure admission rule for the case-update loop.

    Human labels win outright; without one the score gate decides, and a
    case with no usable reference (score None) waits for a human.
    """
    if feedback is not None:
        if feedback.label is FeedbackLabel.GOOD:
            return AdmissionDecision(True, "human Good label", AdmittedBy.HUMAN_GOOD)
        return AdmissionDecision(False, "human Bad label blocks admission")
    if score is None:
        return AdmissionDecision(False, "no reference to gate against; awaiting human label")
    if score.passed:
        return AdmissionDecision(
            True, f"score gate passed (aggregate {score.aggregate:.3f})",
            AdmittedBy.COTSCORE_GATE,
        )
    return AdmissionDecision(False, f"below threshold (aggregate {score.aggregate:.3f})")


@dataclass(frozen=True)
class AlignmentExportConfig:
    format: ExportFormat
    output_path: str
    include_unlabeled: bool = False


@dataclass(frozen=True)
class ExportSummary:
    format: str
    path: str
    count: int
    by_label: dict[str, int]


def export_alignment_datasets(
    audit: AuditStore,
    feedback: FeedbackStore,
    cfg: AlignmentExportConfig,
) -> ExportSummary:
    """Write one JSONL file in the requested trainer format.

    KtoBinary: one line per labeled report with prompt, completion, and the
    binary label. GrpoGroups: one line per case grouping every attempt with
    its recorded score as the reward.
    """
    active = feedback.active()
    lines: list[dict] = []
    by_label = {"good": 0, "bad": 0}
    if cfg.format is ExportFormat.KTO_BINARY:
        for rec in audit.records:
            fb = active.get(rec.report_id)
            if fb is None:
                continue
            lines.append({
                "prompt": rec.prompt,
                "completion": rec.raw_output,
                "label": fb.label is FeedbackLabel.GOOD,
            })
            by_label["good" if fb.label is FeedbackLabel.GOOD else "bad"] += 1
    else:
        for rec in audit.records:
            fb = active.get(rec.report_id)
            if fb is None and not cfg.include_unlabeled:
                continue
            rewards = [a.aggregate for a in rec.attempts if a.aggregate is not None]
            candidates = [a.raw_output for a in rec.attempts if a.aggregate is not None]
            if not rewards:
                continue
            lines.append({
                "prompt": rec.prompt,
                "candidates": candidates,
                "rewards": rewards,
            })
            if fb is not None:
                by_label["good" if fb.label is FeedbackLabel.GOOD else "bad"] += 1
    if not lines:
        raise NothingToExport(f"no records to export as {cfg.format.value}")
    with open(cfg.output_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True, ensure_ascii=False) + "\n")
    return ExportSummary(cfg.format.value, str(cfg.output_path), len(lines), by_label)
