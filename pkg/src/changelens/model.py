"""Shared domain types for change cases and analysis reports.

All value types here are frozen dataclasses: safe to share across threads
and usable as fixture constants in tests. Constructors stay permissive so
that malformed data can be represented and then reported by
``validate_bundle``; validation results are data, not exceptions.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence


class ChangeType(str, enum.Enum):
    CONFIG_CHANGE = "ConfigChange"
    CODE_DEPLOY = "CodeDeploy"
    PATCH_FIX = "PatchFix"
    FEATURE_ROLLOUT = "FeatureRollout"
    OTHER = "Other"


class TicketStatus(str, enum.Enum):
    PENDING = "Pending"
    ANALYZING = "Analyzing"
    DONE = "Done"


class FaultKind(str, enum.Enum):
    RESOURCE_EXHAUSTION = "ResourceExhaustion"
    CONFIG_ERROR = "ConfigError"
    CODE_DEFECT = "CodeDefect"
    DEPENDENCY_FAILURE = "DependencyFailure"
    NETWORK_ISSUE = "NetworkIssue"
    DATA_ISSUE = "DataIssue"
    OTHER = "Other"


_FAULT_ALIASES = {re.sub(r"[^a-z]", "", k.value.lower()): k for k in FaultKind}


@dataclass(frozen=True)
class FaultClass:
    """Closed fault taxonomy; ``Other`` carries an explanatory detail."""

    kind: FaultKind
    detail: str = ""

    @property
    def label(self) -> str:
        if self.kind is FaultKind.OTHER and self.detail:
            return f"Other({self.detail})"
        return self.kind.value

    @classmethod
    def from_label(cls, label: str) -> "FaultClass":
        """Map a free-form label onto the taxonomy, defaulting to Other."""
        key = re.sub(r"[^a-z]", "", label.lower())
        kind = _FAULT_ALIASES.get(key)
        if kind is None:
            return cls(FaultKind.OTHER, detail=label.strip())
        return cls(kind)


class CoTKind(str, enum.Enum):
    OBSERVATION = "Observation"
    ANOMALY_ANALYSIS = "AnomalyAnalysis"
    FAULT_CLASSIFICATION = "FaultClassification"
    ROOT_CAUSE = "RootCause"
    MITIGATION = "Mitigation"


COT_KIND_ORDER: tuple[CoTKind, ...] = (
    CoTKind.OBSERVATION,
    CoTKind.ANOMALY_ANALYSIS,
    CoTKind.FAULT_CLASSIFICATION,
    CoTKind.ROOT_CAUSE,
    CoTKind.MITIGATION,
)


@dataclass(frozen=True)
class ChangeTicket:
    ticket_id: str
    service: str
    change_type: ChangeType
    submit_time: int
    analysis_start: int
    analysis_end: int
    description: str = ""
    status: TicketStatus = TicketStatus.PENDING


@dataclass(frozen=True)
class MetricSeries:
    name: str
    unit: str
    timestamps: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamps", tuple(int(t) for t in self.timestamps))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class LogEvent:
    timestamp: int
    message: str


@dataclass(frozen=True)
class GroundTruth:
    erroneous: bool
    fault_type: Optional[FaultClass] = None
    root_cause: Optional[str] = None
    resolution: Optional[str] = None


@dataclass(frozen=True)
class CaseBundle:
    """One change case: ticket plus the telemetry around the change point."""

    ticket: ChangeTicket
    metrics: tuple[MetricSeries, ...]
    pre_change_logs: tuple[LogEvent, ...]
    post_change_logs: tuple[LogEvent, ...]
    change_time: int
    ground_truth: Optional[GroundTruth] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "pre_change_logs", tuple(self.pre_change_logs))
        object.__setattr__(self, "post_change_logs", tuple(self.post_change_logs))


@dataclass(frozen=True)
class CoTSection:
    kind: CoTKind
    text: str


@dataclass(frozen=True)
class RootCauseCandidate:
    candidate: str
    rationale: str = ""


@dataclass(frozen=True)
class AnalysisReport:
    """Structured model output for one analyzed case."""

    ticket_id: str
    ecd_verdict: bool
    ecd_confidence: float
    fault_class: Optional[FaultClass] = None
    root_cause_ranking: tuple[RootCauseCandidate, ...] = ()
    cot: tuple[CoTSection, ...] = ()
    raw_model_output: str = ""
    elapsed_ms: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "root_cause_ranking", tuple(self.root_cause_ranking))
        object.__setattr__(self, "cot", tuple(self.cot))


@dataclass(frozen=True)
class Violation:
    path: str
    message: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_bundle(bundle: CaseBundle) -> ValidationResult:
    """Check every type invariant of a case bundle.

    Pure: the same bundle always yields the identical violation list, in
    traversal order. Violations are returned, never raised.
    """
    out: list[Violation] = []
    t = bundle.ticket
    if not t.ticket_id.strip():
        out.append(Violation("ticket.ticket_id", "ticket_id empty"))
    if not (t.submit_time <= t.analysis_start <= t.analysis_end):
        out.append(
            Violation(
                "ticket",
                "times out of order: require submit_time <= analysis_start <= analysis_end",
            )
        )
    for i, m in enumerate(bundle.metrics):
        path = f"metrics[{i}]"
        if len(m.timestamps) != len(m.values):
            out.append(Violation(path, "length mismatch between timestamps and values"))
        if any(b <= a for a, b in zip(m.timestamps, m.timestamps[1:])):
            out.append(Violation(f"{path}.timestamps", "timestamps not strictly increasing"))
        if any(not math.isfinite(v) for v in m.values):
            out.append(Violation(f"{path}.values", "non-finite value"))
    for side, events in (("pre_change_logs", bundle.pre_change_logs),
                         ("post_change_logs", bundle.post_change_logs)):
        for i, ev in enumerate(events):
            if not ev.message.strip():
                out.append(Violation(f"{side}[{i}].message", "empty log message"))
    if not (t.submit_time <= bundle.change_time <= t.analysis_end):
        out.append(Violation("change_time", "change_time outside [submit_time, analysis_end]"))
    for i, ev in enumerate(bundle.pre_change_logs):
        if ev.timestamp >= bundle.change_time:
            out.append(Violation(f"pre_change_logs[{i}]", "log at or after change_time"))
    for i, ev in enumerate(bundle.post_change_logs):
        if ev.timestamp < bundle.change_time:
            out.append(Violation(f"post_change_logs[{i}]", "log before change_time"))
    gt = bundle.ground_truth
    if gt is not None and not gt.erroneous:
        if gt.fault_type is not None:
            out.append(Violation("ground_truth.fault_type", "fault_type set on non-erroneous case"))
        if gt.root_cause is not None:
            out.append(Violation("ground_truth.root_cause", "root_cause set on non-erroneous case"))
    return ValidationResult(tuple(out))


def validate_corpus(bundles: Sequence[CaseBundle]) -> ValidationResult:
    """Validate every bundle plus cross-case ticket_id uniqueness."""
    out: list[Violation] = []
    seen: dict[str, int] = {}
    for i, b in enumerate(bundles):
        res = validate_bundle(b)
        out.extend(Violation(f"[{i}].{v.path}", v.message) for v in res.violations)
        tid = b.ticket.ticket_id
        if tid in seen:
            out.append(Violation(f"[{i}].ticket.ticket_id", f"duplicate ticket_id (first at [{seen[tid]}])"))
        else:
            seen[tid] = i
    return ValidationResult(tuple(out))


# ---------------------------------------------------------------------------
# Wire schema (see docs/formats.md)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fault_to_dict(fc: Optional[FaultClass]) -> Optional[dict]:
    if fc is None:
        return None
    return {"kind": fc.kind.value, "detail": fc.detail}


def fault_from_dict(d: Optional[Mapping[str, Any]]) -> Optional[FaultClass]:
    if d is None:
        return None
    return FaultClass(FaultKind(d["kind"]), d.get("detail", ""))


def truth_to_dict(gt: Optional[GroundTruth]) -> Optional[dict]:
    if gt is None:
        return None
    return {
        "erroneous": gt.erroneous,
        "fault_type": fault_to_dict(gt.fault_type),
        "root_cause": gt.root_cause,
        "resolution": gt.resolution,
    }


def truth_from_dict(d: Optional[Mapping[str, Any]]) -> Optional[GroundTruth]:
    if d is None:
        return None
    return GroundTruth(
        erroneous=bool(d["erroneous"]),
        fault_type=fault_from_dict(d.get("fault_type")),
        root_cause=d.get("root_cause"),
        resolution=d.get("resolution"),
    )


def bundle_to_dict(bundle: CaseBundle) -> dict:
    t = bundle.ticket
    return {
        "ticket": {
            "ticket_id": t.ticket_id,
            "service": t.service,
            "change_type": t.change_type.value,
            "submit_time": t.submit_time,
            "analysis_start": t.analysis_start,
            "analysis_end": t.analysis_end,
            "description": t.description,
            "status": t.status.value,
        },
        "metrics": [
            {"name": m.name, "unit": m.unit,
             "timestamps": list(m.timestamps), "values": list(m.values)}
            for m in bundle.metrics
        ],
        "pre_change_logs": [{"timestamp": e.timestamp, "message": e.message}
                            for e in bundle.pre_change_logs],
        "post_change_logs": [{"timestamp": e.timestamp, "message": e.message}
                             for e in bundle.post_change_logs],
        "change_time": bundle.change_time,
        "ground_truth": truth_to_dict(bundle.ground_truth),
    }


def bundle_from_dict(d: Mapping[str, Any]) -> CaseBundle:
    td = d["ticket"]
    ticket = ChangeTicket(
        ticket_id=td["ticket_id"],
        service=td["service"],
        change_type=ChangeType(td["change_type"]),
        submit_time=int(td["submit_time"]),
        analysis_start=int(td["analysis_start"]),
        analysis_end=int(td["analysis_end"]),
        description=td.get("description", ""),
        status=TicketStatus(td.get("status", "Pending")),
    )
    return CaseBundle(
        ticket=ticket,
        metrics=tuple(
            MetricSeries(m["name"], m.get("unit", ""), tuple(m["timestamps"]), tuple(m["values"]))
            for m in d.get("metrics", [])
        ),
        pre_change_logs=tuple(LogEvent(int(e["timestamp"]), e["message"])
                              for e in d.get("pre_change_logs", [])),
        post_change_logs=tuple(LogEvent(int(e["timestamp"]), e["message"])
                               for e in d.get("post_change_logs", [])),
        change_time=int(d["change_time"]),
        ground_truth=truth_from_dict(d.get("ground_truth")),
    )


def report_to_dict(report: AnalysisReport, *, canonical: bool = False) -> dict:
    """Serialize a report. ``canonical=True`` drops wall-clock fields so the
    result is byte-stable across identical runs."""
    d: dict[str, Any] = {
        "ticket_id": report.ticket_id,
        "ecd_verdict": report.ecd_verdict,
        "ecd_confidence": report.ecd_confidence,
        "fault_class": fault_to_dict(report.fault_class),
        "root_cause_ranking": [
            {"candidate": r.candidate, "rationale": r.rationale}
            for r in report.root_cause_ranking
        ],
        "cot": [{"kind": s.kind.value, "text": s.text} for s in report.cot],
        "raw_model_output": report.raw_model_output,
    }
    if not canonical:
        d["elapsed_ms"] = report.elapsed_ms
    return d


def report_from_dict(d: Mapping[str, Any]) -> AnalysisReport:
    return AnalysisReport(
        ticket_id=d["ticket_id"],
        ecd_verdict=bool(d["ecd_verdict"]),
        ecd_confidence=float(d["ecd_confidence"]),
        fault_class=fault_from_dict(d.get("fault_class")),
        root_cause_ranking=tuple(
            RootCauseCandidate(r["candidate"], r.get("rationale", ""))
            for r in d.get("root_cause_ranking", [])
        ),
        cot=tuple(CoTSection(CoTKind(s["kind"]), s["text"]) for s in d.get("cot", [])),
        raw_model_output=d.get("raw_model_output", ""),
        elapsed_ms=int(d.get("elapsed_ms", 0)),
    )


def load_bundle(path) -> CaseBundle:
    with open(path, "r", encoding="utf-8") as fh:
        return bundle_from_dict(json.load(fh))


def save_bundle(bundle: CaseBundle, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle_to_dict(bundle), fh, indent=2, ensure_ascii=False)
        fh.write("\n")
