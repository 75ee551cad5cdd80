"""Single-case analysis orchestration.

One pass covers detection, triage and root-cause ranking: mine the logs,
classify the metric shapes, compose the domain text, retrieve similar
historical cases, ask the model once with a rigid output schema, then run
the score-gated rewrite loop. Every case leaves behind one audit record
carrying the full prompt and all attempts.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .cotscore import CoTConfig, CoTScoreResult, score_cot, score_from_dict, score_to_dict, segment_cot
from .domaintext import (
    AblationFlags,
    DomainText,
    SectionId,
    compose_domain_text,
    render_domain_text,
    section_text,
)
from .gateway import ChatRequest, LlmGateway
from .kb import CaseRecord, KnowledgeBase, RetrievalConfig
from .logmine import DrainConfig, detect_novel_templates, frequency_series, mine_templates
from .metricprep import EmptyWindow, PatternRuleConfig, compare_windows, make_finding
from .model import (
    AnalysisReport,
    CaseBundle,
    CoTKind,
    FaultClass,
    FaultKind,
    RootCauseCandidate,
    report_from_dict,
    report_to_dict,
)

log = logging.getLogger(__name__)

REFERENCE_HEADER = "=== HISTORICAL REFERENCE CASES ==="
CURRENT_HEADER = "=== CURRENT CHANGE CASE ==="
MAX_RANKING = 5


class MissingSection(ValueError):
    def __init__(self, section: str) -> None:
        super().__init__(f"required section missing: {section}")
        self.section = section


class MalformedRanking(ValueError):
    pass


class ParseFailure(RuntimeError):
    pass


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    retrieval: RetrievalConfig = RetrievalConfig()
    flags: AblationFlags = AblationFlags()
    cot: CoTConfig = CoTConfig()  # cot.threshold doubles as the rewrite gate
    max_rewrites: int = 2
    task_set: frozenset = frozenset({"ECD", "FT", "RCCA"})
    drain: DrainConfig = DrainConfig()
    rules: PatternRuleConfig = PatternRuleConfig()
    window_seconds: int = 300
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if not (0 <= self.max_rewrites <= 5):
            raise ValueError("max_rewrites must be in [0, 5]")
        unknown = set(self.task_set) - {"ECD", "FT", "RCCA"}
        if unknown:
            raise ValueError(f"unknown tasks: {sorted(unknown)}")
        if "ECD" not in self.task_set:
            raise ValueError("task_set must include ECD")


@dataclass(frozen=True)
class StructuredQuery:
    service: str
    change_type: str
    anomaly_summary: str
    novel_template_digest: str


@dataclass(frozen=True)
class StageOneResult:
    findings: tuple
    comparisons: tuple
    novel: tuple
    domain_text: DomainText


def run_stage_one(bundle: CaseBundle, cfg: InferenceConfig) -> StageOneResult:
    """Telemetry unification: log mining, shape classification, comparisons,
    and the composed domain text."""
    t = bundle.ticket
    pre_table = mine_templates(bundle.pre_change_logs, cfg.drain)
    novel = detect_novel_templates(pre_table, bundle.post_change_logs)
    span = (t.analysis_start, t.analysis_end)
    freq = frequency_series(
        list(bundle.pre_change_logs) + list(bundle.post_change_logs),
        pre_table,
        cfg.window_seconds,
        span,
    )
    findings = []
    for series in list(bundle.metrics) + freq:
        f = make_finding(series, bundle.change_time, cfg.rules)
        if f is not None:
            findings.append(f)
    comparisons = []
    for series in bundle.metrics:
        try:
            comparisons.append(
                compare_windows(
                    series,
                    (t.analysis_start, bundle.change_time),
                    (bundle.change_time, t.analysis_end + 1),
                )
            )
        except EmptyWindow:
            continue
    dt = compose_domain_text(bundle, findings, comparisons, novel, cfg.flags)
    return StageOneResult(tuple(findings), tuple(comparisons), tuple(novel), dt)


# -- structured query --------------------------------------------------------

_EMPTY_BODIES = {"none detected", "none computed"}


def build_query(dt: DomainText) -> StructuredQuery:
    """Condense the domain text into the retrieval query."""
    ticket = section_text(dt, SectionId.TICKET_RECORD)
    service = ""
    change_type = ""
    for line in ticket.splitlines():
        if line.startswith("Service: "):
            service = line[len("Service: "):].strip()
        elif line.startswith("Change type: "):
            change_type = line[len("Change type: "):].strip()
    anomaly_sections = (SectionId.ANOMALY_TIMESTAMPS, SectionId.ANOMALY_CLASSIFICATION)
    no_findings = all(
        section_text(dt, sid).strip().lower() in _EMPTY_BODIES for sid in anomaly_sections
    )
    summary_lines = []
    if not no_findings:
        for sid in anomaly_sections + (SectionId.PRE_POST_COMPARISON,
                                       SectionId.DETAILED_METRIC_FINDINGS):
            body = section_text(dt, sid)
            if body.strip().lower() in _EMPTY_BODIES:
                continue
            for line in body.splitlines():
                line = line.strip()
                if line and not line.startswith("[omitted"):
                    summary_lines.append(line)
    summary = " | ".join(summary_lines)[:512] or "no anomalies detected"
    novel_body = section_text(dt, SectionId.NOVEL_LOG_TEMPLATES)
    digest = "" if novel_body.strip().lower() in _EMPTY_BODIES else novel_body.strip()
    return StructuredQuery(service, change_type, summary, digest)


def render_query(q: StructuredQuery) -> str:
    return (
        f"service={q.service} change_type={q.change_type}\n"
        f"anomalies: {q.anomaly_summary}\n"
        f"novel templates: {q.novel_template_digest or 'none'}"
    )


# -- prompt assembly ---------------------------------------------------------

_FAULT_NAMES = ", ".join(k.value for k in FaultKind)

_COT_INSTRUCTIONS = """Then explain your reasoning in these sections, each starting on its own line:
Observation: what the telemetry shows
AnomalyAnalysis: how the signals relate to the change
FaultClassification: why the fault class fits
RootCause: the causal chain to the most likely root cause
Mitigation: recommended next actions"""

_NO_COT_INSTRUCTIONS = "Reply with the answer fields above only. Do not include reasoning sections."


def build_system_prompt(cfg: InferenceConfig) -> str:
    tasks = ["decide whether the change introduced a failure"]
    if "FT" in cfg.task_set:
        tasks.append("classify the fault")
    if "RCCA" in cfg.task_set:
        tasks.append("rank the most likely root causes")
    lines = [
        "You are an expert software change analyst. Review the change case below and "
        + "; ".join(tasks) + ".",
        "Produce exactly this layout:",
        "VERDICT: erroneous or normal",
        "CONFIDENCE: a number between 0 and 1",
    ]
    if "FT" in cfg.task_set:
        lines.append(f"FAULT_CLASS: one of {_FAULT_NAMES} (only when the verdict is erroneous)")
    if "RCCA" in cfg.task_set:
        lines.append(
            'ROOT_CAUSES: numbered lines "1. <cause> -- <rationale>", at most 5, '
            "most likely first (only when the verdict is erroneous)"
        )
    lines.append(_NO_COT_INSTRUCTIONS if cfg.flags.drop_cot else _COT_INSTRUCTIONS)
    return "\n".join(lines)


def render_case_summary(rec: CaseRecord) -> str:
    rep = rec.report
    fault = rep.fault_class.label if rep.fault_class else "none"
    root = rep.root_cause_ranking[0].candidate if rep.root_cause_ranking else "n/a"
    patterns = "n/a"
    mitigation = "n/a"
    for sec in rep.cot:
        if sec.kind is CoTKind.ANOMALY_ANALYSIS:
            patterns = sec.text.splitlines()[0]
        elif sec.kind is CoTKind.MITIGATION:
            mitigation = sec.text.splitlines()[0]
    return (
        f"--- reference case {rec.case_id} ---\n"
        f"fault labels: erroneous={str(rep.ecd_verdict).lower()} fault={fault}\n"
        f"anomaly patterns: {patterns}\n"
        f"root cause path: {root}\n"
        f"mitigation: {mitigation}"
    )


def build_user_prompt(
    retrieved: Sequence[tuple[CaseRecord, float]],
    domain_text_str: str,
    flags: AblationFlags,
) -> str:
    parts = []
    if not flags.drop_rag:
        parts.append(REFERENCE_HEADER)
        if retrieved:
            parts.extend(render_case_summary(rec) for rec, _ in retrieved)
        else:
            parts.append("(no historical cases retrieved)")
    parts.append(CURRENT_HEADER)
    parts.append(domain_text_str)
    return "\n\n".join(parts)


# -- model output parsing ----------------------------------------------------

_VERDICT_RE = re.compile(r"^VERDICT:\s*(\S+)", re.MULTILINE)
_CONFIDENCE_RE = re.compile(r"^CONFIDENCE:\s*([0-9.eE+-]+)", re.MULTILINE)
_FAULT_RE = re.compile(r"^FAULT_CLASS:\s*(.+)$", re.MULTILINE)
_RANK_ITEM_RE = re.compile(r"^\s*(\d+)[.)]\s*(.+)$")

_TRUE_WORDS = {"erroneous", "true", "yes", "failed", "faulty"}
_FALSE_WORDS = {"normal", "false", "no", "ok", "healthy"}


def parse_report(model_output: str) -> AnalysisReport:
    """Parse the rigid sectioned output into a report.

    Unknown lines are ignored. A normal verdict clears any fault class or
    ranking the model may have emitted anyway.
    """
    m = _VERDICT_RE.search(model_output)
    if m is None:
        raise MissingSection("VERDICT")
    word = m.group(1).strip().lower().rstrip(".")
    if word in _TRUE_WORDS:
        verdict = True
    elif word in _FALSE_WORDS:
        verdict = False
    else:
        raise MissingSection("VERDICT")

    conf = 0.5
    m = _CONFIDENCE_RE.search(model_output)
    if m is not None:
        try:
            conf = min(max(float(m.group(1)), 0.0), 1.0)
        except ValueError:
            conf = 0.5

    fault: Optional[FaultClass] = None
    m = _FAULT_RE.search(model_output)
    if m is not None:
        fault = FaultClass.from_label(m.group(1).strip())

    ranking: list[RootCauseCandidate] = []
    lines = model_output.splitlines()
    in_block = False
    block_lines = 0
    for line in lines:
        if line.startswith("ROOT_CAUSES"):
            in_block = True
            continue
        if in_block:
            if not line.strip():
                continue
            item = _RANK_ITEM_RE.match(line)
            if item is None:
                in_block = False
                continue
            block_lines += 1
            body = item.group(2).strip()
            if " -- " in body:
                cand, rationale = body.split(" -- ", 1)
            else:
                cand, rationale = body, ""
            cand = cand.strip()
            if cand and all(cand.lower() != r.candidate.lower() for r in ranking):
                ranking.append(RootCauseCandidate(cand, rationale.strip()))
    if "ROOT_CAUSES" in model_output and block_lines == 0 and verdict:
        raise MalformedRanking("ROOT_CAUSES block present but no numbered candidates")
    if len(ranking) > MAX_RANKING:
        log.warning("root cause ranking truncated from %d to %d", len(ranking), MAX_RANKING)
        ranking = ranking[:MAX_RANKING]

    cot = tuple(_parse_cot(model_output))
    if not verdict:
        fault = None
        ranking = []
    return AnalysisReport(
        ticket_id="",
        ecd_verdict=verdict,
        ecd_confidence=conf,
        fault_class=fault,
        root_cause_ranking=tuple(ranking),
        cot=cot,
        raw_model_output=model_output,
    )


_COT_START_RE = re.compile(
    r"^\s*(?:#+\s*)?(observation|anomalyanalysis|anomaly analysis|faultclassification|"
    r"fault classification|rootcause|root cause|mitigation)\s*[:：]",
    re.IGNORECASE,
)


def _parse_cot(model_output: str):
    lines = model_output.splitlines()
    for i, line in enumerate(lines):
        if _COT_START_RE.match(line):
            return segment_cot("\n".join(lines[i:]))
    return []


# -- audit trail -------------------------------------------------------------

@dataclass
class AttemptRecord:
    raw_output: str
    aggregate: Optional[float]


@dataclass
class AuditRecord:
    """One structured record per analyzed case."""

    report_id: str
    domain_text: str
    query: str
    retrieved_ids: tuple[str, ...]
    system_prompt: str
    user_prompt: str
    raw_output: str
    report: AnalysisReport
    cot_score: Optional[CoTScoreResult]
    attempts: tuple[AttemptRecord, ...]
    elapsed_ms: int = 0

    @property
    def prompt(self) -> str:
        return self.system_prompt + "\n\n" + self.user_prompt

    def to_dict(self, *, canonical: bool = False) -> dict:
        d = {
            "report_id": self.report_id,
            "domain_text": self.domain_text,
            "query": self.query,
            "retrieved_ids": list(self.retrieved_ids),
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "raw_output": self.raw_output,
            "report": report_to_dict(self.report, canonical=canonical),
            "cot_score": None if self.cot_score is None else score_to_dict(self.cot_score),
            "attempts": [
                {"raw_output": a.raw_output, "aggregate": a.aggregate} for a in self.attempts
            ],
        }
        if not canonical:
            d["elapsed_ms"] = self.elapsed_ms
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AuditRecord":
        return cls(
            report_id=d["report_id"],
            domain_text=d["domain_text"],
            query=d["query"],
            retrieved_ids=tuple(d.get("retrieved_ids", [])),
            system_prompt=d["system_prompt"],
            user_prompt=d["user_prompt"],
            raw_output=d["raw_output"],
            report=report_from_dict(d["report"]),
            cot_score=None if d.get("cot_score") is None else score_from_dict(d["cot_score"]),
            attempts=tuple(
                AttemptRecord(a["raw_output"], a.get("aggregate"))
                for a in d.get("attempts", [])
            ),
            elapsed_ms=int(d.get("elapsed_ms", 0)),
        )


class AuditStore:
    """Thread-safe collection of audit records, persistable as JSONL."""

    def __init__(self) -> None:
        self._records: dict[str, AuditRecord] = {}
        self._lock = threading.Lock()

    def add(self, rec: AuditRecord) -> None:
        with self._lock:
            self._records[rec.report_id] = rec

    def get(self, report_id: str) -> Optional[AuditRecord]:
        return self._records.get(report_id)

    def __contains__(self, report_id: str) -> bool:
        return report_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[AuditRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def save(self, path, *, canonical: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict(canonical=canonical), sort_keys=True,
                                    ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path) -> "AuditStore":
        store = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    store.add(AuditRecord.from_dict(json.loads(line)))
        return store


# -- the analysis pass -------------------------------------------------------

def _complete(gw: LlmGateway, system: str, user: str, cfg: InferenceConfig) -> str:
    try:
        return gw.complete(ChatRequest(system, user, temperature=0.0,
                                       max_tokens=cfg.max_tokens))
    except Exception as exc:  # gateway errors surface as ModelError
        raise ModelError(str(exc)) from exc


def _deficiency_list(score: CoTScoreResult, threshold: float) -> str:
    lines = []
    for kind, value in score.per_section.items():
        if kind in score.missing_sections:
            lines.append(f"{kind.value}: missing entirely")
        elif value < threshold:
            lines.append(f"{kind.value}: scored {value:.2f}, below threshold {threshold:.2f}")
    if not lines:
        lines.append(f"aggregate {score.aggregate:.2f} below threshold {threshold:.2f}")
    return "\n".join(lines)


def refine_report(
    report: AnalysisReport,
    reference_cases: Sequence[tuple[CaseRecord, float]],
    gateway: LlmGateway,
    cfg: InferenceConfig,
    *,
    system_prompt: str,
    user_prompt: str,
) -> tuple[AnalysisReport, Optional[CoTScoreResult], list[AttemptRecord]]:
    """Score the report against the best-matching reference and rewrite while
    it stays under the gate. Returns the best attempt seen; a None score
    means no reference was available and the gate was skipped."""
    reference = next(
        (rec for rec, _ in reference_cases if rec.report.cot), None
    )
    if reference is None:
        return report, None, [AttemptRecord(report.raw_model_output, None)]

    def gate(rep: AnalysisReport) -> CoTScoreResult:
        return score_cot(rep.cot, reference.report.cot, cfg.cot, gateway.embed)

    best = report
    best_score = gate(report)
    attempts = [AttemptRecord(report.raw_model_output, best_score.aggregate)]
    current_raw = report.raw_model_output
    current_score = best_score
    while not current_score.passed and len(attempts) <= cfg.max_rewrites:
        rewrite_user = (
            user_prompt
            + "\n\n=== PREVIOUS ATTEMPT ===\n" + current_raw
            + "\n\n=== DEFICIENCIES ===\n" + _deficiency_list(current_score, cfg.cot.threshold)
            + "\n\nRewrite the complete answer in the required format, improving the "
            "deficient reasoning sections."
        )
        raw = _complete(gateway, system_prompt, rewrite_user, cfg)
        try:
            candidate = parse_report(raw)
            candidate_score = gate(candidate)
        except (MissingSection, MalformedRanking):
            candidate = None
            candidate_score = None
        if candidate is not None and candidate_score is not None:
            attempts.append(AttemptRecord(raw, candidate_score.aggregate))
            if candidate_score.aggregate > best_score.aggregate:
                best, best_score = candidate, candidate_score
            current_score = candidate_score
        else:
            attempts.append(AttemptRecord(raw, 0.0))
        current_raw = raw
    return best, best_score, attempts


def analyze_case(
    bundle: CaseBundle,
    kb: Optional[KnowledgeBase],
    gateway: LlmGateway,
    cfg: InferenceConfig = InferenceConfig(),
    *,
    audit: Optional[AuditStore] = None,
    clock=time.perf_counter,
) -> AnalysisReport:
    """Full pipeline for one case; appends one audit record when a store is
    given and returns the final report."""
    t0 = clock()
    stage1 = run_stage_one(bundle, cfg)
    dt_str = render_domain_text(stage1.domain_text)
    query = build_query(stage1.domain_text)
    query_str = render_query(query)

    retrieved: list[tuple[CaseRecord, float]] = []
    if not cfg.flags.drop_rag and kb is not None and len(kb) > 0:
        retrieved = kb.retrieve(query_str, cfg.retrieval)

    system = build_system_prompt(cfg)
    user = build_user_prompt(retrieved, dt_str, cfg.flags)

    raw = _complete(gateway, system, user, cfg)
    report: Optional[AnalysisReport] = None
    attempts: list[AttemptRecord] = []
    reasks = 0
    last_err: Optional[Exception] = None
    while report is None:
        try:
            report = parse_report(raw)
        except (MissingSection, MalformedRanking) as exc:
            attempts.append(AttemptRecord(raw, None))
            last_err = exc
            reasks += 1
            if reasks > cfg.max_rewrites:
                raise ParseFailure(f"unparseable output after {reasks} attempts: {exc}") from exc
            reask_user = (
                user
                + "\n\n=== FORMAT ERROR ===\nYour previous reply could not be parsed "
                + f"({exc}). Reply again following the required format exactly."
            )
            raw = _complete(gateway, system, reask_user, cfg)

    score: Optional[CoTScoreResult] = None
    if not cfg.flags.drop_cot:
        report, score, refine_attempts = refine_report(
            report, retrieved, gateway, cfg,
            system_prompt=system, user_prompt=user,
        )
        attempts.extend(refine_attempts)
    else:
        attempts.append(AttemptRecord(raw, None))

    elapsed_ms = max(int((clock() - t0) * 1000), 0)
    report = replace(report, ticket_id=bundle.ticket.ticket_id, elapsed_ms=elapsed_ms)

    if audit is not None:
        audit.add(AuditRecord(
            report_id=bundle.ticket.ticket_id,
            domain_text=dt_str,
            query=query_str,
            retrieved_ids=tuple(rec.case_id for rec, _ in retrieved),
            system_prompt=system,
            user_prompt=user,
            raw_output=report.raw_model_output,
            report=report,
            cot_score=score,
            attempts=tuple(attempts),
            elapsed_ms=elapsed_ms,
        ))
    return report
