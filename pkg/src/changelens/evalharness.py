"""Task metrics, benchmark runs over ablation variants, and the cold-start
and feedback-ratio sweeps.

Root-cause hits use normalized exact string match by default (lowercase,
trimmed, punctuation stripped); substring matching is available as an
explicitly lenient mode. Fault triage is macro-averaged over the classes
observed in truth or predictions.
"""

from __future__ import annotations

import re
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from .domaintext import AblationFlags
from .engine import (
    AuditStore,
    InferenceConfig,
    analyze_case,
    build_system_prompt,
    build_user_prompt,
    parse_report,
    render_domain_text,
    run_stage_one,
)
from .feedback import FeedbackLabel, FeedbackRecord, FeedbackStore
from .gateway import LlmGateway
from .kb import AdmittedBy, KnowledgeBase
from .model import AnalysisReport, CaseBundle, GroundTruth
from .synth import scripted_reply


class Misaligned(ValueError):
    pass


@dataclass(frozen=True)
class TaskScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsTable:
    ecd: TaskScores
    ft: TaskScores
    rcca: TaskScores
    top1: float
    top3: float
    top5: float
    avg_at_5: float
    runtime_mean_s: float
    runtime_median_s: float

    def to_dict(self, *, canonical: bool = False) -> dict:
        d = {
            "ecd": vars(self.ecd),
            "ft": vars(self.ft),
            "rcca": vars(self.rcca),
            "top1": self.top1,
            "top3": self.top3,
            "top5": self.top5,
            "avg_at_5": self.avg_at_5,
        }
        if not canonical:
            d["runtime_mean_s"] = self.runtime_mean_s
            d["runtime_median_s"] = self.runtime_median_s
        return d


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


_PUNCT_RE = re.compile(r"[^a-z0-9 ]+")


def normalize_cause(text: str) -> str:
    return re.sub(r"\s+", " ", _PUNCT_RE.sub(" ", text.lower())).strip()


def _cause_rank(report: AnalysisReport, truth_cause: str, lenient: bool) -> Optional[int]:
    want = normalize_cause(truth_cause)
    if not want:
        return None
    for i, cand in enumerate(report.root_cause_ranking, start=1):
        got = normalize_cause(cand.candidate)
        if got == want or (lenient and (want in got or got in want)):
            return i
    return None


def compute_metrics(
    reports: Sequence[AnalysisReport],
    truths: Mapping[str, GroundTruth],
    *,
    lenient_substring: bool = False,
) -> MetricsTable:
    """Score aligned reports against ground truth.

    ECD is binary with erroneous as the positive class. FT is macro-F1 over
    erroneous cases. Top-k counts a hit when the true root cause matches a
    candidate at rank <= k; AVG@5 credits 1/rank for hits within 5. Missing
    or empty rankings are misses.
    """
    ids = [r.ticket_id for r in reports]
    if len(set(ids)) != len(ids):
        raise Misaligned("duplicate ticket_id among reports")
    if set(ids) != set(truths):
        raise Misaligned("reports and truths cover different ticket_ids")

    by_id = {r.ticket_id: r for r in reports}
    tp = fp = fn = 0
    for tid, truth in truths.items():
        pred = by_id[tid].ecd_verdict
        if pred and truth.erroneous:
            tp += 1
        elif pred and not truth.erroneous:
            fp += 1
        elif not pred and truth.erroneous:
            fn += 1
    ecd_p = _safe_div(tp, tp + fp)
    ecd_r = _safe_div(tp, tp + fn)
    ecd = TaskScores(ecd_p, ecd_r, _f1(ecd_p, ecd_r))

    err_ids = [tid for tid, t in truths.items() if t.erroneous]
    pairs = []
    for tid in err_ids:
        truth_kind = truths[tid].fault_type.kind if truths[tid].fault_type else None
        rep = by_id[tid]
        pred_kind = rep.fault_class.kind if rep.fault_class else None
        pairs.append((truth_kind, pred_kind))
    classes = sorted(
        {k for k, _ in pairs if k is not None} | {k for _, k in pairs if k is not None},
        key=lambda k: k.value,
    )
    per_class = []
    for cls in classes:
        ctp = sum(1 for t, p in pairs if t is cls and p is cls)
        cfp = sum(1 for t, p in pairs if t is not cls and p is cls)
        cfn = sum(1 for t, p in pairs if t is cls and p is not cls)
        p = _safe_div(ctp, ctp + cfp)
        r = _safe_div(ctp, ctp + cfn)
        per_class.append(TaskScores(p, r, _f1(p, r)))
    if per_class:
        ft = TaskScores(
            statistics.mean(s.precision for s in per_class),
            statistics.mean(s.recall for s in per_class),
            statistics.mean(s.f1 for s in per_class),
        )
    else:
        ft = TaskScores(0.0, 0.0, 0.0)

    hits = {1: 0, 3: 0, 5: 0}
    avg_sum = 0.0
    ranked_cases = 0
    top1_hits = 0
    for tid in err_ids:
        rep = by_id[tid]
        if rep.root_cause_ranking:
            ranked_cases += 1
        truth_cause = truths[tid].root_cause or ""
        rank = _cause_rank(rep, truth_cause, lenient_substring)
        if rank is not None and rank <= 5:
            avg_sum += 1.0 / rank
            for k in hits:
                if rank <= k:
                    hits[k] += 1
            if rank == 1:
                top1_hits += 1
    n_err = len(err_ids)
    rcca_p = _safe_div(top1_hits, ranked_cases)
    rcca_r = _safe_div(top1_hits, n_err)
    rcca = TaskScores(rcca_p, rcca_r, _f1(rcca_p, rcca_r))

    runtimes = [r.elapsed_ms / 1000.0 for r in reports]
    return MetricsTable(
        ecd=ecd,
        ft=ft,
        rcca=rcca,
        top1=_safe_div(hits[1], n_err),
        top3=_safe_div(hits[3], n_err),
        top5=_safe_div(hits[5], n_err),
        avg_at_5=_safe_div(avg_sum, n_err),
        runtime_mean_s=statistics.mean(runtimes) if runtimes else 0.0,
        runtime_median_s=statistics.median(runtimes) if runtimes else 0.0,
    )


# -- benchmark ----------------------------------------------------------------

VARIANTS: dict[str, AblationFlags] = {
    "full": AblationFlags(),
    "none": AblationFlags(drop_rag=True, drop_cot=True),
    "rag_only": AblationFlags(drop_cot=True),
    "rag_scot": AblationFlags(),
    "A1": AblationFlags(drop_descriptions=True),
    "A2": AblationFlags(drop_detector=True),
    "no_cot": AblationFlags(drop_cot=True),
}


@dataclass
class BenchmarkResult:
    variant: str
    metrics: MetricsTable
    reports: list[AnalysisReport]
    audit: AuditStore
    failures: dict[str, str]


def run_benchmark(
    bundles: Sequence[CaseBundle],
    cfg: InferenceConfig,
    gateway: LlmGateway,
    variants: Sequence[str] = ("full",),
    kb: Optional[KnowledgeBase] = None,
    max_workers: Optional[int] = None,
) -> dict[str, BenchmarkResult]:
    """Run the pipeline per variant and score it against ground truth.

    Per-case errors are recorded in ``failures`` rather than aborting the
    run; metrics cover the cases that completed.
    """
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ValueError(f"unknown variants: {sorted(unknown)}")
    if any(b.ground_truth is None for b in bundles):
        raise ValueError("benchmark requires ground truth on every bundle")
    workers = max_workers or gateway.cfg.max_inflight
    out: dict[str, BenchmarkResult] = {}
    for variant in variants:
        vcfg = replace(cfg, flags=VARIANTS[variant])
        audit = AuditStore()
        reports: dict[str, AnalysisReport] = {}
        failures: dict[str, str] = {}

        def run_one(bundle: CaseBundle) -> tuple[str, AnalysisReport]:
            rep = analyze_case(bundle, kb, gateway, vcfg, audit=audit)
            return bundle.ticket.ticket_id, rep

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_one, b): b.ticket.ticket_id for b in bundles}
            for fut, tid in futures.items():
                try:
                    rid, rep = fut.result()
                    reports[rid] = rep
                except Exception as exc:
                    failures[tid] = f"{type(exc).__name__}: {exc}"

        truths = {
            b.ticket.ticket_id: b.ground_truth
            for b in bundles
            if b.ticket.ticket_id in reports
        }
        ordered = [reports[tid] for tid in sorted(reports)]
        metrics = compute_metrics(ordered, truths)
        out[variant] = BenchmarkResult(variant, metrics, ordered, audit, failures)
    return out


def seed_kb_from_corpus(
    bundles: Sequence[CaseBundle],
    gateway: LlmGateway,
    cfg: InferenceConfig,
    kb: Optional[KnowledgeBase] = None,
    admitted_by: AdmittedBy = AdmittedBy.SEED,
    case_id_suffix: str = "",
) -> KnowledgeBase:
    """Turn labeled historical bundles into retrievable case records whose
    reports are consistent with their ground truth."""
    if kb is None:
        kb = KnowledgeBase(gateway.embed)
    full_cfg = replace(cfg, flags=AblationFlags())
    system = build_system_prompt(full_cfg)
    for bundle in bundles:
        stage1 = run_stage_one(bundle, full_cfg)
        dt_str = render_domain_text(stage1.domain_text)
        user = build_user_prompt([], dt_str, full_cfg.flags)
        report = parse_report(scripted_reply(system, user))
        report = replace(report, ticket_id=bundle.ticket.ticket_id)
        kb.add_case(kb.make_record(
            case_id=bundle.ticket.ticket_id + case_id_suffix,
            domain_text=dt_str,
            report=report,
            ground_truth=bundle.ground_truth,
            admitted_by=admitted_by,
            created_at=bundle.ticket.submit_time,
        ))
    return kb


def retrieval_context_volume(audit: AuditStore) -> int:
    return sum(len(rec.retrieved_ids) for rec in audit.records)


@dataclass
class SweepPoint:
    fraction: float
    kb_size: int
    context_volume: int
    metrics: MetricsTable
    result: BenchmarkResult


def sweep_cold_start(
    fractions: Sequence[float],
    seed: int,
    bundles: Sequence[CaseBundle],
    history: Sequence[CaseBundle],
    cfg: InferenceConfig,
    gateway: LlmGateway,
) -> list[SweepPoint]:
    """Benchmark with the knowledge base seeded from a sampled fraction of
    labeled history."""
    full_kb = seed_kb_from_corpus(history, gateway, cfg)
    points = []
    for p in fractions:
        kb_p = full_kb.sample_fraction(p, seed)
        res = run_benchmark(bundles, cfg, gateway, ("full",), kb=kb_p)["full"]
        points.append(SweepPoint(
            fraction=p,
            kb_size=len(kb_p),
            context_volume=retrieval_context_volume(res.audit),
            metrics=res.metrics,
            result=res,
        ))
    return points


def _is_misdiagnosed(report: AnalysisReport, truth: GroundTruth) -> bool:
    if report.ecd_verdict != truth.erroneous:
        return True
    if truth.erroneous and truth.fault_type is not None:
        pred = report.fault_class.kind if report.fault_class else None
        if pred is not truth.fault_type.kind:
            return True
    return False


def sweep_feedback_ratio(
    fractions: Sequence[float],
    seed: int,
    bundles: Sequence[CaseBundle],
    cfg: InferenceConfig,
    gateway: LlmGateway,
    kb: Optional[KnowledgeBase] = None,
    feedback_store: Optional[FeedbackStore] = None,
) -> list[SweepPoint]:
    """Label a fraction of misdiagnosed cases Bad with corrected truths,
    admit the corrections, and re-benchmark."""
    base = run_benchmark(bundles, cfg, gateway, ("full",), kb=kb)["full"]
    truths = {b.ticket.ticket_id: b.ground_truth for b in bundles}
    by_id = {b.ticket.ticket_id: b for b in bundles}
    failed = sorted(
        tid for tid, rep in ((r.ticket_id, r) for r in base.reports)
        if _is_misdiagnosed(rep, truths[tid])
    )
    points = []
    for f in fractions:
        n_pick = int(f * len(failed) + 0.5)
        picked = failed[:n_pick]
        kb_f = KnowledgeBase(gateway.embed)
        if kb is not None:
            for rec in kb.records:
                kb_f.add_case(rec)
        store = feedback_store if feedback_store is not None else FeedbackStore(audit=base.audit)
        if picked:
            for tid in picked:
                store.record(FeedbackRecord(
                    report_id=tid,
                    label=FeedbackLabel.BAD,
                    notes="misdiagnosis corrected during feedback sweep",
                    corrected_truth=truths[tid],
                    judge="sweep",
                ))
            seed_kb_from_corpus(
                [by_id[tid] for tid in picked], gateway, cfg,
                kb=kb_f, admitted_by=AdmittedBy.HUMAN_GOOD,
                case_id_suffix="/corrected",
            )
        res = run_benchmark(bundles, cfg, gateway, ("full",), kb=kb_f)["full"]
        points.append(SweepPoint(
            fraction=f,
            kb_size=len(kb_f),
            context_volume=retrieval_context_volume(res.audit),
            metrics=res.metrics,
            result=res,
        ))
    return points
