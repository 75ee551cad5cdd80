"""Compose the six-section unified domain text fed to the model.

Section order is fixed. Ablation flags reduce or replace section bodies but
never drop a section silently; anything suppressed is marked in place.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Sequence

from .logmine import LogTemplate
from .metricprep import AnomalyFinding, WindowComparison
from .model import CaseBundle

OMITTED_MARKER = "[omitted by ablation]"


class SectionId(str, enum.Enum):
    TICKET_RECORD = "TicketRecord"
    ANOMALY_TIMESTAMPS = "AnomalyTimestamps"
    ANOMALY_CLASSIFICATION = "AnomalyClassification"
    PRE_POST_COMPARISON = "PrePostComparison"
    DETAILED_METRIC_FINDINGS = "DetailedMetricFindings"
    NOVEL_LOG_TEMPLATES = "NovelLogTemplates"


SECTION_HEADERS = {
    SectionId.TICKET_RECORD: "## 1. Change Ticket Records",
    SectionId.ANOMALY_TIMESTAMPS: "## 2. Identified Anomaly Timestamps",
    SectionId.ANOMALY_CLASSIFICATION: "## 3. Anomaly Classification and Metric Descriptions",
    SectionId.PRE_POST_COMPARISON: "## 4. Pre- and Post-Change Metric Comparison",
    SectionId.DETAILED_METRIC_FINDINGS: "## 5. Detailed Metric Comparison and Findings",
    SectionId.NOVEL_LOG_TEMPLATES: "## 6. Descriptions of New Log Templates",
}

SECTION_ORDER = tuple(SectionId)


@dataclass(frozen=True)
class AblationFlags:
    drop_descriptions: bool = False  # variant A1
    drop_detector: bool = False      # variant A2
    drop_rag: bool = False
    drop_cot: bool = False


@dataclass(frozen=True)
class DomainText:
    sections: tuple[tuple[SectionId, str], ...]
    ablation: AblationFlags = AblationFlags()


def _iso(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _num(x: float) -> str:
    return f"{x:.4g}"


def _ticket_section(bundle: CaseBundle) -> str:
    t = bundle.ticket
    lines = [
        f"Ticket ID: {t.ticket_id}",
        f"Service: {t.service}",
        f"Change type: {t.change_type.value}",
        f"Submitted: {_iso(t.submit_time)} (epoch {t.submit_time})",
        f"Analysis window: {_iso(t.analysis_start)} to {_iso(t.analysis_end)}",
        f"Change applied: {_iso(bundle.change_time)} (epoch {bundle.change_time})",
    ]
    if t.description:
        lines.append(f"Description: {t.description}")
    return "\n".join(lines)


def _raw_series_summary(bundle: CaseBundle) -> list[str]:
    lines = []
    for m in bundle.metrics:
        pre = [v for ts, v in zip(m.timestamps, m.values) if ts < bundle.change_time]
        post = [v for ts, v in zip(m.timestamps, m.values) if ts >= bundle.change_time]
        seg = []
        for label, vals in (("pre", pre), ("post", post)):
            if vals:
                seg.append(
                    f"{label} n={len(vals)} min={_num(min(vals))} "
                    f"max={_num(max(vals))} mean={_num(sum(vals) / len(vals))}"
                )
            else:
                seg.append(f"{label} n=0")
        lines.append(f"{m.name} ({m.unit}): " + "; ".join(seg))
    return lines


def _timestamps_section(bundle: CaseBundle, findings: Sequence[AnomalyFinding],
                        flags: AblationFlags) -> str:
    if flags.drop_detector:
        lines = [f"{OMITTED_MARKER} detector outputs replaced with raw series summaries"]
        lines.extend(_raw_series_summary(bundle))
        return "\n".join(lines)
    if not findings:
        return "none detected"
    return "\n".join(
        f"{f.source}: anomalous from {_iso(f.span[0])} to {_iso(f.span[1])}"
        for f in findings
    )


def _classification_section(bundle: CaseBundle, findings: Sequence[AnomalyFinding],
                            flags: AblationFlags) -> str:
    if flags.drop_detector:
        lines = [f"{OMITTED_MARKER} detector outputs replaced with raw series summaries"]
        lines.extend(_raw_series_summary(bundle))
        return "\n".join(lines)
    if not findings:
        return "none detected"
    lines = []
    for f in findings:
        if flags.drop_descriptions:
            lines.append(f"{f.source}: class={f.pattern.value} magnitude={_num(f.magnitude)}")
        else:
            lines.append(f"{f.source}: class={f.pattern.value} magnitude={_num(f.magnitude)}. {f.description}.")
    if flags.drop_descriptions:
        lines.insert(0, f"{OMITTED_MARKER} description sentences removed")
    return "\n".join(lines)


def _comparison_section(comparisons: Sequence[WindowComparison],
                        flags: AblationFlags) -> str:
    if not comparisons:
        return "none computed"
    if flags.drop_descriptions:
        lines = [f"{OMITTED_MARKER} description sentences removed"]
        lines.extend(
            f"{c.source}: mean {_num(c.before['mean'])} -> {_num(c.after['mean'])} "
            f"(delta {_num(c.deltas['mean'])})"
            for c in comparisons
        )
        return "\n".join(lines)
    return "\n".join(c.summary for c in comparisons)


def _detail_section(comparisons: Sequence[WindowComparison],
                    findings: Sequence[AnomalyFinding],
                    flags: AblationFlags) -> str:
    if not comparisons and not findings:
        return "none computed"
    lines = []
    for c in comparisons:
        for stat in ("max", "min", "mean"):
            lines.append(
                f"{c.source} {stat}: before={_num(c.before[stat])} "
                f"after={_num(c.after[stat])} delta={_num(c.deltas[stat])}"
            )
    if flags.drop_descriptions:
        lines.insert(0, f"{OMITTED_MARKER} description sentences removed")
    elif not flags.drop_detector:
        for f in findings:
            lines.append(f.description + ".")
    return "\n".join(lines) if lines else "none computed"


def _novel_section(novel: Sequence[LogTemplate]) -> str:
    if not novel:
        return "none detected"
    lines = []
    for tpl in novel:
        lines.append(f"template {tpl.template_id}: {tpl.template_str} (seen {tpl.support}x)")
        lines.append(f"  first occurrence: {tpl.sample_message}")
    return "\n".join(lines)


def compose_domain_text(
    bundle: CaseBundle,
    findings: Sequence[AnomalyFinding],
    comparisons: Sequence[WindowComparison],
    novel: Sequence[LogTemplate],
    flags: AblationFlags = AblationFlags(),
) -> DomainText:
    """Render the six sections from case evidence.

    Inputs are sorted internally, so permuting findings or comparisons does
    not change the output.
    """
    findings = sorted(findings, key=lambda f: (f.source, f.span[0]))
    comparisons = sorted(comparisons, key=lambda c: c.source)
    novel = sorted(novel, key=lambda t: t.template_id)
    sections = (
        (SectionId.TICKET_RECORD, _ticket_section(bundle)),
        (SectionId.ANOMALY_TIMESTAMPS, _timestamps_section(bundle, findings, flags)),
        (SectionId.ANOMALY_CLASSIFICATION, _classification_section(bundle, findings, flags)),
        (SectionId.PRE_POST_COMPARISON, _comparison_section(comparisons, flags)),
        (SectionId.DETAILED_METRIC_FINDINGS, _detail_section(comparisons, findings, flags)),
        (SectionId.NOVEL_LOG_TEMPLATES, _novel_section(novel)),
    )
    return DomainText(sections=sections, ablation=flags)


def render_domain_text(dt: DomainText) -> str:
    """Flat deterministic rendering; byte-identical for identical inputs."""
    parts = []
    for sid, text in dt.sections:
        body = text if text.strip() else OMITTED_MARKER
        parts.append(f"{SECTION_HEADERS[sid]}\n{body}")
    return "\n\n".join(parts) + "\n"


def section_text(dt: DomainText, sid: SectionId) -> str:
    for s, text in dt.sections:
        if s is sid:
            return text
    return ""
