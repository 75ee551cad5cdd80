"""Deterministic synthetic fixtures: change-case corpora, the scripted
pseudo-model that answers consistently with each case's ground truth, and
the labeled shape suite behind the pattern-classifier oracle.

Erroneous cases plant a novel post-change log line that names the injected
fault and root cause. The line flows verbatim into the domain text, so a
reply can be synthesized from the prompt alone; scripted transcripts and
the mock gateway's fallback therefore always agree.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional

import numpy as np

from .domaintext import AblationFlags
from .engine import (
    CURRENT_HEADER,
    InferenceConfig,
    build_system_prompt,
    build_user_prompt,
    render_domain_text,
    run_stage_one,
)
from .gateway import prompt_hash
from .metricprep import PatternClass
from .model import (
    CaseBundle,
    ChangeTicket,
    ChangeType,
    FaultClass,
    FaultKind,
    GroundTruth,
    LogEvent,
    MetricSeries,
    TicketStatus,
)

_BASE_EPOCH = 1709251200  # 2024-03-01T00:00:00Z
_METRIC_STEP = 60
_LOG_STEP = 60
_PRE_SECONDS = 7200
_POST_SECONDS = 14400

SERVICES = ("payments-api", "checkout-web", "inventory-svc", "auth-gateway", "search-indexer")

_CHANGE_TYPES = (
    ChangeType.CONFIG_CHANGE,
    ChangeType.CODE_DEPLOY,
    ChangeType.PATCH_FIX,
    ChangeType.FEATURE_ROLLOUT,
)

_BENIGN_TEMPLATES = (
    "GET /api/v1/orders/{} completed in {} ms",
    "health check ok node-{}",
    "cache refresh completed entries={}",
    "user session established id={}",
    "scheduled job {} finished status=ok",
    "connection pool stats active={} idle={}",
)


@dataclass(frozen=True)
class FaultProfile:
    root_cause: str
    mitigation: str
    flavor: str
    injections: tuple[tuple[str, str], ...]  # (metric name, shape)


FAULT_PROFILES: dict[FaultKind, FaultProfile] = {
    FaultKind.RESOURCE_EXHAUSTION: FaultProfile(
        root_cause="memory leak in the rolled out worker image",
        mitigation="roll back the image and cap the worker heap",
        flavor="OutOfMemoryError raised while allocating buffer pool",
        injections=(("mem_used_pct", "ramp_up"), ("cpu_util_pct", "shift_up")),
    ),
    FaultKind.CONFIG_ERROR: FaultProfile(
        root_cause="stale connection limit in the new config revision",
        mitigation="revert the config revision and reload the limits",
        flavor="rejecting requests: connection limit reached",
        injections=(("error_rate", "shift_up"),),
    ),
    FaultKind.CODE_DEFECT: FaultProfile(
        root_cause="null pointer dereference in the patched request handler",
        mitigation="roll back the patch and add a regression test",
        flavor="unhandled exception in request handler",
        injections=(("latency_ms", "spike"), ("error_rate", "shift_up")),
    ),
    FaultKind.DEPENDENCY_FAILURE: FaultProfile(
        root_cause="downstream auth service rejecting calls after the version pin",
        mitigation="restore the previous dependency version pin",
        flavor="upstream call failed with permission denied",
        injections=(("error_rate", "shift_up"), ("latency_ms", "shift_up")),
    ),
    FaultKind.NETWORK_ISSUE: FaultProfile(
        root_cause="packet loss between zones after the routing change",
        mitigation="withdraw the routing change and drain the bad path",
        flavor="socket timeout while forwarding traffic",
        injections=(("latency_ms", "burst"),),
    ),
    FaultKind.DATA_ISSUE: FaultProfile(
        root_cause="malformed records rejected by the new ingest schema",
        mitigation="relax the ingest schema and replay the rejected batch",
        flavor="schema validation failed for incoming record",
        injections=(("error_rate", "ramp_up"),),
    ),
    FaultKind.OTHER: FaultProfile(
        root_cause="unexpected interaction with the maintenance window",
        mitigation="pause the rollout and escalate to the owning team",
        flavor="service degraded for an unclassified reason",
        injections=(("cpu_util_pct", "shift_up"),),
    ),
}

_METRIC_BASES = {
    "cpu_util_pct": (35.0, 4.0, "percent"),
    "mem_used_pct": (55.0, 3.0, "percent"),
    "latency_ms": (120.0, 10.0, "ms"),
    "error_rate": (0.5, 0.3, "errors/s"),
}


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 42
    n_cases: int = 20
    erroneous_fraction: float = 0.5
    fault_mix: Optional[Mapping[FaultKind, float]] = None

    def __post_init__(self) -> None:
        if self.n_cases < 1:
            raise ValueError("n_cases must be positive")
        if not (0.0 <= self.erroneous_fraction <= 1.0):
            raise ValueError("erroneous_fraction must be in [0, 1]")
        if self.fault_mix is not None:
            if any(w < 0 for w in self.fault_mix.values()):
                raise ValueError("fault_mix weights must be nonnegative")
            if sum(self.fault_mix.values()) <= 0:
                raise ValueError("fault_mix weights must sum to > 0")


_DEFAULT_MIX = {k: 1.0 for k in FaultKind if k is not FaultKind.OTHER}


def _detrended_noise(rng: random.Random, n: int, amp: float) -> np.ndarray:
    """Bounded noise with the least-squares line removed, so noise alone can
    never trip the trend or shift rules."""
    raw = np.array([rng.uniform(-amp, amp) for _ in range(n)])
    x = np.linspace(0.0, 1.0, n)
    slope, intercept = np.polyfit(x, raw, 1)
    return raw - (slope * x + intercept)


def _inject(post: np.ndarray, shape: str, amp: float, rng: random.Random) -> np.ndarray:
    sigma = amp / np.sqrt(3.0)
    n = len(post)
    if shape == "spike":
        idx = rng.randrange(n // 5, n - n // 5)
        out = post.copy()
        out[idx] += (9.0 + 3.0 * rng.random()) * sigma
        return out
    if shape == "dip":
        idx = rng.randrange(n // 5, n - n // 5)
        out = post.copy()
        out[idx] -= (9.0 + 3.0 * rng.random()) * sigma
        return out
    if shape == "shift_up":
        return post + (4.0 + 2.0 * rng.random()) * sigma
    if shape == "shift_down":
        return post - (4.0 + 2.0 * rng.random()) * sigma
    if shape == "ramp_up":
        return post + np.linspace(0.0, (7.0 + 3.0 * rng.random()) * sigma, n)
    if shape == "ramp_down":
        return post - np.linspace(0.0, (7.0 + 3.0 * rng.random()) * sigma, n)
    if shape == "burst":
        center = post.mean()
        return center + (post - center) * (3.0 + rng.random())
    raise ValueError(f"unknown shape {shape}")


def fault_marker_line(kind: FaultKind, profile: FaultProfile) -> str:
    return (
        f'ALERT service degradation fault={kind.value} '
        f'root_cause="{profile.root_cause}" {profile.flavor}'
    )


def _make_case(index: int, erroneous: bool, kind: Optional[FaultKind],
               rng: random.Random) -> CaseBundle:
    service = SERVICES[index % len(SERVICES)]
    change_type = _CHANGE_TYPES[index % len(_CHANGE_TYPES)]
    submit = _BASE_EPOCH + index * 86400
    analysis_start = submit + 600
    change_time = analysis_start + _PRE_SECONDS
    analysis_end = change_time + _POST_SECONDS
    ticket = ChangeTicket(
        ticket_id=f"CHG-{index + 1:04d}",
        service=service,
        change_type=change_type,
        submit_time=submit,
        analysis_start=analysis_start,
        analysis_end=analysis_end,
        description=f"{change_type.value} rollout on {service}",
        status=TicketStatus.PENDING,
    )

    n_pre = _PRE_SECONDS // _METRIC_STEP
    n_post = _POST_SECONDS // _METRIC_STEP
    timestamps = tuple(range(analysis_start, analysis_end, _METRIC_STEP))
    injections = dict(FAULT_PROFILES[kind].injections) if erroneous and kind else {}

    metrics = []
    for name, (base, amp, unit) in _METRIC_BASES.items():
        pre = base + _detrended_noise(rng, n_pre, amp)
        post = base + _detrended_noise(rng, n_post, amp)
        shape = injections.get(name)
        if shape is not None:
            post = _inject(post, shape, amp, rng)
        values = tuple(np.concatenate([pre, post]).tolist())
        metrics.append(MetricSeries(name, unit, timestamps, values))

    def benign_event(ts: int) -> LogEvent:
        tpl = _BENIGN_TEMPLATES[rng.randrange(len(_BENIGN_TEMPLATES))]
        args = [rng.randrange(10, 99999) for _ in range(tpl.count("{}"))]
        return LogEvent(ts, tpl.format(*args))

    pre_logs = [benign_event(ts) for ts in range(analysis_start, change_time, _LOG_STEP)]
    post_logs = [benign_event(ts) for ts in range(change_time, analysis_end, _LOG_STEP)]
    if erroneous and kind:
        marker = fault_marker_line(kind, FAULT_PROFILES[kind])
        for j in range(6):
            ts = change_time + 300 + j * 900
            post_logs.append(LogEvent(ts, f"{marker} attempt {j + 1}"))
        post_logs.sort(key=lambda e: e.timestamp)

    if erroneous and kind:
        profile = FAULT_PROFILES[kind]
        truth = GroundTruth(
            erroneous=True,
            fault_type=FaultClass(kind),
            root_cause=profile.root_cause,
            resolution=profile.mitigation,
        )
    else:
        truth = GroundTruth(erroneous=False)

    return CaseBundle(
        ticket=ticket,
        metrics=tuple(metrics),
        pre_change_logs=tuple(pre_logs),
        post_change_logs=tuple(post_logs),
        change_time=change_time,
        ground_truth=truth,
    )


def generate_bundles(spec: CorpusSpec) -> list[CaseBundle]:
    rng = random.Random(spec.seed)
    n_err = int(spec.n_cases * spec.erroneous_fraction + 0.5)
    flags = [i < n_err for i in range(spec.n_cases)]
    rng.shuffle(flags)
    mix = dict(spec.fault_mix) if spec.fault_mix else dict(_DEFAULT_MIX)
    kinds = sorted(mix, key=lambda k: k.value)
    weights = [mix[k] for k in kinds]
    bundles = []
    for i in range(spec.n_cases):
        kind = rng.choices(kinds, weights)[0] if flags[i] else None
        bundles.append(_make_case(i, flags[i], kind, rng))
    return bundles


# -- scripted pseudo-model ---------------------------------------------------

_MARKER_RE = re.compile(r'fault=([A-Za-z]+) root_cause="([^"]+)"')
_SERVICE_RE = re.compile(r"^Service: (.+)$", re.MULTILINE)
_FINDING_RE = re.compile(r"^(\S+): class=([A-Za-z]+)", re.MULTILINE)


def scripted_reply(system_prompt: str, user_prompt: str) -> str:
    """Deterministic reply consistent with the markers planted in the case.

    Reads only the current-case block of the prompt, never the retrieved
    references, so replies are stable whatever the knowledge base holds.
    """
    current = user_prompt.split(CURRENT_HEADER)[-1]
    include_cot = "Do not include reasoning sections." not in system_prompt
    service_m = _SERVICE_RE.search(current)
    service = service_m.group(1).strip() if service_m else "the service"
    marker = _MARKER_RE.search(current)

    if marker is None:
        lines = ["VERDICT: normal", "CONFIDENCE: 0.96"]
        if include_cot:
            lines += [
                f"Observation: Telemetry on {service} stays within the pre-change baseline envelope.",
                "AnomalyAnalysis: No sustained shifts, trends, or novel error templates follow the change.",
            ]
        return "\n".join(lines)

    kind_label, root_cause = marker.group(1), marker.group(2)
    kind = FaultClass.from_label(kind_label).kind
    mitigation = FAULT_PROFILES[kind].mitigation
    findings = _FINDING_RE.findall(current)
    if findings:
        shown = findings[:3]
        finding_phrase = "; ".join(f"{name} shows {pattern}" for name, pattern in shown)
    else:
        finding_phrase = "post-change metrics depart from the pre-change baseline"

    lines = [
        "VERDICT: erroneous",
        "CONFIDENCE: 0.93",
        f"FAULT_CLASS: {kind.value}",
        "ROOT_CAUSES:",
        f"1. {root_cause} -- the novel error template and post-change metric deviations point here",
        "2. transient infrastructure noise -- rejected: deviations persist well past the change point",
        f"3. unrelated concurrent deployment -- rejected: only {service} telemetry degrades",
    ]
    if include_cot:
        lines += [
            f"Observation: After the change on {service}, {finding_phrase}.",
            "AnomalyAnalysis: The deviations begin at the change point and persist, and new error "
            "templates absent before the change appear in the logs.",
            f"FaultClassification: The evidence profile matches {kind.value}.",
            f"RootCause: {root_cause}; the novel log template names the failing path directly.",
            f"Mitigation: Roll back the change on {service}, then {mitigation}.",
        ]
    return "\n".join(lines)


def build_transcript(
    bundles: Iterable[CaseBundle],
    cfg: InferenceConfig = InferenceConfig(),
    flag_variants: Iterable[AblationFlags] = (),
) -> dict[str, dict]:
    """Scripted replies for every case under every ablation variant, keyed by
    the prompt hash the pipeline will produce against an empty knowledge
    base."""
    variants = list(flag_variants) or [cfg.flags]
    seen: set[AblationFlags] = set()
    records: dict[str, dict] = {}
    for flags in variants:
        if flags in seen:
            continue
        seen.add(flags)
        vcfg = replace(cfg, flags=flags)
        system = build_system_prompt(vcfg)
        for bundle in bundles:
            stage1 = run_stage_one(bundle, vcfg)
            user = build_user_prompt([], render_domain_text(stage1.domain_text), flags)
            records[prompt_hash(system, user)] = {"reply": scripted_reply(system, user)}
    return records


STANDARD_FLAG_VARIANTS: tuple[AblationFlags, ...] = (
    AblationFlags(),
    AblationFlags(drop_rag=True, drop_cot=True),
    AblationFlags(drop_cot=True),
    AblationFlags(drop_rag=True),
    AblationFlags(drop_descriptions=True),
    AblationFlags(drop_detector=True),
)


def generate_corpus(
    spec: CorpusSpec,
    cfg: InferenceConfig = InferenceConfig(),
) -> tuple[list[CaseBundle], dict[str, dict]]:
    """Bundles plus a companion transcript covering the standard variants."""
    bundles = generate_bundles(spec)
    transcript = build_transcript(bundles, cfg, STANDARD_FLAG_VARIANTS)
    return bundles, transcript


# -- labeled shape suite -----------------------------------------------------

@dataclass(frozen=True)
class LabeledShape:
    series: MetricSeries
    change_time: int
    label: PatternClass


_SHAPE_BY_LABEL = {
    PatternClass.SINGLE_SPIKE: "spike",
    PatternClass.SINGLE_DIP: "dip",
    PatternClass.LEVEL_SHIFT_UP: "shift_up",
    PatternClass.LEVEL_SHIFT_DOWN: "shift_down",
    PatternClass.STEADY_INCREASE: "ramp_up",
    PatternClass.STEADY_DECREASE: "ramp_down",
    PatternClass.TRANSIENT_FLUCTUATION: "burst",
    PatternClass.NO_CHANGE: None,
}


def generate_shape_suite(seed: int = 7, n: int = 200) -> list[LabeledShape]:
    """Labeled synthetic shapes cycling through the pattern taxonomy."""
    rng = random.Random(seed)
    labels = list(_SHAPE_BY_LABEL)
    out = []
    n_side = 256
    for i in range(n):
        label = labels[i % len(labels)]
        base = rng.uniform(-100.0, 100.0)
        scale = 10.0 ** rng.uniform(-1.0, 2.0)
        t0 = 1_700_000_000 + i * 100_000
        change_time = t0 + n_side * 60
        pre = base + _detrended_noise(rng, n_side, scale)
        post = base + _detrended_noise(rng, n_side, scale)
        shape = _SHAPE_BY_LABEL[label]
        if shape is not None:
            post = _inject(post, shape, scale, rng)
        values = tuple(np.concatenate([pre, post]).tolist())
        timestamps = tuple(t0 + j * 60 for j in range(2 * n_side))
        out.append(LabeledShape(
            series=MetricSeries(f"shape_{i:03d}", "unit", timestamps, values),
            change_time=change_time,
            label=label,
        ))
    return out
