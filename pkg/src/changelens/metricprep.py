"""Metric normalization and rule-based anomaly shape classification.

All classification rules operate on the post-change segment expressed in
z-units of the pre-change baseline, which makes the assigned class invariant
under affine rescaling of the raw series.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import MetricSeries


class EmptyWindow(ValueError):
    pass


class PatternClass(str, enum.Enum):
    SINGLE_SPIKE = "SingleSpike"
    SINGLE_DIP = "SingleDip"
    LEVEL_SHIFT_UP = "LevelShiftUp"
    LEVEL_SHIFT_DOWN = "LevelShiftDown"
    STEADY_INCREASE = "SteadyIncrease"
    STEADY_DECREASE = "SteadyDecrease"
    TRANSIENT_FLUCTUATION = "TransientFluctuation"
    NO_CHANGE = "NoChange"


@dataclass(frozen=True)
class PatternRuleConfig:
    """Thresholds, all in pre-change sigma units where dimensionful."""

    spike_z: float = 3.0
    shift_ratio: float = 0.3
    slope_min: float = 0.5
    var_ratio: float = 2.0
    epsilon: float = 1e-9


@dataclass(frozen=True)
class AnomalyFinding:
    source: str
    pattern: PatternClass
    span: tuple[int, int]
    magnitude: float
    description: str


@dataclass(frozen=True)
class WindowComparison:
    source: str
    before: dict[str, float]
    after: dict[str, float]
    deltas: dict[str, float]
    summary: str


def normalize(series: MetricSeries) -> MetricSeries:
    """Z-score with population sigma; a zero-variance series maps to zeros."""
    if not series.values:
        return series
    vals = np.asarray(series.values, dtype=float)
    mu = float(vals.mean())
    sigma = float(vals.std())
    if sigma == 0.0:
        out = np.zeros_like(vals)
    else:
        out = (vals - mu) / sigma
    return MetricSeries(series.name, series.unit, series.timestamps, tuple(out.tolist()))


def _split(series: MetricSeries, change_time: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ts = np.asarray(series.timestamps)
    vals = np.asarray(series.values, dtype=float)
    pre = vals[ts < change_time]
    post = vals[ts >= change_time]
    post_ts = ts[ts >= change_time]
    return pre, post, post_ts


def classify_pattern(
    series: MetricSeries,
    change_time: int,
    rules: PatternRuleConfig = PatternRuleConfig(),
) -> tuple[PatternClass, float]:
    """Classify the post-change shape relative to the pre-change baseline.

    Ordered rules, first match wins: isolated spike or dip, sustained level
    shift, steady trend, variance burst. Fewer than 3 points on either side
    yields NoChange.
    """
    pre, post, _ = _split(series, change_time)
    if len(pre) < 3 or len(post) < 3:
        return PatternClass.NO_CHANGE, 0.0

    denom = max(float(pre.std()), rules.epsilon)
    z = (post - float(pre.mean())) / denom

    # 1. isolated spike / dip
    peaks = np.flatnonzero(np.abs(z) >= rules.spike_z)
    if len(peaks) == 1:
        i = int(peaks[0])
        lo = abs(z[i - 1]) < rules.spike_z if i > 0 else True
        hi = abs(z[i + 1]) < rules.spike_z if i < len(z) - 1 else True
        if lo and hi:
            cls = PatternClass.SINGLE_SPIKE if z[i] > 0 else PatternClass.SINGLE_DIP
            return cls, float(abs(z[i]))

    # least-squares rise across the whole post window, in sigma units
    x = np.linspace(0.0, 1.0, num=len(z))
    rise = float(np.polyfit(x, z, 1)[0])

    # 2. sustained level shift: mean moved and stays moved, without ramping
    m = float(z.mean())
    m2 = float(z[len(z) // 2 :].mean())
    if (
        abs(rise) < rules.slope_min
        and abs(m) >= rules.shift_ratio
        and abs(m2) >= rules.shift_ratio
        and math.copysign(1.0, m) == math.copysign(1.0, m2)
    ):
        cls = PatternClass.LEVEL_SHIFT_UP if m > 0 else PatternClass.LEVEL_SHIFT_DOWN
        return cls, float(abs(m))

    # 3. steady trend
    if abs(rise) >= rules.slope_min:
        cls = PatternClass.STEADY_INCREASE if rise > 0 else PatternClass.STEADY_DECREASE
        return cls, float(abs(rise))

    # 4. variance burst
    z_sigma = float(z.std())
    if z_sigma >= rules.var_ratio:
        return PatternClass.TRANSIENT_FLUCTUATION, z_sigma

    return PatternClass.NO_CHANGE, 0.0


def describe_finding(source: str, pattern: PatternClass, magnitude: float) -> str:
    return (
        f"Metric {source} shows a {pattern.value} of magnitude "
        f"{magnitude:.4g} after the change"
    )


def make_finding(
    series: MetricSeries,
    change_time: int,
    rules: PatternRuleConfig = PatternRuleConfig(),
) -> Optional[AnomalyFinding]:
    """classify_pattern wrapped into a finding; NoChange yields None."""
    pattern, magnitude = classify_pattern(series, change_time, rules)
    if pattern is PatternClass.NO_CHANGE:
        return None
    post_ts = [t for t in series.timestamps if t >= change_time]
    span = (post_ts[0], post_ts[-1]) if post_ts else (change_time, change_time)
    return AnomalyFinding(
        source=series.name,
        pattern=pattern,
        span=span,
        magnitude=magnitude,
        description=describe_finding(series.name, pattern, magnitude),
    )


_STATS = ("max", "min", "mean")


def compare_windows(
    series: MetricSeries,
    before: tuple[int, int],
    after: tuple[int, int],
    epsilon: float = 1e-9,
) -> WindowComparison:
    """Max/min/mean per span with relative deltas; spans are half-open."""
    ts = np.asarray(series.timestamps)
    vals = np.asarray(series.values, dtype=float)
    segments = {}
    for label, (lo, hi) in (("before", before), ("after", after)):
        seg = vals[(ts >= lo) & (ts < hi)]
        if seg.size == 0:
            raise EmptyWindow(f"{label} window [{lo}, {hi}) of {series.name} has no points")
        segments[label] = {
            "max": float(seg.max()),
            "min": float(seg.min()),
            "mean": float(seg.mean()),
        }
    b, a = segments["before"], segments["after"]
    deltas = {s: (a[s] - b[s]) / max(abs(b[s]), epsilon) for s in _STATS}
    top = max(_STATS, key=lambda s: abs(deltas[s]))
    if all(d == 0.0 for d in deltas.values()):
        summary = f"Metric {series.name}: no material change between windows"
    else:
        summary = (
            f"Metric {series.name}: largest change is {top} "
            f"moving from {b[top]:.4g} to {a[top]:.4g} ({deltas[top]:+.1%})"
        )
    return WindowComparison(series.name, b, a, deltas, summary)
