import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changelens.metricprep import (
    EmptyWindow,
    PatternClass,
    PatternRuleConfig,
    classify_pattern,
    compare_windows,
    make_finding,
    normalize,
)
from changelens.model import MetricSeries
from changelens.synth import generate_shape_suite


def series(values, t0=0, step=60, name="m"):
    return MetricSeries(name, "u", tuple(t0 + i * step for i in range(len(values))),
                        tuple(values))


def test_normalize_hand_computed():
    out = normalize(series([1.0, 2.0, 3.0]))
    expected = (-1.224744871, 0.0, 1.224744871)
    for got, want in zip(out.values, expected):
        assert got == pytest.approx(want, abs=1e-4)


def test_normalize_zero_variance():
    out = normalize(series([5.0, 5.0, 5.0]))
    assert out.values == (0.0, 0.0, 0.0)


def test_normalize_single_point():
    out = normalize(series([7.0]))
    assert out.values == (0.0,)


def test_normalize_preserves_name_and_timestamps():
    src = series([1.0, 2.0], name="latency")
    out = normalize(src)
    assert out.name == "latency"
    assert out.timestamps == src.timestamps


def test_normalize_idempotent_on_standard_series():
    rng = random.Random(3)
    vals = [rng.gauss(0, 1) for _ in range(50)]
    once = normalize(series(vals))
    twice = normalize(once)
    for a, b in zip(once.values, twice.values):
        assert a == pytest.approx(b, abs=1e-9)


def alternating(n, lo=-1.0, hi=1.0):
    return [lo if i % 2 == 0 else hi for i in range(n)]


def test_classify_ramp_is_steady_increase():
    pre = [0.0] * 10
    post = list(np.linspace(0.0, 99.0, 100))
    s = series(pre + post)
    change = s.timestamps[10]
    cls, _ = classify_pattern(s, change)
    assert cls is PatternClass.STEADY_INCREASE


def test_classify_single_spike():
    pre = alternating(20)
    post = alternating(20)
    post[10] += 10.0  # ten sigma above an alternating +-1 baseline
    s = series(pre + post)
    cls, mag = classify_pattern(s, s.timestamps[20])
    assert cls is PatternClass.SINGLE_SPIKE
    assert mag > 3.0


def test_classify_single_dip():
    pre = alternating(20)
    post = alternating(20)
    post[7] -= 10.0
    s = series(pre + post)
    cls, _ = classify_pattern(s, s.timestamps[20])
    assert cls is PatternClass.SINGLE_DIP


def test_classify_flat_is_no_change():
    s = series([4.0] * 20)
    cls, mag = classify_pattern(s, s.timestamps[10])
    assert cls is PatternClass.NO_CHANGE
    assert mag == 0.0


def test_classify_level_shift():
    pre = alternating(20)
    post = [v + 5.0 for v in alternating(20)]
    s = series(pre + post)
    cls, _ = classify_pattern(s, s.timestamps[20])
    assert cls is PatternClass.LEVEL_SHIFT_UP


def detrended_noise(n, amp, seed):
    rng = random.Random(seed)
    raw = np.array([rng.uniform(-amp, amp) for _ in range(n)])
    x = np.linspace(0.0, 1.0, n)
    slope, intercept = np.polyfit(x, raw, 1)
    return (raw - slope * x - intercept).tolist()


def test_classify_variance_burst():
    pre = detrended_noise(40, 1.0, seed=21)
    post = [v * 4.0 for v in detrended_noise(40, 1.0, seed=22)]
    s = series(pre + post)
    cls, _ = classify_pattern(s, s.timestamps[40])
    assert cls is PatternClass.TRANSIENT_FLUCTUATION


def test_too_few_points_is_no_change():
    s = series([1.0, 2.0, 3.0, 4.0])
    cls, _ = classify_pattern(s, s.timestamps[2])
    assert cls is PatternClass.NO_CHANGE


def test_shape_suite_accuracy():
    suite = generate_shape_suite(seed=7, n=200)
    rules = PatternRuleConfig()
    correct = sum(
        1 for shape in suite
        if classify_pattern(shape.series, shape.change_time, rules)[0] is shape.label
    )
    assert correct / len(suite) >= 0.95


def test_affine_invariance_on_suite():
    suite = generate_shape_suite(seed=7, n=40)
    rng = random.Random(99)
    rules = PatternRuleConfig()
    for shape in suite:
        base_cls, _ = classify_pattern(shape.series, shape.change_time, rules)
        a = 10.0 ** rng.uniform(-2, 2)
        b = rng.uniform(-1e4, 1e4)
        scaled = MetricSeries(
            shape.series.name, shape.series.unit, shape.series.timestamps,
            tuple(a * v + b for v in shape.series.values),
        )
        scaled_cls, _ = classify_pattern(scaled, shape.change_time, rules)
        assert scaled_cls is base_cls


def test_make_finding_none_for_quiet_series():
    s = series(alternating(40))
    assert make_finding(s, s.timestamps[20]) is None


def test_make_finding_description_template():
    pre = alternating(20)
    post = [v + 5.0 for v in alternating(20)]
    s = series(pre + post, name="mem_used")
    f = make_finding(s, s.timestamps[20])
    assert f is not None
    assert f.source == "mem_used"
    assert "shows a LevelShiftUp" in f.description
    assert f.span[0] >= s.timestamps[20]


def test_compare_windows_mean_doubling():
    s = series([10.0, 10.0, 20.0, 20.0])
    cmp = compare_windows(s, (0, 120), (120, 240))
    assert cmp.deltas["mean"] == pytest.approx(1.0)
    assert "+100" in cmp.summary


def test_compare_windows_identical():
    s = series([3.0, 3.0, 3.0, 3.0])
    cmp = compare_windows(s, (0, 120), (120, 240))
    assert all(v == 0.0 for v in cmp.deltas.values())
    assert "no material change" in cmp.summary


def test_compare_windows_empty_raises():
    s = series([1.0, 2.0])
    with pytest.raises(EmptyWindow):
        compare_windows(s, (0, 120), (500, 600))


@given(
    st.lists(st.floats(min_value=1.0, max_value=100.0), min_size=2, max_size=10),
    st.lists(st.floats(min_value=1.0, max_value=100.0), min_size=2, max_size=10),
)
@settings(max_examples=50, deadline=None)
def test_compare_windows_mean_antisymmetry(before_vals, after_vals):
    vals = before_vals + after_vals
    s = series(vals)
    split = s.timestamps[len(before_vals)]
    end = s.timestamps[-1] + 60
    fwd = compare_windows(s, (0, split), (split, end))
    rev = compare_windows(s, (split, end), (0, split))
    mean_b = fwd.after["mean"]
    mean_a = fwd.before["mean"]
    assert fwd.deltas["mean"] == pytest.approx(
        -rev.deltas["mean"] * abs(mean_b) / abs(mean_a), rel=1e-9
    )


def test_classification_magnitude_positive_for_findings():
    suite = generate_shape_suite(seed=3, n=40)
    for shape in suite:
        cls, mag = classify_pattern(shape.series, shape.change_time)
        if cls is not PatternClass.NO_CHANGE:
            assert mag > 0.0
