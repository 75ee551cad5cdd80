import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changelens.cotscore import (
    CoTConfig,
    EmptyReference,
    SimilarityMethod,
    score_cot,
    section_similarity,
    segment_cot,
)
from changelens.model import CoTKind, CoTSection


FULL_TEXT = """Observation: CPU utilization spikes after the change.
AnomalyAnalysis: The logs contain numerous out-of-memory errors and the change involves a caching library.
FaultClassification: The profile matches ResourceExhaustion.
RootCause: The memory leak introduced by the new library causes frequent garbage collection and high CPU load.
Mitigation: Roll back the library upgrade and cap the cache size."""


def full_sections():
    return segment_cot(FULL_TEXT)


# -- segmentation -------------------------------------------------------------

def test_segment_all_five_headers():
    sections = full_sections()
    assert [s.kind for s in sections] == list(CoTKind)
    assert all(s.text for s in sections)


def test_segment_free_text_becomes_observation():
    sections = segment_cot("It's a CPU issue overall")
    assert len(sections) == 1
    assert sections[0].kind is CoTKind.OBSERVATION
    assert "CPU issue" in sections[0].text


def test_segment_two_headers():
    text = "Observation: things look bad\nRootCause: the deploy broke it"
    sections = segment_cot(text)
    assert [s.kind for s in sections] == [CoTKind.OBSERVATION, CoTKind.ROOT_CAUSE]


def test_segment_alias_headers():
    text = "Analysis: metrics moved\nConclusion: the config was wrong"
    sections = segment_cot(text)
    assert [s.kind for s in sections] == [CoTKind.ANOMALY_ANALYSIS, CoTKind.ROOT_CAUSE]


def test_segment_merges_duplicate_kinds():
    text = "Observation: first\nObservation: second"
    sections = segment_cot(text)
    assert len(sections) == 1
    assert "first" in sections[0].text and "second" in sections[0].text


def test_segment_empty_text():
    assert segment_cot("") == []


# -- similarity ---------------------------------------------------------------

def test_identical_sections_score_one():
    text = "the memory pool is exhausted after deploy"
    assert section_similarity(text, text) == pytest.approx(1.0, abs=1e-6)


def test_disjoint_vocab_scores_zero():
    a = "alpha beta gamma delta"
    b = "omega sigma lambda kappa"
    assert section_similarity(a, b) == pytest.approx(0.0, abs=1e-9)


def test_half_reference_f1():
    ref_tokens = ["alpha", "beta", "gamma", "delta", "epsilon",
                  "zeta", "eta", "theta", "iota", "kappa"]
    reference = " ".join(ref_tokens)
    candidate = " ".join(ref_tokens[:5])
    got = section_similarity(candidate, reference)
    assert got == pytest.approx(2 * 1.0 * 0.5 / 1.5, abs=1e-6)


def test_empty_reference_raises():
    with pytest.raises(EmptyReference):
        section_similarity("words", "   ")


def test_empty_candidate_scores_zero():
    assert section_similarity("", "reference words") == 0.0


def test_sentence_cosine_mode():
    s = section_similarity("alpha beta", "alpha beta",
                           method=SimilarityMethod.SENTENCE_COSINE)
    assert s == pytest.approx(1.0, abs=1e-6)
    d = section_similarity("alpha beta", "gamma delta",
                           method=SimilarityMethod.SENTENCE_COSINE)
    assert d == pytest.approx(0.5, abs=1e-6)  # orthogonal maps to midpoint


# -- aggregate scoring ----------------------------------------------------------

def test_identity_scores_one():
    sections = full_sections()
    result = score_cot(sections, sections)
    assert result.aggregate == pytest.approx(1.0, abs=1e-6)
    assert result.passed
    assert result.missing_sections == ()


def test_weighted_two_section_arithmetic():
    weights = {
        CoTKind.OBSERVATION: 0.5,
        CoTKind.ANOMALY_ANALYSIS: 0.5,
        CoTKind.FAULT_CLASSIFICATION: 0.0,
        CoTKind.ROOT_CAUSE: 0.0,
        CoTKind.MITIGATION: 0.0,
    }
    cfg = CoTConfig(weights=weights, threshold=0.6)
    reference = [
        CoTSection(CoTKind.OBSERVATION, "alpha beta gamma delta epsilon"),
        CoTSection(CoTKind.ANOMALY_ANALYSIS, "one two three four five"),
    ]
    # candidate scores: identical (1.0) and token-subset engineered near 0.5
    candidate = [
        CoTSection(CoTKind.OBSERVATION, "alpha beta gamma delta epsilon"),
        CoTSection(CoTKind.ANOMALY_ANALYSIS, "one two six seven eight"),
    ]
    result = score_cot(candidate, reference, cfg)
    sims = result.per_section
    expected = 0.5 * sims[CoTKind.OBSERVATION] + 0.5 * sims[CoTKind.ANOMALY_ANALYSIS]
    assert result.aggregate == pytest.approx(expected, abs=1e-9)
    assert sims[CoTKind.OBSERVATION] == pytest.approx(1.0, abs=1e-6)


def test_missing_candidate_sections_score_zero():
    reference = full_sections()
    candidate = [s for s in reference if s.kind is CoTKind.OBSERVATION]
    result = score_cot(candidate, reference)
    assert set(result.missing_sections) == set(CoTKind) - {CoTKind.OBSERVATION}
    assert result.per_section[CoTKind.ROOT_CAUSE] == 0.0
    assert result.aggregate <= 0.15 + 1e-9


def test_vague_answer_scores_low_and_structured_doubles_it():
    reference = full_sections()
    vague = segment_cot("Overall the CPU utilization is high after the change, a CPU issue.")
    full = full_sections()
    vague_score = score_cot(vague, reference)
    full_score = score_cot(full, reference)
    assert not vague_score.passed
    assert vague_score.aggregate < 0.35
    assert full_score.aggregate >= 2 * vague_score.aggregate


def test_reference_missing_kind_renormalizes():
    reference = [
        CoTSection(CoTKind.OBSERVATION, "alpha beta"),
        CoTSection(CoTKind.ROOT_CAUSE, "gamma delta"),
    ]
    candidate = reference
    result = score_cot(candidate, reference)
    assert result.aggregate == pytest.approx(1.0, abs=1e-6)


def test_empty_reference_rejected():
    with pytest.raises(EmptyReference):
        score_cot(full_sections(), [])


def test_config_weight_validation():
    bad = dict(CoTConfig().weights)
    bad[CoTKind.OBSERVATION] = 0.5
    with pytest.raises(ValueError):
        CoTConfig(weights=bad)
    with pytest.raises(ValueError):
        CoTConfig(threshold=1.5)


def test_weight_linearity_uniform_sections():
    reference = full_sections()
    weight_sets = [
        CoTConfig().weights,
        {CoTKind.OBSERVATION: 0.6, CoTKind.ANOMALY_ANALYSIS: 0.1,
         CoTKind.FAULT_CLASSIFICATION: 0.1, CoTKind.ROOT_CAUSE: 0.1,
         CoTKind.MITIGATION: 0.1},
    ]
    for weights in weight_sets:
        result = score_cot(reference, reference, CoTConfig(weights=weights))
        assert result.aggregate == pytest.approx(1.0, abs=1e-9)


WORDS = [f"w{i}" for i in range(30)]
NOISE = [f"zz{i}qx" for i in range(30)]


@st.composite
def section_pair(draw):
    ref_tokens = draw(st.lists(st.sampled_from(WORDS), min_size=3, max_size=15))
    # candidate keeps a healthy shared core plus optional extras
    keep = max(2, int(len(ref_tokens) * 0.6))
    cand_tokens = ref_tokens[:keep] + draw(
        st.lists(st.sampled_from(WORDS), max_size=5))
    return " ".join(cand_tokens), " ".join(ref_tokens)


@given(st.lists(section_pair(), min_size=1, max_size=5))
@settings(max_examples=100, deadline=None)
def test_boundedness_fuzz(pairs):
    kinds = list(CoTKind)
    candidate = [CoTSection(kinds[i], c) for i, (c, _) in enumerate(pairs)]
    reference = [CoTSection(kinds[i], r) for i, (_, r) in enumerate(pairs)]
    result = score_cot(candidate, reference)
    assert 0.0 <= result.aggregate <= 1.0
    for v in result.per_section.values():
        assert 0.0 <= v <= 1.0


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_monotone_corruption(data):
    reference = full_sections()
    candidate = list(reference)
    base = score_cot(candidate, reference).aggregate
    idx = data.draw(st.integers(min_value=0, max_value=len(candidate) - 1))
    n_noise = data.draw(st.integers(min_value=3, max_value=12))
    noise = " ".join(data.draw(st.sampled_from(NOISE)) for _ in range(n_noise))
    corrupted = list(candidate)
    corrupted[idx] = CoTSection(candidate[idx].kind, noise)
    worse = score_cot(corrupted, reference).aggregate
    assert worse <= base + 1e-12
