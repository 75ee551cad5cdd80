"""Acceptance gate: one test per release criterion, each at its stated
tolerance. The conftest summary hook prints one pass/fail line per criterion
at the end of the run."""

import random
import string
import time

import pytest

from changelens.cotscore import CoTConfig, score_cot, segment_cot
from changelens.domaintext import render_domain_text
from changelens.engine import (
    AuditStore,
    InferenceConfig,
    build_system_prompt,
    build_user_prompt,
    run_stage_one,
)
from changelens.evalharness import (
    compute_metrics,
    run_benchmark,
    seed_kb_from_corpus,
    sweep_cold_start,
)
from changelens.feedback import (
    AlignmentExportConfig,
    ExportFormat,
    FeedbackLabel,
    FeedbackRecord,
    FeedbackStore,
    export_alignment_datasets,
    kb_update_decision,
)
from changelens.gateway import LlmGateway, ProviderConfig, mock_embedding
from changelens.kb import KnowledgeBase, RetrievalConfig
from changelens.logmine import DrainConfig, mine_templates, tokenize
from changelens.metricprep import (
    PatternClass,
    PatternRuleConfig,
    classify_pattern,
    normalize,
)
from changelens.model import (
    AnalysisReport,
    CoTKind,
    CoTSection,
    MetricSeries,
    canonical_json,
    report_to_dict,
)
from changelens.synth import generate_shape_suite, scripted_reply

from test_evalharness import oracle_metrics, random_run
from test_logmine import brute_force_groups, random_oracle_corpus
from conftest import make_quiet_bundle


# -- criterion: Drain mining equals the brute-force positional grouping oracle

def test_drain_oracle_25_random_corpora():
    from changelens.model import LogEvent

    cfg = DrainConfig()
    elapsed = 0.0
    for seed in range(25):
        rng = random.Random(1000 + seed)
        messages = random_oracle_corpus(rng)
        assert len(messages) <= 50
        events = [LogEvent(i, m) for i, m in enumerate(messages)]
        t0 = time.perf_counter()
        table = mine_templates(events, cfg)
        elapsed += time.perf_counter() - t0
        oracle = brute_force_groups(messages)
        mined = {t.tokens: t.support for t in table.template_list}
        assert mined == {key: len(group) for key, group in oracle.items()}, \
            f"corpus seed {seed} diverged from the oracle"
    assert elapsed < 1.0, f"mining took {elapsed:.3f}s, budget is 1s"


# -- criterion: pattern classifier accuracy and affine invariance

def test_pattern_oracle_accuracy_and_affine_invariance():
    suite = generate_shape_suite(seed=7, n=200)
    rules = PatternRuleConfig()
    hits = sum(
        1 for s in suite
        if classify_pattern(s.series, s.change_time, rules)[0] is s.label
    )
    accuracy = hits / len(suite)
    assert accuracy >= 0.95, f"accuracy {accuracy:.3f} below 0.95"

    rng = random.Random(2024)
    flips = 0
    for i in range(100):
        shape = suite[i % len(suite)]
        base, _ = classify_pattern(shape.series, shape.change_time, rules)
        a = 10.0 ** rng.uniform(-2.0, 2.0)
        b = rng.uniform(-1e5, 1e5)
        rescaled = MetricSeries(
            shape.series.name, shape.series.unit, shape.series.timestamps,
            tuple(a * v + b for v in shape.series.values),
        )
        got, _ = classify_pattern(rescaled, shape.change_time, rules)
        if got is not base:
            flips += 1
    assert flips == 0, f"{flips} class flips under affine rescaling"


# -- criterion: z-score normalization matches analytic values

def test_normalization_analytic_fixtures():
    fixtures = [
        ((1.0, 2.0, 3.0), (-1.2247448714, 0.0, 1.2247448714)),
        ((2.0, 4.0, 6.0, 8.0), (-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865)),
        ((10.0, 20.0), (-1.0, 1.0)),
    ]
    for values, expected in fixtures:
        out = normalize(MetricSeries("m", "u", tuple(range(len(values))), values))
        for got, want in zip(out.values, expected):
            assert got == pytest.approx(want, abs=1e-4)
    flat = normalize(MetricSeries("m", "u", (0, 1, 2), (5.0, 5.0, 5.0)))
    assert flat.values == (0.0, 0.0, 0.0)


# -- criterion: CoTScore identity, boundedness, monotone corruption, separation

REFERENCE_COT = """Observation: CPU utilization spikes right after the change rollout.
AnomalyAnalysis: The logs contain numerous out-of-memory errors and the change pins a caching library.
FaultClassification: The evidence profile matches ResourceExhaustion.
RootCause: The memory leak introduced by the new library drives garbage collection and CPU load.
Mitigation: Roll back the library upgrade and cap the cache size."""


def test_cotscore_properties():
    reference = segment_cot(REFERENCE_COT)
    cfg = CoTConfig()

    identity = score_cot(reference, reference, cfg)
    assert identity.aggregate == pytest.approx(1.0, abs=1e-6)

    rng = random.Random(99)
    vocab = [f"w{i}" for i in range(40)]
    noise_vocab = [f"qz{i}jx" for i in range(40)]
    kinds = list(CoTKind)
    for _ in range(1000):
        n = rng.randint(1, 5)
        ref_secs, cand_secs = [], []
        for i in range(n):
            ref_tokens = rng.choices(vocab, k=rng.randint(3, 12))
            keep = max(2, int(len(ref_tokens) * 0.6))
            cand_tokens = ref_tokens[:keep] + rng.choices(vocab, k=rng.randint(0, 4))
            ref_secs.append(CoTSection(kinds[i], " ".join(ref_tokens)))
            cand_secs.append(CoTSection(kinds[i], " ".join(cand_tokens)))
        result = score_cot(cand_secs, ref_secs, cfg)
        assert 0.0 <= result.aggregate <= 1.0
        assert all(0.0 <= v <= 1.0 for v in result.per_section.values())

        corrupt_at = rng.randrange(n)
        corrupted = list(cand_secs)
        corrupted[corrupt_at] = CoTSection(
            cand_secs[corrupt_at].kind,
            " ".join(rng.choices(noise_vocab, k=8)),
        )
        worse = score_cot(corrupted, ref_secs, cfg)
        assert worse.aggregate <= result.aggregate + 1e-12

    vague = segment_cot("Overall the CPU utilization is high, it's a CPU issue.")
    vague_score = score_cot(vague, reference, cfg)
    full_score = score_cot(reference, reference, cfg)
    assert 0.03 <= vague_score.aggregate <= 0.35, \
        f"vague fixture at {vague_score.aggregate:.3f}, outside the expected low band"
    assert not vague_score.passed
    assert full_score.aggregate >= 2.0 * vague_score.aggregate


# -- criterion: retrieval exactness at 500 records

def test_retrieval_exactness_500_records():
    def embedder(text):
        return mock_embedding(text, 256)

    rng = random.Random(5)
    vocab = [f"term{i}" for i in range(120)]
    kb = KnowledgeBase(embedder)
    texts = {}
    for i in range(500):
        text = " ".join(rng.choices(vocab, k=rng.randint(4, 16)))
        case_id = f"c{i:03d}"
        texts[case_id] = text
        kb.add_case(kb.make_record(
            case_id, text, AnalysisReport(case_id, False, 0.9),
            created_at=rng.randint(0, 10_000),
        ))

    def brute(query, k):
        qv = embedder(query).values
        scored = sorted(
            ((round(sum(a * b for a, b in zip(qv, rec.embedding.values)), 9),
              rec.created_at, rec.case_id) for rec in kb.records),
            key=lambda t: (-t[0], t[1], t[2]),
        )
        return [cid for _, _, cid in scored[:k]]

    for _ in range(30):
        query = " ".join(rng.choices(vocab, k=6))
        got = [r.case_id for r, _ in kb.retrieve(query, RetrievalConfig(k=10))]
        assert got == brute(query, 10)

    some_id = "c042"
    top = kb.retrieve(texts[some_id], RetrievalConfig(k=1))[0]
    assert top[1] == pytest.approx(1.0, abs=1e-6)

    import tempfile, pathlib
    with tempfile.TemporaryDirectory() as tmp:
        path = pathlib.Path(tmp) / "kb.jsonl"
        disk = KnowledgeBase(embedder, path=path)
        for rec in kb.records:
            disk.add_case(rec)
        reloaded = KnowledgeBase(embedder, path=path)
        for _ in range(10):
            query = " ".join(rng.choices(vocab, k=5))
            a = [(r.case_id, s) for r, s in disk.retrieve(query, RetrievalConfig(k=8))]
            b = [(r.case_id, s) for r, s in reloaded.retrieve(query, RetrievalConfig(k=8))]
            assert a == b


# -- criterion: end-to-end determinism and transcript-consistent accuracy

def test_end_to_end_determinism_and_wiring(corpus, transcript_path):
    bundles, _ = corpus
    t0 = time.perf_counter()
    runs = []
    for _ in range(2):
        gw = LlmGateway(ProviderConfig(transcript_path=str(transcript_path), strict=True))
        res = run_benchmark(bundles, InferenceConfig(), gw, ("full",))["full"]
        assert res.failures == {}
        runs.append(res)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0, f"two benchmark runs took {elapsed:.1f}s"

    blobs = [
        canonical_json([report_to_dict(r, canonical=True) for r in res.reports])
        for res in runs
    ]
    assert blobs[0] == blobs[1], "reports differ between identical runs"
    tables = [canonical_json(res.metrics.to_dict(canonical=True)) for res in runs]
    assert tables[0] == tables[1], "metrics tables differ between identical runs"
    assert runs[0].metrics.ecd.f1 == pytest.approx(1.0)


# -- criterion: ablation variants change prompt structure as specified

DESCRIPTION_MARKERS = ("shows a", "largest change", "no material change")


def test_ablation_prompt_structure(corpus, transcript_path, history_bundles):
    bundles, _ = corpus
    cfg = InferenceConfig()
    gw = LlmGateway(ProviderConfig(transcript_path=str(transcript_path), strict=True))
    res = run_benchmark(bundles, cfg, gw, ("full", "A1", "A2", "none"))

    pattern_names = [p.value for p in PatternClass if p is not PatternClass.NO_CHANGE]

    a1 = res["A1"].audit.records
    assert len(a1) == len(bundles)
    for rec in a1:
        for marker in DESCRIPTION_MARKERS:
            assert marker not in rec.user_prompt, f"A1 prompt still has '{marker}'"

    a2 = res["A2"].audit.records
    for rec in a2:
        for name in pattern_names:
            assert name not in rec.user_prompt, f"A2 prompt still names {name}"
        assert "anomalous from" not in rec.user_prompt

    # the full variant exercises the same markers, so the checks are not vacuous
    full = res["full"].audit.records
    assert any(
        any(m in rec.user_prompt for m in DESCRIPTION_MARKERS) for rec in full
    )
    assert any(
        any(n in rec.user_prompt for n in pattern_names) for rec in full
    )

    # no_rag against a populated KB: zero retrieved-case text
    lenient = LlmGateway(
        ProviderConfig(transcript_path=str(transcript_path), strict=False),
        fallback=scripted_reply,
    )
    kb = seed_kb_from_corpus(history_bundles, lenient, cfg)
    seeded = run_benchmark(bundles, cfg, lenient, ("none", "full"), kb=kb)
    for rec in seeded["none"].audit.records:
        assert "--- reference case" not in rec.user_prompt
        assert rec.retrieved_ids == ()
    assert all("--- reference case" in rec.user_prompt
               for rec in seeded["full"].audit.records)


# -- criterion: cold-start sweep sizes and monotone retrieval context

def test_cold_start_sweep_plumbing(corpus, history_bundles, transcript_path):
    bundles, _ = corpus
    assert len(history_bundles) == 20
    gw = LlmGateway(
        ProviderConfig(transcript_path=str(transcript_path), strict=False),
        fallback=scripted_reply,
    )
    points = sweep_cold_start([0.0, 0.1, 0.5, 1.0], seed=11, bundles=bundles,
                              history=history_bundles, cfg=InferenceConfig(), gateway=gw)
    assert [p.kb_size for p in points] == [0, 2, 10, 20]
    volumes = [p.context_volume for p in points]
    assert volumes == sorted(volumes), f"context volume not monotone: {volumes}"
    assert volumes[0] == 0 and volumes[-1] > 0


# -- criterion: feedback loop round trip, override, and reward export

def test_feedback_loop_round_trip(tmp_path, corpus, transcript_path):
    import json

    bundles, _ = corpus
    cfg = InferenceConfig()

    poor = """VERDICT: erroneous
CONFIDENCE: 0.5
FAULT_CLASS: Other
ROOT_CAUSES:
1. something vague -- unknown
Observation: stuff happened"""

    def staged(system, user):
        if "=== PREVIOUS ATTEMPT ===" in user:
            base = user.split("\n\n=== PREVIOUS ATTEMPT ===")[0]
            return scripted_reply(system, base)
        return poor

    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    gw = LlmGateway(ProviderConfig(transcript_path=str(empty), strict=False),
                    fallback=staged)
    history = seed_kb_from_corpus(bundles[:10], gw, cfg, case_id_suffix="/hist")
    audit = AuditStore()
    from changelens.engine import analyze_case

    erroneous = [b for b in bundles if b.ground_truth.erroneous][:3]
    for b in erroneous:
        analyze_case(b, history, gw, cfg, audit=audit)

    store = FeedbackStore(path=tmp_path / "fb.jsonl", audit=audit)
    ids = sorted(r.report_id for r in audit.records)
    store.record(FeedbackRecord(ids[0], FeedbackLabel.GOOD, created_at=1))
    store.record(FeedbackRecord(ids[1], FeedbackLabel.BAD, created_at=2))

    kto_path = tmp_path / "kto.jsonl"
    summary = export_alignment_datasets(
        audit, store, AlignmentExportConfig(ExportFormat.KTO_BINARY, str(kto_path)))
    assert summary.by_label == {"good": 1, "bad": 1}
    parsed = [json.loads(l) for l in kto_path.read_text().splitlines()]
    for line in parsed:
        rec = next(r for r in audit.records if r.prompt == line["prompt"])
        assert line["completion"] == rec.raw_output
        want = store.active_for(rec.report_id).label is FeedbackLabel.GOOD
        assert line["label"] == want

    # human Bad revokes what the gate admitted
    passed_rec = audit.get(ids[1])
    assert passed_rec.cot_score is not None and passed_rec.cot_score.passed
    gate_only = kb_update_decision(passed_rec.report, passed_rec.cot_score, None)
    assert gate_only.admit
    with_bad = kb_update_decision(passed_rec.report, passed_rec.cot_score,
                                  store.active_for(ids[1]))
    assert not with_bad.admit

    grpo_path = tmp_path / "grpo.jsonl"
    export_alignment_datasets(
        audit, store,
        AlignmentExportConfig(ExportFormat.GRPO_GROUPS, str(grpo_path),
                              include_unlabeled=True))
    groups = [json.loads(l) for l in grpo_path.read_text().splitlines()]
    assert groups
    saw_multi_attempt = False
    for group in groups:
        rec = next(r for r in audit.records if r.prompt == group["prompt"])
        expected = [a.aggregate for a in rec.attempts if a.aggregate is not None]
        assert group["rewards"] == expected, "rewards diverge from recorded scores"
        saw_multi_attempt = saw_multi_attempt or len(expected) > 1
    assert saw_multi_attempt, "fixture should exercise rewrite attempts"


# -- criterion: task metrics equal an independent oracle

def test_metrics_against_oracle_50_runs():
    for seed in range(50):
        rng = random.Random(7000 + seed)
        reports, truths = random_run(rng, rng.randint(4, 30))
        m = compute_metrics(reports, truths)
        (p, r, f1, fp_, fr_, ff_, t1, t3, t5, a5) = oracle_metrics(reports, truths)
        assert m.ecd.precision == pytest.approx(p)
        assert m.ecd.recall == pytest.approx(r)
        assert m.ecd.f1 == pytest.approx(f1)
        assert m.ft.precision == pytest.approx(fp_)
        assert m.ft.recall == pytest.approx(fr_)
        assert m.ft.f1 == pytest.approx(ff_)
        assert (m.top1, m.top3, m.top5) == pytest.approx((t1, t3, t5))
        assert m.avg_at_5 == pytest.approx(a5)

    from changelens.model import FaultClass, FaultKind, GroundTruth

    empty_rank = [AnalysisReport("x", True, 0.9,
                                 fault_class=FaultClass(FaultKind.CODE_DEFECT))]
    truths = {"x": GroundTruth(True, FaultClass(FaultKind.CODE_DEFECT), "anything")}
    m = compute_metrics(empty_rank, truths)
    assert m.top1 == m.top3 == m.top5 == 0.0
