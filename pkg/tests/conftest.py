import pytest

from changelens.engine import InferenceConfig

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::", 1)[1]
        _acceptance_results[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _acceptance_results.items():
        terminalreporter.write_line(f"{outcome:6s}  {name}")
from changelens.gateway import LlmGateway, ProviderConfig, save_transcript
from changelens.model import (
    CaseBundle,
    ChangeTicket,
    ChangeType,
    GroundTruth,
    LogEvent,
    MetricSeries,
)
from changelens.synth import CorpusSpec, generate_bundles, generate_corpus, scripted_reply

CORPUS_SPEC = CorpusSpec(seed=42, n_cases=20, erroneous_fraction=0.5)

BASE = 1_700_000_000


def make_quiet_bundle(ticket_id: str = "T-1") -> CaseBundle:
    """Small well-formed bundle with flat metrics and matching logs."""
    start = BASE
    change = BASE + 600
    end = BASE + 1200
    ts = tuple(range(start, end, 60))
    values = tuple(10.0 for _ in ts)
    ticket = ChangeTicket(
        ticket_id=ticket_id,
        service="svc-a",
        change_type=ChangeType.CONFIG_CHANGE,
        submit_time=start - 300,
        analysis_start=start,
        analysis_end=end,
        description="config tweak",
    )
    return CaseBundle(
        ticket=ticket,
        metrics=(MetricSeries("cpu", "pct", ts, values),),
        pre_change_logs=(
            LogEvent(start + 30, "worker heartbeat ok"),
            LogEvent(start + 90, "worker heartbeat ok"),
        ),
        post_change_logs=(
            LogEvent(change + 30, "worker heartbeat ok"),
            LogEvent(change + 90, "worker heartbeat ok"),
        ),
        change_time=change,
        ground_truth=GroundTruth(erroneous=False),
    )


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(CORPUS_SPEC)


@pytest.fixture(scope="session")
def history_bundles():
    return generate_bundles(CorpusSpec(seed=43, n_cases=20, erroneous_fraction=0.5))


@pytest.fixture(scope="session")
def transcript_path(corpus, tmp_path_factory):
    _, transcript = corpus
    path = tmp_path_factory.mktemp("transcript") / "transcript.jsonl"
    save_transcript(transcript, path)
    return path


@pytest.fixture(scope="session")
def strict_gateway(transcript_path):
    return LlmGateway(ProviderConfig(transcript_path=str(transcript_path), strict=True))


@pytest.fixture(scope="session")
def lenient_gateway(transcript_path):
    return LlmGateway(
        ProviderConfig(transcript_path=str(transcript_path), strict=False),
        fallback=scripted_reply,
    )


@pytest.fixture()
def empty_mock_gateway(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    return LlmGateway(
        ProviderConfig(transcript_path=str(path), strict=False),
        fallback=scripted_reply,
    )


@pytest.fixture(scope="session")
def default_cfg():
    return InferenceConfig()
