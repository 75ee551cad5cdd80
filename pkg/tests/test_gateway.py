import json
import math

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changelens.gateway import (
    Backend,
    ChatRequest,
    EmbeddingVector,
    EmptyText,
    LlmGateway,
    ProviderConfig,
    TokenLimit,
    TransportError,
    UnscriptedPrompt,
    load_transcript,
    mock_embedding,
    prompt_hash,
    save_transcript,
)


def mock_cfg(tmp_path, records=None, strict=True):
    path = tmp_path / "t.jsonl"
    save_transcript(records or {}, path)
    return ProviderConfig(transcript_path=str(path), strict=strict)


def test_scripted_reply_is_stable(tmp_path):
    key = prompt_hash("sys", "usr")
    gw = LlmGateway(mock_cfg(tmp_path, {key: {"reply": "scripted!"}}))
    req = ChatRequest("sys", "usr")
    assert gw.complete(req) == "scripted!"
    assert gw.complete(req) == "scripted!"


def test_unscripted_prompt_strict(tmp_path):
    gw = LlmGateway(mock_cfg(tmp_path))
    with pytest.raises(UnscriptedPrompt):
        gw.complete(ChatRequest("sys", "usr"))


def test_fallback_used_when_lenient(tmp_path):
    gw = LlmGateway(mock_cfg(tmp_path, strict=False),
                    fallback=lambda s, u: f"derived:{len(s)}:{len(u)}")
    assert gw.complete(ChatRequest("sys", "usr")) == "derived:3:3"


def test_scripted_token_limit(tmp_path):
    key = prompt_hash("sys", "usr")
    gw = LlmGateway(mock_cfg(tmp_path, {key: {"error": "token_limit"}}))
    with pytest.raises(TokenLimit):
        gw.complete(ChatRequest("sys", "usr"))


def test_transcript_round_trip(tmp_path):
    records = {"aa": {"reply": "one"}, "bb": {"reply": "two"}}
    path = tmp_path / "x.jsonl"
    save_transcript(records, path)
    loaded = load_transcript(path)
    assert loaded["aa"]["reply"] == "one"
    assert loaded["bb"]["reply"] == "two"


def test_missing_transcript_loads_empty(tmp_path):
    assert load_transcript(tmp_path / "absent.jsonl") == {}


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("", "usr")
    with pytest.raises(ValueError):
        ChatRequest("sys", "usr", temperature=-1.0)
    with pytest.raises(ValueError):
        ChatRequest("sys", "usr", max_tokens=0)


def test_provider_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig(backend=Backend.REMOTE).validate()
    with pytest.raises(ValueError):
        ProviderConfig(backend=Backend.MOCK, transcript_path="").validate()


# -- embeddings ---------------------------------------------------------------

def test_embed_deterministic(tmp_path):
    gw = LlmGateway(mock_cfg(tmp_path))
    a = gw.embed("memory leak in worker pool")
    b = gw.embed("memory leak in worker pool")
    assert a == b
    assert a.cosine(b) == pytest.approx(1.0, abs=1e-9)


def test_embed_disjoint_tokens_orthogonal(tmp_path):
    gw = LlmGateway(mock_cfg(tmp_path))
    a = gw.embed("alpha beta gamma")
    b = gw.embed("delta epsilon zeta")
    assert a.cosine(b) == pytest.approx(0.0, abs=1e-9)


def test_embed_overlap_positive(tmp_path):
    gw = LlmGateway(mock_cfg(tmp_path))
    a = gw.embed("alpha beta gamma")
    b = gw.embed("alpha beta other")
    assert a.cosine(b) > 0.0


def test_embed_empty_raises(tmp_path):
    gw = LlmGateway(mock_cfg(tmp_path))
    with pytest.raises(EmptyText):
        gw.embed("")


@given(st.text(alphabet="abcdefghij0123456789 !?", min_size=1, max_size=80))
@settings(max_examples=80, deadline=None)
def test_embed_norm_is_one(text):
    vec = mock_embedding(text, 256)
    norm = math.sqrt(sum(v * v for v in vec.values))
    assert norm == pytest.approx(1.0, abs=1e-9)


def test_embedding_vector_normalizes_on_creation():
    vec = EmbeddingVector((3.0, 4.0))
    assert vec.values == (0.6, 0.8)
    assert vec.dimension == 2


# -- remote backend via injected transport -------------------------------------

def remote_cfg():
    return ProviderConfig(backend=Backend.REMOTE, endpoint="http://llm.test/v1")


def test_remote_complete_payload_and_reply():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["payload"] = json.loads(request.content)
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "remote says hi"}, "finish_reason": "stop"}]
        })

    gw = LlmGateway(remote_cfg(), transport=httpx.MockTransport(handler))
    reply = gw.complete(ChatRequest("be brief", "hello", temperature=0.0, max_tokens=64))
    assert reply == "remote says hi"
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["payload"]["messages"][0] == {"role": "system", "content": "be brief"}
    assert seen["payload"]["messages"][1] == {"role": "user", "content": "hello"}
    assert seen["payload"]["temperature"] == 0.0


def test_remote_token_limit():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "trunc"}, "finish_reason": "length"}]
        })

    gw = LlmGateway(remote_cfg(), transport=httpx.MockTransport(handler))
    with pytest.raises(TokenLimit):
        gw.complete(ChatRequest("s", "u"))


def test_remote_retries_then_transport_error():
    calls = {"n": 0}
    sleeps = []

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        raise httpx.ConnectError("refused", request=request)

    gw = LlmGateway(remote_cfg(), transport=httpx.MockTransport(handler),
                    sleeper=sleeps.append)
    with pytest.raises(TransportError) as err:
        gw.complete(ChatRequest("s", "u"))
    assert calls["n"] == 3
    assert "after 3 attempts" in str(err.value)
    assert sleeps == [0.5, 1.0]  # exponential backoff between attempts


def test_remote_embeddings():
    def handler(request: httpx.Request) -> httpx.Response:
        assert request.url.path.endswith("/embeddings")
        return httpx.Response(200, json={"data": [{"embedding": [1.0, 0.0, 0.0]}]})

    gw = LlmGateway(remote_cfg(), transport=httpx.MockTransport(handler))
    vec = gw.embed("anything")
    assert vec.values == (1.0, 0.0, 0.0)


def test_audit_sink_receives_record(tmp_path):
    key = prompt_hash("sys", "usr")
    rows = []
    gw = LlmGateway(mock_cfg(tmp_path, {key: {"reply": "ok"}}), audit_sink=rows.append)
    gw.complete(ChatRequest("sys", "usr"))
    assert rows and rows[0]["backend"] == "DeterministicMock"
    assert rows[0]["prompt_hash"] == key
