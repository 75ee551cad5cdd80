"""Provider-agnostic chat completion and text embedding.

Two backends share one interface: an HTTP client speaking the de-facto open
chat-completions schema, and a deterministic offline backend that replays a
scripted transcript keyed by prompt hash. The offline backend makes whole
pipeline runs bit-reproducible, which the test suite leans on heavily.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import httpx

DEFAULT_EMBEDDING_DIM = 1024
MAX_RETRIES = 3


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    pass


class TokenLimit(GatewayError):
    pass


class UnscriptedPrompt(GatewayError):
    pass


class EmptyText(ValueError):
    pass


class Backend(str, enum.Enum):
    REMOTE = "Remote"
    MOCK = "DeterministicMock"


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        norm = math.sqrt(sum(v * v for v in vals))
        # skip the division when already unit-norm so persisted vectors
        # round-trip bit-exactly
        if norm > 0 and abs(norm - 1.0) > 1e-12:
            vals = tuple(v / norm for v in vals)
        object.__setattr__(self, "values", vals)

    @property
    def dimension(self) -> int:
        return len(self.values)

    def cosine(self, other: "EmbeddingVector") -> float:
        return sum(a * b for a, b in zip(self.values, other.values))


@dataclass(frozen=True)
class ProviderConfig:
    backend: Backend = Backend.MOCK
    endpoint: str = ""
    model_name: str = "local-7b"
    transcript_path: str = ""
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    strict: bool = True
    max_inflight: int = 4
    timeout_s: float = 30.0

    def validate(self) -> None:
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")
        if self.backend is Backend.REMOTE and not self.endpoint:
            raise ValueError("Remote backend requires an endpoint")
        if self.backend is Backend.MOCK and not self.transcript_path:
            raise ValueError("DeterministicMock backend requires a transcript_path")


def prompt_hash(system_prompt: str, user_prompt: str) -> str:
    h = hashlib.sha256()
    h.update(system_prompt.encode("utf-8"))
    h.update(b"\x00")
    h.update(user_prompt.encode("utf-8"))
    return h.hexdigest()


def load_transcript(path) -> dict[str, dict]:
    """Transcript file: one JSON record per line, {prompt_hash, reply}.
    A missing file loads as an empty transcript."""
    out: dict[str, dict] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                out[rec["prompt_hash"]] = rec
    except FileNotFoundError:
        pass
    return out


def save_transcript(records: dict[str, dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(records):
            rec = dict(records[key])
            rec["prompt_hash"] = key
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def mock_embedding(text: str, dim: int = DEFAULT_EMBEDDING_DIM) -> EmbeddingVector:
    """Hashed bag-of-words embedding: stable across machines and runs."""
    if not text:
        raise EmptyText("cannot embed empty text")
    counts = [0.0] * dim
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        tokens = [text]
    for tok in tokens:
        bucket = int.from_bytes(hashlib.sha1(tok.encode("utf-8")).digest()[:8], "big") % dim
        counts[bucket] += 1.0
    return EmbeddingVector(tuple(counts))


class LlmGateway:
    """Shared-state entry point for completions and embeddings.

    ``fallback`` (mock only) is consulted for prompts missing from the
    transcript when strict mode is off; it must be a pure function of the
    prompts so determinism is preserved.
    """

    def __init__(
        self,
        cfg: ProviderConfig,
        *,
        fallback: Optional[Callable[[str, str], str]] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleeper: Callable[[float], None] = time.sleep,
        audit_sink: Optional[Callable[[dict], None]] = None,
    ) -> None:
        cfg.validate()
        self.cfg = cfg
        self._fallback = fallback
        self._sleeper = sleeper
        self._audit = audit_sink
        self._sem = threading.Semaphore(max(cfg.max_inflight, 1))
        self._transcript: dict[str, dict] = {}
        if cfg.backend is Backend.MOCK:
            self._transcript = load_transcript(cfg.transcript_path)
        self._client = httpx.Client(transport=transport, timeout=cfg.timeout_s)

    # -- completions --------------------------------------------------

    def complete(self, request: ChatRequest) -> str:
        with self._sem:
            if self.cfg.backend is Backend.MOCK:
                reply = self._complete_mock(request)
            else:
                reply = self._complete_remote(request)
        if self._audit is not None:
            self._audit({
                "backend": self.cfg.backend.value,
                "model": self.cfg.model_name,
                "prompt_hash": prompt_hash(request.system_prompt, request.user_prompt),
                "reply_chars": len(reply),
            })
        return reply

    def _complete_mock(self, request: ChatRequest) -> str:
        key = prompt_hash(request.system_prompt, request.user_prompt)
        rec = self._transcript.get(key)
        if rec is not None:
            if rec.get("error") == "token_limit":
                raise TokenLimit("scripted token limit")
            return rec["reply"]
        if not self.cfg.strict and self._fallback is not None:
            return self._fallback(request.system_prompt, request.user_prompt)
        raise UnscriptedPrompt(f"no transcript entry for prompt hash {key}")

    def _complete_remote(self, request: ChatRequest) -> str:
        payload = {
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self._post_with_retry("/chat/completions", payload)
        choice = data["choices"][0]
        if choice.get("finish_reason") == "length":
            raise TokenLimit("completion truncated at max_tokens")
        return choice["message"]["content"]

    def _post_with_retry(self, route: str, payload: dict) -> dict:
        url = self.cfg.endpoint.rstrip("/") + route
        headers = {}
        api_key = os.environ.get("CHANGELENS_API_KEY", "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last: Optional[Exception] = None
        for attempt in range(MAX_RETRIES):
            try:
                resp = self._client.post(url, json=payload, headers=headers)
                resp.raise_for_status()
                return resp.json()
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last = exc
                if attempt < MAX_RETRIES - 1:
                    self._sleeper(0.5 * (2 ** attempt))
        raise TransportError(f"endpoint unreachable after {MAX_RETRIES} attempts: {last}")

    # -- embeddings ----------------------------------------------------

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise EmptyText("cannot embed empty text")
        if self.cfg.backend is Backend.MOCK:
            return mock_embedding(text, self.cfg.embedding_dim)
        data = self._post_with_retry(
            "/embeddings", {"model": self.cfg.model_name, "input": text}
        )
        return EmbeddingVector(tuple(data["data"][0]["embedding"]))

    def close(self) -> None:
        self._client.close()
