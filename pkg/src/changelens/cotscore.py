"""Weighted per-section similarity between a generated chain of thought and
a reference one, with a pass/fail gate.

Sections pair by kind. A section the candidate lacks scores zero; a kind the
reference lacks is dropped from the weighted sum and the remaining weights
renormalize, so candidates are not punished for sections that cannot be
compared. Token-level scoring greedily matches each token to its most
similar counterpart, which with the offline hashed embeddings reduces to
set overlap.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .gateway import EmbeddingVector, mock_embedding
from .model import COT_KIND_ORDER, CoTKind, CoTSection


class EmptyReference(ValueError):
    pass


class SimilarityMethod(str, enum.Enum):
    GREEDY_TOKEN_F1 = "GreedyTokenF1"
    SENTENCE_COSINE = "SentenceCosine"


DEFAULT_WEIGHTS: dict[CoTKind, float] = {
    CoTKind.OBSERVATION: 0.15,
    CoTKind.ANOMALY_ANALYSIS: 0.20,
    CoTKind.FAULT_CLASSIFICATION: 0.20,
    CoTKind.ROOT_CAUSE: 0.30,
    CoTKind.MITIGATION: 0.15,
}


@dataclass(frozen=True)
class CoTConfig:
    weights: Mapping[CoTKind, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    similarity_method: SimilarityMethod = SimilarityMethod.GREEDY_TOKEN_F1
    threshold: float = 0.6

    def __post_init__(self) -> None:
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must be in [0, 1]")
        if set(self.weights) != set(CoTKind):
            raise ValueError("weights must cover every section kind")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be nonnegative")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")


@dataclass(frozen=True)
class CoTScoreResult:
    per_section: dict[CoTKind, float]
    aggregate: float
    passed: bool
    missing_sections: tuple[CoTKind, ...]


# -- segmentation -----------------------------------------------------------

_HEADER_ALIASES = {
    "observation": CoTKind.OBSERVATION,
    "observations": CoTKind.OBSERVATION,
    "anomalyanalysis": CoTKind.ANOMALY_ANALYSIS,
    "anomaly analysis": CoTKind.ANOMALY_ANALYSIS,
    "analysis": CoTKind.ANOMALY_ANALYSIS,
    "faultclassification": CoTKind.FAULT_CLASSIFICATION,
    "fault classification": CoTKind.FAULT_CLASSIFICATION,
    "classification": CoTKind.FAULT_CLASSIFICATION,
    "fault type": CoTKind.FAULT_CLASSIFICATION,
    "rootcause": CoTKind.ROOT_CAUSE,
    "root cause": CoTKind.ROOT_CAUSE,
    "root causes": CoTKind.ROOT_CAUSE,
    "conclusion": CoTKind.ROOT_CAUSE,
    "mitigation": CoTKind.MITIGATION,
    "mitigations": CoTKind.MITIGATION,
    "remediation": CoTKind.MITIGATION,
}

_HEADER_RE = re.compile(
    r"^\s*(?:#+\s*)?(" + "|".join(sorted(_HEADER_ALIASES, key=len, reverse=True)) + r")\s*[:：]\s*",
    re.IGNORECASE,
)


def segment_cot(text: str) -> list[CoTSection]:
    """Split text on the canonical section headers.

    Headerless text becomes a single Observation section; duplicate headers
    of one kind merge. Sections come back in canonical order.
    """
    chunks: dict[CoTKind, list[str]] = {}
    current: Optional[CoTKind] = None
    preamble: list[str] = []
    for line in text.splitlines():
        m = _HEADER_RE.match(line)
        if m:
            current = _HEADER_ALIASES[m.group(1).lower()]
            rest = line[m.end():]
            chunks.setdefault(current, [])
            if rest.strip():
                chunks[current].append(rest.strip())
        elif current is not None:
            chunks[current].append(line)
        else:
            preamble.append(line)
    if not chunks:
        body = "\n".join(preamble).strip()
        return [CoTSection(CoTKind.OBSERVATION, body)] if body else []
    out = []
    for kind in COT_KIND_ORDER:
        if kind in chunks:
            body = "\n".join(chunks[kind]).strip()
            if body:
                out.append(CoTSection(kind, body))
    return out


# -- similarity -------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def section_similarity(
    candidate: str,
    reference: str,
    method: SimilarityMethod = SimilarityMethod.GREEDY_TOKEN_F1,
    embedder: Callable[[str], EmbeddingVector] = mock_embedding,
) -> float:
    """Similarity in [0, 1] between one candidate section and its reference."""
    if not reference.strip():
        raise EmptyReference("reference section must be non-empty")
    if not candidate.strip():
        return 0.0
    if method is SimilarityMethod.SENTENCE_COSINE:
        cos = embedder(candidate).cosine(embedder(reference))
        return min(max((cos + 1.0) / 2.0, 0.0), 1.0)

    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not cand or not ref:
        return 0.0
    cache: dict[str, tuple[float, ...]] = {}

    def vec(tok: str) -> tuple[float, ...]:
        v = cache.get(tok)
        if v is None:
            v = cache[tok] = embedder(tok).values
        return v

    cmat = np.asarray([vec(t) for t in cand])
    rmat = np.asarray([vec(t) for t in ref])
    sims = np.clip(cmat @ rmat.T, 0.0, None)
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0
    f1 = 2.0 * precision * recall / (precision + recall)
    return min(max(f1, 0.0), 1.0)


def score_cot(
    candidate: Sequence[CoTSection],
    reference: Sequence[CoTSection],
    cfg: CoTConfig = CoTConfig(),
    embedder: Callable[[str], EmbeddingVector] = mock_embedding,
) -> CoTScoreResult:
    """Score candidate sections against the reference and apply the gate."""
    ref_by_kind = {s.kind: s for s in reference if s.text.strip()}
    if not ref_by_kind:
        raise EmptyReference("reference must contain at least one non-empty section")
    cand_by_kind = {s.kind: s for s in candidate}

    per_section: dict[CoTKind, float] = {}
    missing: list[CoTKind] = []
    total_weight = 0.0
    weighted = 0.0
    for kind in COT_KIND_ORDER:
        ref_sec = ref_by_kind.get(kind)
        if ref_sec is None:
            continue
        w = cfg.weights[kind]
        total_weight += w
        cand_sec = cand_by_kind.get(kind)
        if cand_sec is None or not cand_sec.text.strip():
            per_section[kind] = 0.0
            missing.append(kind)
            continue
        s = section_similarity(cand_sec.text, ref_sec.text, cfg.similarity_method, embedder)
        per_section[kind] = s
        weighted += w * s
    aggregate = weighted / total_weight if total_weight > 0 else 0.0
    aggregate = min(max(aggregate, 0.0), 1.0)
    return CoTScoreResult(
        per_section=per_section,
        aggregate=aggregate,
        passed=aggregate >= cfg.threshold,
        missing_sections=tuple(missing),
    )


def score_to_dict(result: CoTScoreResult) -> dict:
    return {
        "per_section": {k.value: v for k, v in result.per_section.items()},
        "aggregate": result.aggregate,
        "passed": result.passed,
        "missing_sections": [k.value for k in result.missing_sections],
    }


def score_from_dict(d: dict) -> CoTScoreResult:
    return CoTScoreResult(
        per_section={CoTKind(k): float(v) for k, v in d["per_section"].items()},
        aggregate=float(d["aggregate"]),
        passed=bool(d["passed"]),
        missing_sections=tuple(CoTKind(k) for k in d.get("missing_sections", [])),
    )
