"""Persistent historical case store with exact vector retrieval.

Storage is an append-only JSONL record log; the in-memory index is rebuilt
on load. At desk scale (hundreds of cases) brute-force cosine ranking is
exact, cheap, and trivially testable against an independent oracle.
"""

from __future__ import annotations

import enum
import json
import random
import threading
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .gateway import EmbeddingVector
from .model import (
    AnalysisReport,
    GroundTruth,
    canonical_json,
    report_from_dict,
    report_to_dict,
    truth_from_dict,
    truth_to_dict,
)


class DuplicateId(ValueError):
    pass


class EmptyQuery(ValueError):
    pass


class AdmittedBy(str, enum.Enum):
    SEED = "Seed"
    COTSCORE_GATE = "CoTScoreGate"
    HUMAN_GOOD = "HumanGood"


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 3
    min_similarity: float = 0.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 <= self.min_similarity <= 1.0):
            raise ValueError("min_similarity must be in [0, 1]")


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    domain_text: str
    report: AnalysisReport
    embedding: EmbeddingVector
    ground_truth: Optional[GroundTruth] = None
    admitted_by: AdmittedBy = AdmittedBy.SEED
    created_at: int = 0


def record_to_dict(rec: CaseRecord) -> dict:
    return {
        "case_id": rec.case_id,
        "domain_text": rec.domain_text,
        "report": report_to_dict(rec.report),
        "ground_truth": truth_to_dict(rec.ground_truth),
        "embedding": list(rec.embedding.values),
        "admitted_by": rec.admitted_by.value,
        "created_at": rec.created_at,
    }


def record_from_dict(d: dict) -> CaseRecord:
    return CaseRecord(
        case_id=d["case_id"],
        domain_text=d["domain_text"],
        report=report_from_dict(d["report"]),
        embedding=EmbeddingVector(tuple(d["embedding"])),
        ground_truth=truth_from_dict(d.get("ground_truth")),
        admitted_by=AdmittedBy(d["admitted_by"]),
        created_at=int(d.get("created_at", 0)),
    )


class KnowledgeBase:
    """Case store with many concurrent readers and one serialized writer.

    ``path=None`` keeps the store in memory only; with a path every
    admission is appended to the log before it becomes visible.
    """

    def __init__(
        self,
        embedder: Callable[[str], EmbeddingVector],
        path=None,
    ) -> None:
        self._embedder = embedder
        self._path = path
        self._lock = threading.Lock()
        self._records: list[CaseRecord] = []
        self._ids: set[str] = set()
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if line:
                            self._attach(record_from_dict(json.loads(line)))
            except FileNotFoundError:
                pass

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[CaseRecord, ...]:
        return tuple(self._records)

    def _attach(self, rec: CaseRecord) -> None:
        if rec.case_id in self._ids:
            raise DuplicateId(f"case_id already present: {rec.case_id}")
        self._records.append(rec)
        self._ids.add(rec.case_id)

    def make_record(
        self,
        case_id: str,
        domain_text: str,
        report: AnalysisReport,
        ground_truth: Optional[GroundTruth] = None,
        admitted_by: AdmittedBy = AdmittedBy.SEED,
        created_at: int = 0,
    ) -> CaseRecord:
        """Build a record whose embedding matches the active backend."""
        return CaseRecord(
            case_id=case_id,
            domain_text=domain_text,
            report=report,
            embedding=self._embedder(domain_text),
            ground_truth=ground_truth,
            admitted_by=admitted_by,
            created_at=created_at,
        )

    def add_case(self, rec: CaseRecord) -> str:
        """Persist a record atomically; it is retrievable on return."""
        with self._lock:
            if rec.case_id in self._ids:
                raise DuplicateId(f"case_id already present: {rec.case_id}")
            if self._path is not None:
                line = json.dumps(record_to_dict(rec), sort_keys=True, ensure_ascii=False)
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
            self._attach(rec)
        return rec.case_id

    def retrieve(
        self, query_text: str, cfg: RetrievalConfig = RetrievalConfig()
    ) -> list[tuple[CaseRecord, float]]:
        """Top-k records by cosine similarity to the query embedding.

        Exact brute-force ranking; ties break by created_at then case_id.
        """
        if not query_text:
            raise EmptyQuery("query_text must be non-empty")
        with self._lock:
            records = list(self._records)
        if not records:
            return []
        q = np.asarray(self._embedder(query_text).values)
        mat = np.asarray([r.embedding.values for r in records])
        # quantize so ranking is independent of float summation order
        sims = np.round(mat @ q, 9)
        order = sorted(
            range(len(records)),
            key=lambda i: (-sims[i], records[i].created_at, records[i].case_id),
        )
        out = []
        for i in order:
            if sims[i] < cfg.min_similarity:
                continue
            out.append((records[i], float(sims[i])))
            if len(out) == cfg.k:
                break
        return out

    def sample_fraction(self, p: float, seed: int) -> "KnowledgeBase":
        """In-memory sub-store with round(p*N) records, round-half-up,
        drawn pseudo-randomly under the seed."""
        if not (0.0 <= p <= 1.0):
            raise ValueError("fraction must be in [0, 1]")
        n = len(self._records)
        k = int(p * n + 0.5)
        rng = random.Random(seed)
        picked = sorted(rng.sample(range(n), k)) if k else []
        sub = KnowledgeBase(self._embedder, path=None)
        for i in picked:
            sub._attach(self._records[i])
        return sub

    def remove_case(self, case_id: str) -> bool:
        """Drop a record (human override of an earlier admission); rewrites
        the log. Returns False when the id is unknown."""
        with self._lock:
            if case_id not in self._ids:
                return False
            self._records = [r for r in self._records if r.case_id != case_id]
            self._ids.discard(case_id)
            if self._path is not None:
                with open(self._path, "w", encoding="utf-8") as fh:
                    for rec in self._records:
                        fh.write(json.dumps(record_to_dict(rec), sort_keys=True,
                                            ensure_ascii=False) + "\n")
        return True

    def stats(self) -> dict:
        by_admission: dict[str, int] = {}
        for r in self._records:
            by_admission[r.admitted_by.value] = by_admission.get(r.admitted_by.value, 0) + 1
        dims = {r.embedding.dimension for r in self._records}
        return {
            "records": len(self._records),
            "by_admitted": dict(sorted(by_admission.items())),
            "embedding_dim": sorted(dims)[0] if len(dims) == 1 else sorted(dims),
        }

    def export_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self._records:
                fh.write(json.dumps(record_to_dict(rec), sort_keys=True, ensure_ascii=False) + "\n")

    def rebuild_embeddings(self) -> None:
        """Re-embed every stored domain text under the current backend.

        Needed after switching embedding backends; rewrites the log."""
        with self._lock:
            self._records = [
                replace(r, embedding=self._embedder(r.domain_text)) for r in self._records
            ]
            if self._path is not None:
                with open(self._path, "w", encoding="utf-8") as fh:
                    for rec in self._records:
                        fh.write(json.dumps(record_to_dict(rec), sort_keys=True,
                                            ensure_ascii=False) + "\n")
