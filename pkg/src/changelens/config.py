"""One human-editable YAML config file covering every tunable.

Secrets never live in the file: the API key comes from CHANGELENS_API_KEY
and the service auth token can be overridden with CHANGELENS_AUTH_TOKEN.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .cotscore import CoTConfig, SimilarityMethod
from .domaintext import AblationFlags
from .engine import InferenceConfig
from .gateway import Backend, ProviderConfig
from .kb import RetrievalConfig
from .logmine import DrainConfig
from .metricprep import PatternRuleConfig
from .model import CoTKind


@dataclass(frozen=True)
class StorageConfig:
    data_dir: str = "./data"

    @property
    def kb_path(self) -> Path:
        return Path(self.data_dir) / "kb.jsonl"

    @property
    def audit_path(self) -> Path:
        return Path(self.data_dir) / "audit.jsonl"

    @property
    def feedback_path(self) -> Path:
        return Path(self.data_dir) / "feedback.jsonl"

    @property
    def cases_dir(self) -> Path:
        return Path(self.data_dir) / "cases"

    def ensure(self) -> None:
        Path(self.data_dir).mkdir(parents=True, exist_ok=True)
        self.cases_dir.mkdir(parents=True, exist_ok=True)


@dataclass(frozen=True)
class ServiceConfig:
    listen_address: str = "127.0.0.1:8080"
    auth_token: str = ""
    workers: int = 4

    @property
    def host(self) -> str:
        return self.listen_address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_address.rsplit(":", 1)[1])


@dataclass(frozen=True)
class AppConfig:
    provider: ProviderConfig = ProviderConfig(transcript_path="transcript.jsonl")
    inference: InferenceConfig = InferenceConfig()
    storage: StorageConfig = StorageConfig()
    service: ServiceConfig = ServiceConfig()


def _provider_from(d: Mapping[str, Any], env: Mapping[str, str]) -> ProviderConfig:
    endpoint = env.get("CHANGELENS_ENDPOINT", d.get("endpoint", ""))
    transcript = env.get("CHANGELENS_TRANSCRIPT", d.get("transcript_path", "transcript.jsonl"))
    return ProviderConfig(
        backend=Backend(d.get("backend", "DeterministicMock")),
        endpoint=endpoint,
        model_name=d.get("model_name", "local-7b"),
        transcript_path=transcript,
        embedding_dim=int(d.get("embedding_dim", 1024)),
        strict=bool(d.get("strict", True)),
        max_inflight=int(d.get("max_inflight", 4)),
        timeout_s=float(d.get("timeout_s", 30.0)),
    )


def _weights_from(d: Mapping[str, Any]) -> dict[CoTKind, float]:
    out = dict(CoTConfig().weights)
    for key, value in d.items():
        out[CoTKind(key)] = float(value)
    return out


def _inference_from(d: Mapping[str, Any]) -> InferenceConfig:
    retrieval = d.get("retrieval", {})
    ablation = d.get("ablation", {})
    cot = d.get("cot", {})
    drain = d.get("drain", {})
    rules = d.get("pattern_rules", {})
    inf = d.get("inference", {})
    return InferenceConfig(
        retrieval=RetrievalConfig(
            k=int(retrieval.get("k", 3)),
            min_similarity=float(retrieval.get("min_similarity", 0.0)),
        ),
        flags=AblationFlags(
            drop_descriptions=bool(ablation.get("drop_descriptions", False)),
            drop_detector=bool(ablation.get("drop_detector", False)),
            drop_rag=bool(ablation.get("drop_rag", False)),
            drop_cot=bool(ablation.get("drop_cot", False)),
        ),
        cot=CoTConfig(
            weights=_weights_from(cot.get("weights", {})),
            similarity_method=SimilarityMethod(cot.get("similarity_method", "GreedyTokenF1")),
            threshold=float(cot.get("threshold", 0.6)),
        ),
        max_rewrites=int(inf.get("max_rewrites", 2)),
        task_set=frozenset(inf.get("task_set", ["ECD", "FT", "RCCA"])),
        drain=DrainConfig(
            tree_depth=int(drain.get("tree_depth", 4)),
            similarity_threshold=float(drain.get("similarity_threshold", 0.4)),
            max_children=int(drain.get("max_children", 100)),
        ),
        rules=PatternRuleConfig(
            spike_z=float(rules.get("spike_z", 3.0)),
            shift_ratio=float(rules.get("shift_ratio", 0.3)),
            slope_min=float(rules.get("slope_min", 0.5)),
            var_ratio=float(rules.get("var_ratio", 2.0)),
            epsilon=float(rules.get("epsilon", 1e-9)),
        ),
        window_seconds=int(inf.get("window_seconds", 300)),
        max_tokens=int(inf.get("max_tokens", 4096)),
    )


def config_from_dict(d: Mapping[str, Any], env: Optional[Mapping[str, str]] = None) -> AppConfig:
    env = env if env is not None else os.environ
    service = d.get("service", {})
    storage = d.get("storage", {})
    return AppConfig(
        provider=_provider_from(d.get("provider", {}), env),
        inference=_inference_from(d),
        storage=StorageConfig(data_dir=storage.get("data_dir", "./data")),
        service=ServiceConfig(
            listen_address=service.get("listen_address", "127.0.0.1:8080"),
            auth_token=env.get("CHANGELENS_AUTH_TOKEN", service.get("auth_token", "")),
            workers=int(service.get("workers", 4)),
        ),
    )


def load_config(path=None, env: Optional[Mapping[str, str]] = None) -> AppConfig:
    """Load the YAML config; a missing path yields pure defaults plus env
    overrides."""
    data: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    return config_from_dict(data, env)


EXAMPLE_CONFIG = """\
provider:
  backend: DeterministicMock     # or Remote
  endpoint: ""                   # Remote only; env CHANGELENS_ENDPOINT overrides
  model_name: local-7b
  transcript_path: transcript.jsonl
  embedding_dim: 1024
  strict: true
  max_inflight: 4

retrieval:
  k: 3
  min_similarity: 0.0

ablation:
  drop_descriptions: false
  drop_detector: false
  drop_rag: false
  drop_cot: false

cot:
  threshold: 0.6
  similarity_method: GreedyTokenF1
  weights:
    Observation: 0.15
    AnomalyAnalysis: 0.20
    FaultClassification: 0.20
    RootCause: 0.30
    Mitigation: 0.15

inference:
  max_rewrites: 2
  task_set: [ECD, FT, RCCA]
  window_seconds: 300
  max_tokens: 4096

drain:
  tree_depth: 4
  similarity_threshold: 0.4
  max_children: 100

pattern_rules:
  spike_z: 3.0
  shift_ratio: 0.3
  slope_min: 0.5
  var_ratio: 2.0
  epsilon: 1.0e-9

storage:
  data_dir: ./data

service:
  listen_address: 127.0.0.1:8080
  auth_token: ""                 # env CHANGELENS_AUTH_TOKEN overrides
  workers: 4
"""
