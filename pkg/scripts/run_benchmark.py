#!/usr/bin/env python3
"""Generate the seed-42 synthetic corpus and benchmark every variant.

Usage:
    python scripts/run_benchmark.py [--seed 42] [--n-cases 20] [--out metrics.json]
"""

import argparse
import json
import tempfile
from pathlib import Path

from changelens.engine import InferenceConfig
from changelens.evalharness import VARIANTS, run_benchmark
from changelens.gateway import LlmGateway, ProviderConfig, save_transcript
from changelens.synth import CorpusSpec, generate_corpus


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--n-cases", type=int, default=20)
    parser.add_argument("--erroneous-fraction", type=float, default=0.5)
    parser.add_argument("--out", default="benchmark_metrics.json")
    args = parser.parse_args()

    spec = CorpusSpec(seed=args.seed, n_cases=args.n_cases,
                      erroneous_fraction=args.erroneous_fraction)
    bundles, transcript = generate_corpus(spec)

    with tempfile.TemporaryDirectory() as tmp:
        tpath = Path(tmp) / "transcript.jsonl"
        save_transcript(transcript, tpath)
        gateway = LlmGateway(ProviderConfig(transcript_path=str(tpath)))
        results = run_benchmark(bundles, InferenceConfig(), gateway, sorted(VARIANTS))

    print(f"{'variant':10s} {'ecd_f1':>7s} {'ft_f1':>7s} {'top1':>6s} {'avg@5':>6s} {'mean_s':>7s}")
    for variant in sorted(results):
        m = results[variant].metrics
        print(f"{variant:10s} {m.ecd.f1:7.3f} {m.ft.f1:7.3f} {m.top1:6.3f} "
              f"{m.avg_at_5:6.3f} {m.runtime_mean_s:7.3f}")

    payload = {v: r.metrics.to_dict() for v, r in results.items()}
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
