#!/usr/bin/env python3
"""Cold-start and feedback-ratio sweeps with plot-ready output.

Usage:
    python scripts/run_sweeps.py [--fractions 0,0.1,0.5,1.0] [--out sweeps.json]
"""

import argparse
import json
import tempfile
from pathlib import Path

from changelens.engine import InferenceConfig
from changelens.evalharness import sweep_cold_start, sweep_feedback_ratio
from changelens.gateway import LlmGateway, ProviderConfig, save_transcript
from changelens.synth import CorpusSpec, generate_bundles, generate_corpus, scripted_reply


def points_to_rows(points):
    return [
        {
            "fraction": p.fraction,
            "kb_size": p.kb_size,
            "context_volume": p.context_volume,
            "ecd_f1": p.metrics.ecd.f1,
            "ft_f1": p.metrics.ft.f1,
            "rcca_top1": p.metrics.top1,
            "avg_at_5": p.metrics.avg_at_5,
        }
        for p in points
    ]


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--n-cases", type=int, default=20)
    parser.add_argument("--fractions", default="0,0.1,0.5,1.0")
    parser.add_argument("--sample-seed", type=int, default=11)
    parser.add_argument("--out", default="sweeps.json")
    args = parser.parse_args()

    fractions = [float(x) for x in args.fractions.split(",")]
    spec = CorpusSpec(seed=args.seed, n_cases=args.n_cases, erroneous_fraction=0.5)
    bundles, transcript = generate_corpus(spec)
    history = generate_bundles(CorpusSpec(seed=args.seed + 1, n_cases=args.n_cases,
                                          erroneous_fraction=0.5))

    with tempfile.TemporaryDirectory() as tmp:
        tpath = Path(tmp) / "transcript.jsonl"
        save_transcript(transcript, tpath)
        gateway = LlmGateway(
            ProviderConfig(transcript_path=str(tpath), strict=False),
            fallback=scripted_reply,
        )
        cfg = InferenceConfig()
        cold = sweep_cold_start(fractions, args.sample_seed, bundles, history, cfg, gateway)
        fb = sweep_feedback_ratio(fractions, args.sample_seed, bundles, cfg, gateway)

    payload = {
        "coldstart": points_to_rows(cold),
        "feedback": points_to_rows(fb),
    }
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    for kind, rows in payload.items():
        print(f"== {kind}")
        for row in rows:
            print(f"  p={row['fraction']:4.2f} kb={row['kb_size']:3d} "
                  f"ctx={row['context_volume']:4d} ecd_f1={row['ecd_f1']:.3f}")
    print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
