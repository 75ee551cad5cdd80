"""Command-line entry points.

Exit codes: 0 success, 1 domain error (machine-readable JSON on stderr),
2 usage error. Every subcommand drives the same pipeline code as the HTTP
service.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import AppConfig, EXAMPLE_CONFIG, load_config
from .cotscore import score_cot, score_to_dict, segment_cot
from .engine import AuditStore, analyze_case
from .evalharness import (
    VARIANTS,
    run_benchmark,
    sweep_cold_start,
    sweep_feedback_ratio,
)
from .feedback import (
    AlignmentExportConfig,
    ExportFormat,
    FeedbackLabel,
    FeedbackRecord,
    FeedbackStore,
    export_alignment_datasets,
)
from .gateway import Backend, LlmGateway, save_transcript
from .kb import KnowledgeBase
from .model import (
    bundle_to_dict,
    load_bundle,
    report_to_dict,
    validate_bundle,
    validate_corpus,
)
from .synth import CorpusSpec, generate_bundles, generate_corpus, scripted_reply


class CliError(Exception):
    def __init__(self, code: str, message: str, detail=None) -> None:
        super().__init__(message)
        self.code = code
        self.detail = detail


def _gateway(cfg: AppConfig) -> LlmGateway:
    fallback = scripted_reply if cfg.provider.backend is Backend.MOCK else None
    return LlmGateway(cfg.provider, fallback=fallback)


def _load_corpus(corpus_dir: str):
    manifest_path = Path(corpus_dir) / "corpus.json"
    if not manifest_path.exists():
        raise CliError("missing_corpus", f"no corpus manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    bundles = [load_bundle(Path(corpus_dir) / rel) for rel in manifest["case_files"]]
    transcript = Path(corpus_dir) / manifest.get("transcript", "transcript.jsonl")
    return manifest, bundles, transcript


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    cases_dir = Path(args.data_dir or cfg.storage.data_dir) / "cases"
    cases_dir.mkdir(parents=True, exist_ok=True)
    bundles = [load_bundle(p) for p in args.case]
    result = validate_corpus(bundles)
    if not result.ok:
        raise CliError(
            "invalid_bundle", "validation failed",
            [{"path": v.path, "message": v.message} for v in result.violations],
        )
    stored = []
    for bundle in bundles:
        out = cases_dir / f"{bundle.ticket.ticket_id}.json"
        out.write_text(
            json.dumps(bundle_to_dict(bundle), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        stored.append(str(out))
    print(json.dumps({"stored": stored}, indent=2))
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    bundle = load_bundle(args.case)
    result = validate_bundle(bundle)
    if not result.ok:
        raise CliError(
            "invalid_bundle", "bundle fails validation",
            [{"path": v.path, "message": v.message} for v in result.violations],
        )
    gw = _gateway(cfg)
    kb = KnowledgeBase(gw.embed, path=args.kb) if args.kb else None
    audit = AuditStore()
    report = analyze_case(bundle, kb, gw, cfg.inference, audit=audit)
    payload = report_to_dict(report)
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                                  encoding="utf-8")
    else:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    if args.audit:
        audit.save(args.audit)
    return 0


def cmd_bench_gen_corpus(args) -> int:
    spec = CorpusSpec(
        seed=args.seed,
        n_cases=args.n_cases,
        erroneous_fraction=args.erroneous_fraction,
    )
    out_dir = Path(args.out)
    (out_dir / "cases").mkdir(parents=True, exist_ok=True)
    bundles, transcript = generate_corpus(spec)
    case_files = []
    for bundle in bundles:
        rel = f"cases/{bundle.ticket.ticket_id}.json"
        (out_dir / rel).write_text(
            json.dumps(bundle_to_dict(bundle), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        case_files.append(rel)
    save_transcript(transcript, out_dir / "transcript.jsonl")
    manifest = {
        "seed": spec.seed,
        "n_cases": spec.n_cases,
        "erroneous_fraction": spec.erroneous_fraction,
        "case_files": case_files,
        "transcript": "transcript.jsonl",
    }
    (out_dir / "corpus.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"corpus_dir": str(out_dir), "cases": len(case_files)}))
    return 0


def _corpus_gateway(cfg: AppConfig, transcript: Path) -> LlmGateway:
    provider = cfg.provider
    if provider.backend is Backend.MOCK and transcript.exists():
        provider = replace(provider, transcript_path=str(transcript))
    return LlmGateway(provider, fallback=scripted_reply
                      if provider.backend is Backend.MOCK else None)


def cmd_bench_run(args) -> int:
    cfg = load_config(args.config)
    _, bundles, transcript = _load_corpus(args.corpus)
    gw = _corpus_gateway(cfg, transcript)
    kb = KnowledgeBase(gw.embed, path=args.kb) if args.kb else None
    variants = args.variant or ["full"]
    results = run_benchmark(bundles, cfg.inference, gw, variants, kb=kb)
    table = {v: r.metrics.to_dict() for v, r in results.items()}
    failures = {v: r.failures for v, r in results.items() if r.failures}
    payload = {"variants": table, "failures": failures}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(_format_metrics_table(results))
    if args.audit_dir:
        audit_dir = Path(args.audit_dir)
        audit_dir.mkdir(parents=True, exist_ok=True)
        for v, r in results.items():
            r.audit.save(audit_dir / f"audit_{v}.jsonl")
    return 0


def _format_metrics_table(results) -> str:
    lines = [f"{'variant':10s} {'ecd_f1':>7s} {'ft_f1':>7s} {'top1':>6s} {'top3':>6s} "
             f"{'top5':>6s} {'avg@5':>6s} {'mean_s':>7s}"]
    for v, r in results.items():
        m = r.metrics
        lines.append(
            f"{v:10s} {m.ecd.f1:7.3f} {m.ft.f1:7.3f} {m.top1:6.3f} {m.top3:6.3f} "
            f"{m.top5:6.3f} {m.avg_at_5:6.3f} {m.runtime_mean_s:7.3f}"
        )
    return "\n".join(lines)


def cmd_bench_sweep(args) -> int:
    cfg = load_config(args.config)
    manifest, bundles, transcript = _load_corpus(args.corpus)
    provider = replace(cfg.provider, strict=False)
    gw = _corpus_gateway(replace(cfg, provider=provider), transcript)
    fractions = [float(x) for x in args.fractions.split(",") if x.strip() != ""]
    if args.kind == "coldstart":
        history = generate_bundles(CorpusSpec(
            seed=manifest["seed"] + 1,
            n_cases=manifest["n_cases"],
            erroneous_fraction=manifest.get("erroneous_fraction", 0.5),
        ))
        points = sweep_cold_start(fractions, args.seed, bundles, history, cfg.inference, gw)
    else:
        points = sweep_feedback_ratio(fractions, args.seed, bundles, cfg.inference, gw)
    payload = {
        "kind": args.kind,
        "points": [
            {
                "fraction": p.fraction,
                "kb_size": p.kb_size,
                "context_volume": p.context_volume,
                **p.metrics.to_dict(),
            }
            for p in points
        ],
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_kb(args) -> int:
    cfg = load_config(args.config)
    gw = _gateway(cfg)
    kb = KnowledgeBase(gw.embed, path=args.kb)
    if args.kb_cmd == "stats":
        print(json.dumps(kb.stats(), indent=2))
    elif args.kb_cmd == "export":
        kb.export_jsonl(args.out)
        print(json.dumps({"exported": len(kb), "path": args.out}))
    elif args.kb_cmd == "sample":
        sub = kb.sample_fraction(args.fraction, args.seed)
        sub_kb = KnowledgeBase(gw.embed, path=args.out)
        for rec in sub.records:
            sub_kb.add_case(rec)
        print(json.dumps({"sampled": len(sub), "of": len(kb), "path": args.out}))
    elif args.kb_cmd == "rebuild":
        kb.rebuild_embeddings()
        print(json.dumps({"rebuilt": len(kb)}))
    return 0


def cmd_cotscore(args) -> int:
    cfg = load_config(args.config)
    candidate = segment_cot(Path(args.candidate).read_text(encoding="utf-8"))
    reference = segment_cot(Path(args.reference).read_text(encoding="utf-8"))
    gw = _gateway(cfg)
    result = score_cot(candidate, reference, cfg.inference.cot, gw.embed)
    if args.json:
        print(json.dumps(score_to_dict(result), indent=2))
    else:
        for kind, value in result.per_section.items():
            print(f"{kind.value:20s} {value:.4f}")
        print(f"{'aggregate':20s} {result.aggregate:.4f}")
        print(f"{'passed':20s} {result.passed}")
    return 0


def cmd_feedback(args) -> int:
    cfg = load_config(args.config)
    storage = cfg.storage
    if args.data_dir:
        storage = replace(storage, data_dir=args.data_dir)
    audit_path = storage.audit_path
    audit = AuditStore.load(audit_path) if Path(audit_path).exists() else AuditStore()
    store = FeedbackStore(path=storage.feedback_path, audit=audit)
    if args.fb_cmd == "label":
        label = FeedbackLabel.GOOD if args.good else FeedbackLabel.BAD
        rec = FeedbackRecord(
            report_id=args.report,
            label=label,
            notes=args.note or "",
            judge=args.judge or "cli",
            created_at=int(time.time()),
        )
        store.record(rec)
        print(json.dumps({"report_id": args.report, "active_label": label.value}))
    else:
        fmt = ExportFormat.KTO_BINARY if args.format == "kto" else ExportFormat.GRPO_GROUPS
        summary = export_alignment_datasets(
            audit, store,
            AlignmentExportConfig(format=fmt, output_path=args.out,
                                  include_unlabeled=args.include_unlabeled),
        )
        print(json.dumps(vars(summary), indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = load_config(args.config)
    app = create_app(cfg)
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port)
    return 0


def cmd_init_config(args) -> int:
    Path(args.out).write_text(EXAMPLE_CONFIG, encoding="utf-8")
    print(json.dumps({"written": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="changelens",
                                     description="software change analysis engine")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and store case bundles")
    p.add_argument("--case", nargs="+", required=True)
    p.add_argument("--config")
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="analyze a single case")
    p.add_argument("--case", required=True)
    p.add_argument("--config")
    p.add_argument("--kb")
    p.add_argument("--out")
    p.add_argument("--audit")
    p.set_defaults(func=cmd_analyze)

    bench = sub.add_parser("bench", help="benchmarks and sweeps")
    bench_sub = bench.add_subparsers(dest="bench_cmd", required=True)

    p = bench_sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-cases", type=int, default=20)
    p.add_argument("--erroneous-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_bench_gen_corpus)

    p = bench_sub.add_parser("run", help="run benchmark variants")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", action="append", choices=sorted(VARIANTS))
    p.add_argument("--kb")
    p.add_argument("--out")
    p.add_argument("--audit-dir")
    p.set_defaults(func=cmd_bench_run)

    p = bench_sub.add_parser("sweep", help="cold-start or feedback-ratio sweep")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--kind", choices=["coldstart", "feedback"], required=True)
    p.add_argument("--fractions", default="0,0.1,0.5,1.0")
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_sweep)

    kb = sub.add_parser("kb", help="knowledge base maintenance")
    kb_sub = kb.add_subparsers(dest="kb_cmd", required=True)
    for name, extra in (
        ("stats", ()),
        ("export", ("--out",)),
        ("sample", ("--out", "--fraction", "--seed")),
        ("rebuild", ()),
    ):
        p = kb_sub.add_parser(name)
        p.add_argument("--kb", required=True)
        p.add_argument("--config")
        if "--out" in extra:
            p.add_argument("--out", required=True)
        if "--fraction" in extra:
            p.add_argument("--fraction", type=float, required=True)
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=cmd_kb)

    cot = sub.add_parser("cotscore", help="score a chain of thought")
    cot_sub = cot.add_subparsers(dest="cot_cmd", required=True)
    p = cot_sub.add_parser("score")
    p.add_argument("--candidate", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cotscore)

    fb = sub.add_parser("feedback", help="label reports and export datasets")
    fb_sub = fb.add_subparsers(dest="fb_cmd", required=True)
    p = fb_sub.add_parser("label")
    p.add_argument("--report", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--good", action="store_true")
    group.add_argument("--bad", action="store_true")
    p.add_argument("--note")
    p.add_argument("--judge")
    p.add_argument("--config")
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_feedback)
    p = fb_sub.add_parser("export")
    p.add_argument("--format", choices=["kto", "grpo"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include-unlabeled", action="store_true")
    p.add_argument("--config")
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_feedback)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("init-config", help="write an example config file")
    p.add_argument("--out", default="changelens.yaml")
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"code": exc.code, "message": str(exc), "detail": exc.detail}),
              file=sys.stderr)
        return 1
    except Exception as exc:
        print(json.dumps({"code": type(exc).__name__, "message": str(exc), "detail": None}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
