"""Command-line entry points.

Subcommands: enhance, overlay, report, bench, study {make,serve,tally}.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, studysvc, verifybench
from .maskkit import load_registry


def _parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError("bind address must look like HOST:PORT")
    return host, int(port)


def _cmd_enhance(args) -> int:
    manifest = pipeline.CorpusManifest.load(args.manifest)
    registry = load_registry(args.masks)
    qa = pipeline.QaConfig(
        iou_threshold=args.iou_threshold,
        alpha_cut=args.alpha_cut,
        allow_fallback=not args.no_fallback,
    )
    report = pipeline.enhance_corpus(
        manifest, registry, qa, seed=args.seed, out_dir=args.out, workers=args.workers
    )
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return 0 if report.failed == 0 else 1


def _cmd_overlay(args) -> int:
    manifest = pipeline.CorpusManifest.load(args.manifest)
    count = pipeline.overlay_corpus(manifest, args.layers, args.out)
    print(f"composited {count} of {len(manifest.entries)} entries")
    return 0


def _cmd_report(args) -> int:
    records = pipeline.load_records(args.records)
    report = pipeline.qa_report(records)
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    table = verifybench.read_embeddings(args.embeddings)
    if args.make_pairs is not None:
        pairs = verifybench.generate_pairs(table, args.make_pairs, args.seed)
        if args.pairs:
            pairs.to_json(args.pairs)
    else:
        if not args.pairs:
            print("either --pairs or --make-pairs is required", file=sys.stderr)
            return 2
        pairs = verifybench.PairSet.from_json(args.pairs)
    folds = verifybench.make_folds(pairs, n_folds=args.folds, seed=args.seed)
    report = verifybench.evaluate(table, pairs, folds, far_target=args.far)
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
    print(f"accuracy@FAR={args.far:g}: {report.headline()}")
    return 0


def _cmd_study_make(args) -> int:
    manifest = studysvc.make_study(
        args.a, args.b, args.label_a, args.label_b, n=args.n, seed=args.seed
    )
    manifest.save(args.out)
    print(f"{manifest.study_id}: {manifest.pairs_count} pairs -> {args.out}")
    return 0


def _cmd_study_serve(args) -> int:
    manifest = studysvc.StudyManifest.load(args.manifest)
    studysvc.serve(
        manifest,
        votes_path=args.votes,
        bind=args.bind,
        allow_revote=args.allow_revote,
        static_dir=args.static,
    )
    return 0


def _cmd_study_tally(args) -> int:
    manifest = studysvc.StudyManifest.load(args.manifest)
    votes = studysvc.load_votes(args.votes) if Path(args.votes).exists() else []
    table = studysvc.tally(votes, manifest)
    print(json.dumps(table.to_dict(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskforge",
        description="Landmark-driven mask overlay, QA gating, verification "
        "metrics, and the pairwise realism study service.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="place masks over a corpus behind the IoU gate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks", required=True, help="mask template directory")
    p.add_argument("--iou-threshold", type=float, required=True)
    p.add_argument("--alpha-cut", type=int, default=8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-fallback", action="store_true")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("overlay", help="composite stored layers over source images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--layers", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_overlay)

    p = sub.add_parser("report", help="aggregate a records.ndjson file")
    p.add_argument("--records", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("bench", help="10-fold verification metrics at a FAR target")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", default=None)
    p.add_argument("--make-pairs", type=int, default=None, metavar="PAIRS_PER_CLASS")
    p.add_argument("--far", type=float, default=0.001)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    study = sub.add_parser("study", help="pairwise realism study tooling")
    study_sub = study.add_subparsers(dest="study_command", required=True)

    p = study_sub.add_parser("make", help="sample a study manifest from two image dirs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--label-a", required=True)
    p.add_argument("--label-b", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_study_make)

    p = study_sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--votes", required=True)
    p.add_argument("--bind", type=_parse_bind, default=("127.0.0.1", 8765))
    p.add_argument("--allow-revote", action="store_true")
    p.add_argument("--static", default=None, help="frontend asset directory")
    p.set_defaults(func=_cmd_study_serve)

    p = study_sub.add_parser("tally", help="recount the vote store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--votes", required=True)
    p.set_defaults(func=_cmd_study_tally)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
