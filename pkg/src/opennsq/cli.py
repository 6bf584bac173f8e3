"""Command line entry point: ``opennsq <stage|run> --manifest run.yaml``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .pipeline import STAGE_FUNCS, STAGES, Manifest, ManifestError, StageError, run

EXIT_OK = 0
EXIT_MANIFEST = 2
EXIT_STAGE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opennsq",
        description="Simulate the bibliometric phase of the Italian NSQ on open data.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "run every stage",
        "extract": "extract DOIs and write applications.jsonl",
        "resolve": "validate DOIs and fetch publication metadata",
        "ingest": "build the citation index from COCI dumps",
        "evaluate": "compute metrics and assessments per application",
        "report": "aggregate agreement tables and figures",
    }
    for name in ("run",) + STAGES:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--manifest", required=True, help="YAML run manifest")
        p.add_argument("--offline", action="store_true", default=None,
                       help="use fixtures only, never touch the network")
        p.add_argument("--comparator", choices=("ge", "gt"))
        p.add_argument("--normalization", choices=("none", "age"))
        p.add_argument("--jobs", type=int)
        p.add_argument("--out", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        manifest = Manifest.load(args.manifest, offline=args.offline, comparator=args.comparator,
                                 normalization=args.normalization, jobs=args.jobs,
                                 out=os.path.abspath(args.out) if args.out else None)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST

    try:
        if args.command == "run":
            result = run(manifest)
        else:
            result = STAGE_FUNCS[args.command](manifest)
    except StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
