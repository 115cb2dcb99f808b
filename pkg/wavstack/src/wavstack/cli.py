"""Command-line entry points.

Exit codes match the harness convention: 0 success, 1 validation failure
(CSV schema, enums, missing inputs), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .encoder import init_encoder
from .extract import ExtractionJob, extract


def _cmd_extract(args: argparse.Namespace) -> int:
    job = ExtractionJob(
        audio_root=args.audio,
        labels_csv=args.labels,
        encoder_id=args.encoder,
        output_dir=args.out,
    )
    manifest = extract(job)
    counts: dict[str, int] = {}
    for rec in manifest.records:
        counts[rec.split] = counts.get(rec.split, 0) + 1
    print(f"extracted {len(manifest.records)} records to {args.out}: {counts}")
    return 0


def _cmd_init_encoder(args: argparse.Namespace) -> int:
    path = init_encoder(args.out, seed=args.seed)
    print(f"wrote randomly initialized encoder to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavstack",
        description="Extract frozen-encoder layer stacks from audio into an embedding dataset.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the encoder over a labeled audio directory")
    p.add_argument("--audio", required=True, help="directory of <record_id>.wav files")
    p.add_argument("--labels", required=True, help="labels CSV (record_id, speaker_id, task, split, five feature columns)")
    p.add_argument("--encoder", required=True, help="local encoder directory or cached model id")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=_cmd_extract)

    p = sub.add_parser("init-encoder", help="materialize a seeded random-weight encoder locally")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=4200)
    p.set_defaults(fn=_cmd_init_encoder)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
