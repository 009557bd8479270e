"""Command line front end: horouf-extract --manifest ... --out ..."""

from __future__ import annotations

import argparse
import sys

from .errors import EncoderUnavailable, ExtractorError
from .extract import DEFAULT_ENCODER, ExtractJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="horouf-extract",
        description="Convert manifest WAV entries into HRF frame-embedding files.",
    )
    parser.add_argument("--manifest", required=True, help="manifest of audio entries (JSON lines)")
    parser.add_argument("--out", required=True, help="output directory for .hrf files")
    parser.add_argument("--encoder", default=DEFAULT_ENCODER,
                        help="encoder identifier or local path")
    parser.add_argument("--device", default="cpu", help="cpu or cuda")
    parser.add_argument("--max-chunk-seconds", type=float, default=30.0,
                        help="inputs longer than this are encoded in chunks")
    parser.add_argument("--workers", type=int, default=1, help="parallel files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExtractJob(args.manifest, args.out, args.encoder, args.device,
                     args.max_chunk_seconds, args.workers)
    try:
        result = extract(job)
    except EncoderUnavailable as exc:
        print(f"horouf-extract: {exc}", file=sys.stderr)
        return 2
    except ExtractorError as exc:
        print(f"horouf-extract: {exc}", file=sys.stderr)
        return 2
    print(f"written={result.written} skipped={result.skipped} failed={len(result.failures)}")
    for entry_id, message in result.failures:
        print(f"horouf-extract: {entry_id}: {message}", file=sys.stderr)
    return 0 if not result.failures else 1


if __name__ == "__main__":
    sys.exit(main())
