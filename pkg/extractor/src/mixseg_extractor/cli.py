"""mixseg-extract: dataset.jsonl + frozen encoder -> embeddings.seqe."""

from __future__ import annotations

import argparse
import sys

from mixseg_extractor.extract import ExtractorConfig, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixseg-extract",
        description="Pool frozen-encoder subword vectors to whole-word token "
                    "embeddings in the mixseg embedding file format")
    parser.add_argument("--data", required=True, help="dataset (jsonl)")
    parser.add_argument("--encoder", required=True,
                        help="pretrained model name or local path")
    parser.add_argument("--pooling", choices=["mean", "first-subword"],
                        default="mean")
    parser.add_argument("--max-length", type=int, default=512,
                        help="encoder sequence budget in subwords")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--out", required=True, help="embedding file to write")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractorConfig(encoder=args.encoder, pooling=args.pooling,
                             max_length=args.max_length,
                             batch_size=args.batch_size, output=args.out)
    try:
        result = extract(args.data, config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"extracted {result.extracted} records ({result.dim}-dim) to {args.out}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} records:", file=sys.stderr)
        for rec_id, reason in result.skipped:
            print(f"  {rec_id}: {reason}", file=sys.stderr)
    return 0


def main():
    sys.exit(run())
