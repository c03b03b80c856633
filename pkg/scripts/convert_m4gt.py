#!/usr/bin/env python3
"""Convert the M4GT boundary-identification layout to the canonical dataset.

Expected input: line-delimited JSON, one document per line, with
    "text"  — the document (human-initiated, machine-ended)
    "label" — index of the first machine-written word
    "id"    — optional; generated when absent

Tokens are whitespace words.  Every converted record follows the single
"HM" pattern; documents whose boundary falls outside (0, word_count) are
reported and skipped.  The canonical schema written here is the only
format the segmenter reads.

Usage:
    python scripts/convert_m4gt.py INPUT.jsonl OUTPUT.jsonl
"""

import argparse
import json
import sys

from mixseg.core import LabelSequence, MixedTextRecord, TokenSequence
from mixseg.data_io import save_dataset


def convert_line(obj, fallback_id):
    text = obj["text"]
    boundary = int(obj["label"])
    tokens = text.split()
    if not 0 < boundary < len(tokens):
        raise ValueError(f"boundary {boundary} outside (0, {len(tokens)})")
    labels = [0] * boundary + [1] * (len(tokens) - boundary)
    return MixedTextRecord(
        id=str(obj.get("id", fallback_id)),
        tokens=TokenSequence(tuple(tokens)),
        gold_labels=LabelSequence(tuple(labels)),
        pattern="HM",
    )


def convert(in_path, out_path, max_len=512):
    records, skipped = [], []
    with open(in_path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = convert_line(obj, f"m4gt-{line_no:06d}")
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                skipped.append((line_no, str(exc)))
                continue
            if len(rec.tokens) > max_len:
                skipped.append((line_no, f"{len(rec.tokens)} tokens exceeds {max_len}"))
                continue
            records.append(rec)
    save_dataset(records, out_path)
    return records, skipped


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("input", help="M4GT jsonl file")
    parser.add_argument("output", help="canonical dataset to write")
    parser.add_argument("--max-len", type=int, default=512)
    args = parser.parse_args()
    records, skipped = convert(args.input, args.output, args.max_len)
    print(f"converted {len(records)} records to {args.output}")
    for line_no, reason in skipped:
        print(f"skipped line {line_no}: {reason}", file=sys.stderr)


if __name__ == "__main__":
    main()
