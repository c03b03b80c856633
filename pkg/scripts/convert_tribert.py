#!/usr/bin/env python3
"""Convert sentence-annotated hybrid essays to the canonical dataset.

Expected input: line-delimited JSON, one essay per line, with
    "sentences"       — list of sentence strings
    "sentence_labels" — parallel list of 0 (human) / 1 (machine)
    "id"              — optional; generated when absent

Sentences are whitespace-tokenized and per-sentence labels expand to
per-token labels; consecutive same-label sentences merge into one
authorship run.  Essays whose run structure is not one of the six
supported patterns (HM .. MHMHM), or that exceed the token budget, are
reported and skipped.  Adjust the field names below if your copy of the
corpus spells them differently.

Usage:
    python scripts/convert_tribert.py INPUT.jsonl OUTPUT.jsonl
"""

import argparse
import json
import sys

from mixseg.core import (
    PATTERNS,
    LabelSequence,
    MixedTextRecord,
    TokenSequence,
    segment_labels_to_token_labels,
)
from mixseg.data_io import save_dataset

RUN_TO_PATTERN = {runs: name for name, runs in PATTERNS.items()}


def convert_line(obj, fallback_id):
    sentences = obj["sentences"]
    sent_labels = [int(v) for v in obj["sentence_labels"]]
    if len(sentences) != len(sent_labels):
        raise ValueError(f"{len(sentences)} sentences vs {len(sent_labels)} labels")

    # merge consecutive same-label sentences into runs of whitespace tokens
    run_labels: list[int] = []
    run_counts: list[int] = []
    tokens: list[str] = []
    for sent, label in zip(sentences, sent_labels):
        words = sent.split()
        if not words:
            continue
        tokens.extend(words)
        if run_labels and run_labels[-1] == label:
            run_counts[-1] += len(words)
        else:
            run_labels.append(label)
            run_counts.append(len(words))
    if not tokens:
        raise ValueError("essay has no tokens")
    pattern = RUN_TO_PATTERN.get(tuple(run_labels))
    if pattern is None:
        raise ValueError(f"run structure {run_labels} is not a supported pattern")
    labels = segment_labels_to_token_labels(run_labels, run_counts)
    return MixedTextRecord(
        id=str(obj.get("id", fallback_id)),
        tokens=TokenSequence(tuple(tokens)),
        gold_labels=LabelSequence(labels.labels),
        pattern=pattern,
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
                rec = convert_line(obj, f"tribert-{line_no:06d}")
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
    parser.add_argument("input", help="sentence-annotated jsonl file")
    parser.add_argument("output", help="canonical dataset to write")
    parser.add_argument("--max-len", type=int, default=512)
    args = parser.parse_args()
    records, skipped = convert(args.input, args.output, args.max_len)
    print(f"converted {len(records)} records to {args.output}")
    for line_no, reason in skipped:
        print(f"skipped line {line_no}: {reason}", file=sys.stderr)


if __name__ == "__main__":
    main()
