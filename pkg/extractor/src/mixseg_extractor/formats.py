"""The two file interfaces this tool speaks: dataset JSONL in, embeddings out.

Both are reimplemented here from their published layouts; the segmenter
package is not imported.

Embedding file layout (little-endian, bit-exact):
    magic "SEQE", version u32 (1), sequence count u32, dim u32, then per
    sequence sorted by key: key length u32 + utf-8 key bytes, token count
    u32, count*dim float32 values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

EMBED_MAGIC = b"SEQE"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    tokens: tuple[str, ...]


def read_dataset(path) -> list[DatasetRecord]:
    """Parse the canonical line-delimited dataset; only id/tokens are needed."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: malformed record ({exc})") from exc
            try:
                rec = DatasetRecord(str(obj["id"]), tuple(obj["tokens"]))
            except KeyError as exc:
                raise ValueError(f"line {line_no}: missing field {exc}") from exc
            if not rec.tokens:
                raise ValueError(f"line {line_no}: record {rec.id} has no tokens")
            records.append(rec)
    return records


def write_embeddings(path, sequences: dict[str, np.ndarray]) -> None:
    """Write key -> (n, dim) float32 blocks, keys sorted for reproducibility."""
    if not sequences:
        raise ValueError("refusing to write an empty embedding file")
    dims = {np.asarray(v).shape[1] for v in sequences.values()}
    if len(dims) != 1:
        raise ValueError(f"inconsistent embedding dims: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "wb") as f:
        f.write(EMBED_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, len(sequences), dim))
        for key in sorted(sequences):
            arr = np.ascontiguousarray(np.asarray(sequences[key], dtype="<f4"))
            kb = key.encode("utf-8")
            f.write(struct.pack("<I", len(kb)))
            f.write(kb)
            f.write(struct.pack("<I", arr.shape[0]))
            f.write(arr.tobytes())
