"""Frozen-encoder extraction: subword vectors pooled to whole-word tokens.

A pretrained transformer runs in evaluation mode over each record's token
list (pre-split words).  The fast tokenizer's word alignment maps subword
positions back to words; each word's vectors are mean-pooled (or the first
subword is taken) to yield exactly one vector per token.  Records whose
alignment cannot produce that one-to-one mapping — truncation ate trailing
words, or a token yields no subwords — are skipped and reported.

Extraction is deterministic: records are processed in sorted-id order with
a fixed batch size, and the encoder is never in training mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from mixseg_extractor.formats import DatasetRecord, read_dataset, write_embeddings

POOLING_MODES = ("mean", "first-subword")


@dataclass
class ExtractorConfig:
    encoder: str                     # model name or local path
    pooling: str = "mean"
    max_length: int = 512
    batch_size: int = 8
    output: str = "embeddings.seqe"

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if self.max_length < 2 or self.batch_size < 1:
            raise ValueError("max_length must be >= 2 and batch_size >= 1")


@dataclass
class ExtractionResult:
    extracted: int
    dim: int
    skipped: list[tuple[str, str]]   # (record id, reason)


def load_encoder(name_or_path: str):
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(name_or_path)
    if not tokenizer.is_fast:
        raise ValueError("a fast tokenizer is required for word alignment")
    model = AutoModel.from_pretrained(name_or_path)
    model.eval()
    return tokenizer, model


def pool_record(hidden: torch.Tensor, word_ids: list[int | None], n_words: int,
                pooling: str) -> np.ndarray | None:
    """(S, H) subword vectors -> (n_words, H), or None if alignment fails."""
    groups: list[list[int]] = [[] for _ in range(n_words)]
    for pos, wid in enumerate(word_ids):
        if wid is None:
            continue
        if wid >= n_words:
            return None
        groups[wid].append(pos)
    if any(not g for g in groups):
        return None
    rows = []
    for g in groups:
        if pooling == "mean":
            rows.append(hidden[g].mean(dim=0))
        else:
            rows.append(hidden[g[0]])
    return torch.stack(rows).to(torch.float32).numpy()


def extract(dataset_path, config: ExtractorConfig) -> ExtractionResult:
    """Run the frozen encoder over a dataset and write the embedding file."""
    records = sorted(read_dataset(dataset_path), key=lambda r: r.id)
    ids = {r.id for r in records}
    if len(ids) != len(records):
        raise ValueError("duplicate record ids in dataset")
    tokenizer, model = load_encoder(config.encoder)

    sequences: dict[str, np.ndarray] = {}
    skipped: list[tuple[str, str]] = []
    with torch.no_grad():
        for start in range(0, len(records), config.batch_size):
            batch = records[start:start + config.batch_size]
            enc = tokenizer([list(r.tokens) for r in batch],
                            is_split_into_words=True, truncation=True,
                            max_length=config.max_length, padding=True,
                            return_tensors="pt")
            hidden = model(**enc).last_hidden_state
            for i, rec in enumerate(batch):
                pooled = pool_record(hidden[i], enc.word_ids(batch_index=i),
                                     len(rec.tokens), config.pooling)
                if pooled is None:
                    skipped.append((rec.id, "subword alignment failed "
                                            "(token lost to truncation or empty)"))
                    continue
                sequences[rec.id] = pooled

    if not sequences:
        raise ValueError("no records survived extraction")
    write_embeddings(config.output, sequences)
    dim = next(iter(sequences.values())).shape[1]
    return ExtractionResult(extracted=len(sequences), dim=dim, skipped=skipped)
