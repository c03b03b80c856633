"""Dataset, embedding, and model files, plus the synthetic corpus generator.

Components:
    load_dataset / save_dataset      — line-delimited JSON records
    read_embeddings / write_embeddings — binary per-sequence float32 vectors
    load_embedding_table             — token-level table from an embedding file
    SynthConfig / synth_generate     — two-style Gaussian mixed-text corpora
    save_model / load_model          — versioned, checksummed parameter files

File formats are little-endian and bit-exact:

    embedding file:  magic "SEQE", version u32, sequence count u32, dim u32,
                     then per sequence: key length u32 + key bytes (utf-8),
                     token count u32, count*dim float32 values.
                     Sequences are written sorted by key.

    model file:      magic "SEQM", version u32, meta-JSON length u32 + bytes,
                     array count u32, then per array: name length u32 + name,
                     ndim u8, shape u32s, float64 values; trailing crc32 u32
                     over everything after the magic.

Datasets are text (inspectable, streamable); only embeddings and model
weights are binary.  Files store float32 embeddings; training widens to
float64 in memory.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from mixseg.baselines import (
    CategoricalEmissions,
    GaussianEmissions,
    HmmParams,
    MemmParams,
)
from mixseg.core import (
    PATTERNS,
    LabelSequence,
    MixedTextRecord,
    TokenSequence,
    extract_boundaries,
    segment_labels_to_token_labels,
    validate_record,
)
from mixseg.emissions import EmbeddingTable
from mixseg.training import BaselinePipeline, SegmenterModel

EMBED_MAGIC = b"SEQE"
MODEL_MAGIC = b"SEQM"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def save_dataset(records: list[MixedTextRecord], path) -> None:
    lines = []
    for rec in records:
        obj = {
            "id": rec.id,
            "tokens": list(rec.tokens.tokens),
            "labels": list(rec.gold_labels),
            "pattern": rec.pattern,
            "boundaries": list(extract_boundaries(rec.gold_labels)),
        }
        if rec.embedding_key is not None:
            obj["embedding_key"] = rec.embedding_key
        lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def load_dataset(path, max_len: int = 512) -> list[MixedTextRecord]:
    """Parse and validate a dataset file; errors carry line numbers / ids."""
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
                rec = MixedTextRecord(
                    id=str(obj["id"]),
                    tokens=TokenSequence(tuple(obj["tokens"])),
                    gold_labels=LabelSequence(tuple(obj["labels"])),
                    pattern=obj["pattern"],
                    embedding_key=obj.get("embedding_key"),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"line {line_no}: bad record fields ({exc})") from exc
            problems = validate_record(rec, max_len=max_len)
            if problems:
                raise ValueError(f"record {rec.id} (line {line_no}): " + "; ".join(problems))
            if "boundaries" in obj:
                stated = tuple(obj["boundaries"])
                derived = extract_boundaries(rec.gold_labels).indices
                if stated != derived:
                    raise ValueError(f"record {rec.id} (line {line_no}): stated boundaries "
                                     f"{stated} != derived {derived}")
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# Embedding files
# ---------------------------------------------------------------------------

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


def read_embeddings(path) -> dict[str, np.ndarray]:
    """Read an embedding file back into key -> (n, dim) float32 arrays."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != EMBED_MAGIC:
        raise ValueError(f"not an embedding file (bad magic {data[:4]!r})")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise ValueError("truncated embedding file")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    version, count, dim = take("<III")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported embedding file version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (klen,) = take("<I")
        if off + klen > len(data):
            raise ValueError("truncated embedding file")
        key = data[off:off + klen].decode("utf-8")
        off += klen
        (n,) = take("<I")
        nbytes = n * dim * 4
        if off + nbytes > len(data):
            raise ValueError(f"truncated embedding file (sequence {key!r})")
        arr = np.frombuffer(data, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
        off += nbytes
        out[key] = arr.copy()
    if off != len(data):
        raise ValueError(f"{len(data) - off} trailing bytes after declared payload")
    return out


def load_embedding_table(path) -> EmbeddingTable:
    """File-backed token table: every sequence must be a single row."""
    seqs = read_embeddings(path)
    vectors = {}
    dim = None
    for key, arr in seqs.items():
        if arr.shape[0] != 1:
            raise ValueError(f"token table entries must be single rows; {key!r} has "
                             f"{arr.shape[0]}")
        vectors[key] = arr[0].astype(np.float64)
        dim = arr.shape[1]
    return EmbeddingTable(dim=dim, source="file-backed", vectors=vectors)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Two-style Gaussian stand-in for mixed human/AI corpora.

    delta is the per-coordinate mean separation between the two styles, in
    units of the per-coordinate noise standard deviation (1.0): human
    tokens draw from N(-delta/2, I), AI tokens from N(+delta/2, I).
    delta = 0 makes the styles statistically indistinguishable.
    """

    seed: int = 0
    num_records: int = 100
    pattern_weights: dict[str, float] = field(
        default_factory=lambda: {p: 1.0 for p in PATTERNS})
    length_range: tuple[int, int] = (60, 120)
    min_segment: int = 5
    delta: float = 3.0
    embed_dim: int = 8
    vocab_size: int = 500
    max_len: int = 512

    def __post_init__(self):
        lo, hi = self.length_range
        if not (1 <= lo <= hi <= self.max_len):
            raise ValueError(f"length range {self.length_range} outside [1, {self.max_len}]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.num_records < 1 or self.embed_dim < 1 or self.min_segment < 1:
            raise ValueError("num_records, embed_dim, min_segment must be >= 1")
        for name, w in self.pattern_weights.items():
            if name not in PATTERNS:
                raise ValueError(f"unknown pattern {name!r}")
            if w < 0:
                raise ValueError("pattern weights must be >= 0")
            if w > 0 and len(PATTERNS[name]) * self.min_segment > lo:
                raise ValueError(f"pattern {name} needs at least "
                                 f"{len(PATTERNS[name]) * self.min_segment} tokens, "
                                 f"but min length is {lo}")
        if sum(self.pattern_weights.values()) <= 0:
            raise ValueError("at least one pattern weight must be positive")


def _composition(rng, total: int, parts: int, minimum: int) -> list[int]:
    """Uniform composition of `total` into `parts` parts, each >= minimum."""
    extra = total - parts * minimum
    if parts == 1:
        return [total]
    bars = np.sort(rng.choice(extra + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate([[-1], bars, [extra + parts - 1]])
    return (np.diff(edges) - 1 + minimum).tolist()


def synth_generate(config: SynthConfig) -> tuple[list[MixedTextRecord], dict[str, np.ndarray]]:
    """Deterministic synthetic corpus plus per-record token embeddings."""
    rng = np.random.default_rng(config.seed)
    names = [p for p in PATTERNS if config.pattern_weights.get(p, 0.0) > 0]
    weights = np.array([config.pattern_weights[p] for p in names], dtype=np.float64)
    weights = weights / weights.sum()
    lo, hi = config.length_range
    half = config.delta / 2.0

    records: list[MixedTextRecord] = []
    embeddings: dict[str, np.ndarray] = {}
    for i in range(config.num_records):
        pattern = names[int(rng.choice(len(names), p=weights))]
        runs = PATTERNS[pattern]
        n = int(rng.integers(lo, hi + 1))
        counts = _composition(rng, n, len(runs), config.min_segment)
        labels = segment_labels_to_token_labels(list(runs), counts)
        tokens = tuple(f"w{int(v):04d}" for v in rng.integers(0, config.vocab_size, size=n))
        rec_id = f"synth-{i:05d}"
        signs = np.where(np.array(labels.labels) == 1, half, -half)
        vecs = signs[:, None] + rng.standard_normal((n, config.embed_dim))
        records.append(MixedTextRecord(rec_id, TokenSequence(tokens), labels,
                                       pattern, embedding_key=rec_id))
        embeddings[rec_id] = vecs.astype(np.float32)
    return records, embeddings


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _model_payload(model) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    if isinstance(model, SegmenterModel):
        meta = {"kind": "bigru_crf", "input_dim": model.bigru.input_dim,
                "hidden_dim": model.bigru.hidden_dim,
                "num_layers": model.bigru.num_layers,
                "num_labels": model.bigru.num_labels}
        arrays = list(model.named_arrays())
    elif isinstance(model, HmmParams):
        em = model.emissions
        if isinstance(em, GaussianEmissions):
            meta = {"kind": "hmm", "emission_model": "gaussian"}
            arrays = [("initial", model.initial), ("transition", model.transition),
                      ("means", em.means), ("variances", em.variances)]
        else:
            meta = {"kind": "hmm", "emission_model": "categorical", "dim": em.dim}
            arrays = [("initial", model.initial), ("transition", model.transition),
                      ("log_probs", em.log_probs)]
    elif isinstance(model, MemmParams):
        meta = {"kind": "memm"}
        arrays = [("weights", model.weights)]
    elif isinstance(model, BaselinePipeline):
        back_meta, back_arrays = _model_payload(model.backbone)
        dec_meta, dec_arrays = _model_payload(model.decoder)
        meta = {"kind": "pipeline", "decoder_kind": model.decoder_kind,
                "backbone": back_meta, "decoder": dec_meta}
        arrays = ([(f"backbone.{n}", a) for n, a in back_arrays]
                  + [(f"decoder.{n}", a) for n, a in dec_arrays])
    else:
        raise TypeError(f"cannot serialize model of type {type(model).__name__}")
    return meta, arrays


def save_model(model, path) -> None:
    """Versioned binary dump; bit-exact round trip, crc32 guarded."""
    meta, arrays = _model_payload(model)
    body = bytearray()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body += struct.pack("<II", FORMAT_VERSION, len(meta_bytes))
    body += meta_bytes
    body += struct.pack("<I", len(arrays))
    for name, arr in arrays:
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        nb = name.encode("utf-8")
        body += struct.pack("<I", len(nb))
        body += nb
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(bytes(body))))


def load_model(path):
    """Inverse of save_model; returns the appropriate parameter object."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"not a model file (bad magic {data[:4]!r})")
    if len(data) < 8:
        raise ValueError("truncated model file")
    body, (stated_crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stated_crc:
        raise ValueError("model file checksum mismatch (corrupt or truncated)")
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(body):
            raise ValueError("truncated model file")
        vals = struct.unpack_from(fmt, body, off)
        off += size
        return vals

    version, meta_len = take("<II")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    meta = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (n_arrays,) = take("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = take("<I")
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(body):
            raise ValueError("truncated model file")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count,
                                     offset=off).reshape(shape).copy()
        off += nbytes

    return _rebuild_model(meta, arrays)


def _rebuild_model(meta: dict, arrays: dict[str, np.ndarray]):
    kind = meta.get("kind")
    if kind == "bigru_crf":
        model = SegmenterModel.empty(meta["input_dim"], meta["hidden_dim"],
                                     meta["num_layers"], meta["num_labels"])
        for name, arr in model.named_arrays():
            if name not in arrays:
                raise ValueError(f"model file missing array {name!r}")
            if arrays[name].shape != arr.shape:
                raise ValueError(f"array {name!r} has shape {arrays[name].shape}, "
                                 f"expected {arr.shape}")
            arr[...] = arrays[name]
        return model
    if kind == "hmm":
        if meta["emission_model"] == "gaussian":
            em = GaussianEmissions(arrays["means"], arrays["variances"])
        else:
            em = CategoricalEmissions(arrays["log_probs"], meta["dim"])
        return HmmParams(arrays["initial"], arrays["transition"], em)
    if kind == "memm":
        return MemmParams(arrays["weights"])
    if kind == "pipeline":
        backbone = _rebuild_model(
            meta["backbone"],
            {n[len("backbone."):]: a for n, a in arrays.items()
             if n.startswith("backbone.")})
        decoder = _rebuild_model(
            meta["decoder"],
            {n[len("decoder."):]: a for n, a in arrays.items()
             if n.startswith("decoder.")})
        return BaselinePipeline(backbone, meta["decoder_kind"], decoder)
    raise ValueError(f"unknown model kind {kind!r}")
