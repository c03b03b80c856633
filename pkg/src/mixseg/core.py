"""Domain types and label/boundary conversions shared by every other module.

Components:
    TokenSequence / LabelSequence / BoundarySet   — sequence value types
    MixedTextRecord                               — one labeled document
    Hyperparameters                               — training defaults
    extract_boundaries / labels_from_boundaries   — label <-> boundary views
    segment_labels_to_token_labels                — expand run-length annotations
    validate_record                               — invariant checks as data

Boundary convention: index j marks the FIRST token of a new segment, so
labels [0, 0, 1] have the single boundary {2}.  Metrics use the same
convention.
"""

from __future__ import annotations

from dataclasses import dataclass

# Authorship patterns: H = human (label 0), M = machine (label 1).
PATTERNS: dict[str, tuple[int, ...]] = {
    "HM": (0, 1),
    "MH": (1, 0),
    "HMH": (0, 1, 0),
    "MHM": (1, 0, 1),
    "HMHMH": (0, 1, 0, 1, 0),
    "MHMHM": (1, 0, 1, 0, 1),
}

HUMAN = 0
AI = 1


@dataclass(frozen=True)
class TokenSequence:
    """Opaque token strings; the core performs no sub-word tokenization."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("token sequence must be non-empty")
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabelSequence:
    """Per-token label ids in {0 .. num_labels-1}; 0 = human, 1 = AI."""

    labels: tuple[int, ...]
    num_labels: int = 2

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        if len(labels) == 0:
            raise ValueError("label sequence must be non-empty")
        bad = [v for v in labels if not 0 <= v < self.num_labels]
        if bad:
            raise ValueError(f"labels outside 0..{self.num_labels - 1}: {bad[:5]}")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)


@dataclass(frozen=True)
class BoundarySet:
    """Strictly increasing token positions where the label changes.

    A boundary index j (j >= 1) marks the first token of the new segment.
    """

    indices: tuple[int, ...]

    def __post_init__(self):
        indices = tuple(int(i) for i in self.indices)
        for i in indices:
            if i < 1:
                raise ValueError(f"boundary index {i} < 1")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("boundary indices must be strictly increasing")
        object.__setattr__(self, "indices", indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def as_set(self) -> set[int]:
        return set(self.indices)


@dataclass(frozen=True)
class MixedTextRecord:
    """One document: tokens, gold labels, authorship pattern tag.

    embedding_key, when set, names this record's row block in an embedding
    file (see data_io); records without a key fall back to a token-level
    embedding table.
    """

    id: str
    tokens: TokenSequence
    gold_labels: LabelSequence
    pattern: str
    embedding_key: str | None = None

    def boundaries(self) -> BoundarySet:
        return extract_boundaries(self.gold_labels)


@dataclass(frozen=True)
class Hyperparameters:
    """Training defaults; llrd_rates run input-side to output-side."""

    batch_size: int = 32
    epochs: int = 3
    gradient_clip: float = 1.0
    hidden_dim: int = 512
    num_layers: int = 3
    num_labels: int = 2
    weight_decay: float = 1e-2
    max_len: int = 512
    llrd_rates: tuple[float, ...] = (1e-6, 5e-6, 1e-5, 1e-4)

    def __post_init__(self):
        for name in ("batch_size", "hidden_dim", "num_layers", "num_labels", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:  # 0 epochs = save the initialization untouched
            raise ValueError("epochs must be >= 0")
        if self.gradient_clip <= 0 or self.weight_decay < 0:
            raise ValueError("gradient_clip must be > 0 and weight_decay >= 0")
        rates = tuple(float(r) for r in self.llrd_rates)
        if any(r <= 0 for r in rates):
            raise ValueError("llrd_rates must be positive")
        if len(rates) > 1 and any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("llrd_rates must be strictly increasing")
        object.__setattr__(self, "llrd_rates", rates)


def extract_boundaries(labels: LabelSequence | list[int] | tuple[int, ...]) -> BoundarySet:
    """Positions j where label(j) != label(j-1)."""
    seq = list(labels)
    if not seq:
        raise ValueError("labels must be non-empty")
    return BoundarySet(tuple(j for j in range(1, len(seq)) if seq[j] != seq[j - 1]))


def labels_from_boundaries(first_label: int, boundaries: BoundarySet, length: int,
                           num_labels: int = 2) -> LabelSequence:
    """Reconstruct a binary-alternating label sequence from its boundary view.

    Inverse of extract_boundaries for two labels: each boundary flips the
    current label.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    cuts = set(boundaries)
    labels = []
    cur = first_label
    for j in range(length):
        if j in cuts:
            cur = 1 - cur
        labels.append(cur)
    return LabelSequence(tuple(labels), num_labels=num_labels)


def segment_labels_to_token_labels(segment_labels: list[int],
                                   segment_token_counts: list[int]) -> LabelSequence:
    """Expand per-segment labels into per-token labels.

    Args:
        segment_labels: one label per segment, e.g. [0, 1] for pattern HM.
        segment_token_counts: token count per segment, all >= 1.

    Returns:
        LabelSequence of length sum(segment_token_counts) whose run-length
        encoding equals the input.
    """
    if len(segment_labels) != len(segment_token_counts):
        raise ValueError(
            f"{len(segment_labels)} segment labels vs {len(segment_token_counts)} counts")
    if any(c < 1 for c in segment_token_counts):
        raise ValueError("segment token counts must all be >= 1")
    out: list[int] = []
    for label, count in zip(segment_labels, segment_token_counts):
        out.extend([label] * count)
    return LabelSequence(tuple(out))


def validate_record(record: MixedTextRecord, max_len: int = 512) -> list[str]:
    """Check every type invariant; violations are data, not failures.

    Returns an empty list iff the record is valid.  Each violation names
    the offending field and rule.
    """
    violations: list[str] = []
    n_tokens = len(record.tokens)
    if n_tokens == 0:
        violations.append("tokens empty")
    if n_tokens > max_len:
        violations.append(f"tokens: length {n_tokens} exceeds max_len {max_len}")
    if len(record.gold_labels) != n_tokens:
        violations.append(
            f"gold_labels: length {len(record.gold_labels)} != token count {n_tokens}")
    if record.pattern not in PATTERNS:
        violations.append(f"pattern: unknown tag {record.pattern!r}")
    else:
        runs = _run_labels(list(record.gold_labels))
        if tuple(runs) != PATTERNS[record.pattern]:
            violations.append(
                f"pattern/label run mismatch: pattern {record.pattern} expects runs "
                f"{PATTERNS[record.pattern]}, labels have runs {tuple(runs)}")
    return violations


def _run_labels(labels: list[int]) -> list[int]:
    """Collapse a label sequence into its run labels, e.g. [0,0,1,0] -> [0,1,0]."""
    runs = []
    for v in labels:
        if not runs or runs[-1] != v:
            runs.append(v)
    return runs
