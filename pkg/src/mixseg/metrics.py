"""Boundary-detection and token-level evaluation metrics.

Components:
    f1_at_k              — overlap F1 between top-K and gold boundary sets
    top_k_boundaries     — confidence-ranked boundary candidates
    boundary_mae         — mean absolute boundary displacement
    token_metrics        — accuracy/P/R/F1, MCC, Cohen's kappa
    evaluate             — per-record metrics aggregated over a dataset
    format_report / report_to_kv — text and key=value serializations

F1@K intersects boundary indices EXACTLY by default; a tolerance window is
available but off, because no tolerance is part of the metric definition.
Boundary indices are token positions throughout (the report records the
unit).  Degenerate denominators (single-class data) yield 0 and set the
`degenerate` flag rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mixseg.core import BoundarySet, MixedTextRecord, extract_boundaries


@dataclass
class TokenMetrics:
    accuracy: float
    precision: float          # positive class = 1
    recall: float
    f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    mcc: float
    kappa: float
    degenerate: bool = False  # some denominator collapsed; affected values are 0


@dataclass
class MetricsReport:
    mae: float
    f1_at_k: dict[str, float]          # boundary-count buckets "1","2","3" + "all"
    token: TokenMetrics
    bucket_counts: dict[str, int] = field(default_factory=dict)
    num_records: int = 0
    num_tokens: int = 0
    boundary_unit: str = "token"


@dataclass
class Prediction:
    """Decoded labels plus ranked boundary candidates for one record."""

    labels: list[int]
    top_k: tuple[int, ...] = ()
    confidences: tuple[float, ...] = ()


def f1_at_k(top_k, ground_truth, k: int = 3, tolerance: int = 0) -> float:
    """2 * |top_k & gt| / (|top_k| + |gt|); both sets empty scores 1.0.

    With tolerance w > 0, a predicted boundary matches an unused gold
    boundary within +-w positions (greedy, in index order).
    """
    pred = sorted(set(top_k))
    gold = sorted(set(ground_truth))
    if len(pred) > k:
        raise ValueError(f"top_k has {len(pred)} entries, more than k={k}")
    if not pred and not gold:
        return 1.0
    if tolerance == 0:
        hits = len(set(pred) & set(gold))
    else:
        used = [False] * len(gold)
        hits = 0
        for p in pred:
            for j, g in enumerate(gold):
                if not used[j] and abs(p - g) <= tolerance:
                    used[j] = True
                    hits += 1
                    break
    return 2.0 * hits / (len(pred) + len(gold))


def boundary_confidences(pairwise: np.ndarray) -> np.ndarray:
    """Disagreement mass per interior position: P(y_t != y_{t-1}).

    pairwise[t] couples positions t and t+1, so entry t is the confidence
    of a boundary at index t+1.
    """
    pairwise = np.asarray(pairwise)
    off_diag = pairwise.sum(axis=(1, 2)) - np.trace(pairwise, axis1=1, axis2=2)
    return off_diag


def top_k_boundaries(source, k: int = 3) -> tuple[BoundarySet, tuple[float, ...]]:
    """Boundary candidates ranked by confidence, at most k of them.

    source is either a (n-1, L, L) pairwise-marginal array — candidates are
    the positions whose disagreement mass exceeds 0.5, ranked by that mass,
    ties toward the lower index — or a decoded label sequence, whose
    transitions are taken in index order (confidence 1.0 each).

    Returns (boundaries sorted by index, confidences aligned with them).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    arr = np.asarray(source)
    if arr.ndim == 3:
        conf = boundary_confidences(arr)
        candidates = [(float(conf[t]), t + 1) for t in range(conf.shape[0])
                      if conf[t] > 0.5]
        candidates.sort(key=lambda it: (-it[0], it[1]))
        picked = candidates[:k]
    elif arr.ndim == 1:
        idx = list(extract_boundaries(arr.tolist()))
        picked = [(1.0, j) for j in idx[:k]]
    else:
        raise ValueError("source must be pairwise marginals or a label sequence")
    picked.sort(key=lambda it: it[1])
    return (BoundarySet(tuple(j for _, j in picked)),
            tuple(c for c, _ in picked))


def boundary_mae(predicted, gold) -> float:
    """Mean absolute displacement between paired boundary indices.

    Lists must have equal nonzero length; pairing is in sorted index order.
    """
    pred = sorted(predicted)
    gt = sorted(gold)
    if not pred and not gt:
        raise ValueError("boundary MAE undefined for two empty lists")
    if len(pred) != len(gt):
        raise ValueError(f"boundary count mismatch: {len(pred)} predicted vs {len(gt)} gold")
    return float(np.mean([abs(p - g) for p, g in zip(pred, gt)]))


def _boundary_mae_flexible(predicted, gold, seq_len: int) -> float:
    """MAE extension for mismatched counts (pipeline aggregation only).

    Sorted lists are paired in index order; each unmatched extra on the
    longer side contributes its distance to the nearest boundary on the
    other side, or seq_len when the other side is empty.
    """
    pred = sorted(predicted)
    gt = sorted(gold)
    if not pred and not gt:
        raise ValueError("boundary MAE undefined for two empty lists")
    m = min(len(pred), len(gt))
    diffs = [abs(p - g) for p, g in zip(pred[:m], gt[:m])]
    longer, other = (pred, gt) if len(pred) > len(gt) else (gt, pred)
    for extra in longer[m:]:
        diffs.append(min(abs(extra - o) for o in other) if other else float(seq_len))
    return float(np.mean(diffs))


def token_metrics(pred, gold) -> TokenMetrics:
    """Binary token metrics from the 2x2 confusion matrix (positive = 1)."""
    p = np.asarray(list(pred), dtype=np.intp)
    g = np.asarray(list(gold), dtype=np.intp)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} predicted vs {g.shape[0]} gold")
    tp = int(np.sum((p == 1) & (g == 1)))
    tn = int(np.sum((p == 0) & (g == 0)))
    fp = int(np.sum((p == 1) & (g == 0)))
    fn = int(np.sum((p == 0) & (g == 1)))
    return _metrics_from_confusion(tp, tn, fp, fn)


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def _metrics_from_confusion(tp: int, tn: int, fp: int, fn: int) -> TokenMetrics:
    n = tp + tn + fp + fn
    if n == 0:
        raise ValueError("empty confusion matrix")
    degenerate = False

    accuracy = (tp + tn) / n
    precision, d1 = _safe_div(tp, tp + fp)
    recall, d2 = _safe_div(tp, tp + fn)
    f1, d3 = _safe_div(2 * precision * recall, precision + recall)
    prec0, d4 = _safe_div(tn, tn + fn)
    rec0, d5 = _safe_div(tn, tn + fp)
    f10, d6 = _safe_div(2 * prec0 * rec0, prec0 + rec0)
    degenerate |= d1 or d2 or d3 or d4 or d5 or d6

    mcc_den = np.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if mcc_den == 0:
        mcc, degenerate = 0.0, True
    else:
        mcc = float((tp * tn - fp * fn) / mcc_den)

    po = accuracy
    pe = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n)
    if pe == 1.0:
        kappa, degenerate = 0.0, True
    else:
        kappa = (po - pe) / (1.0 - pe)

    return TokenMetrics(
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        macro_precision=(precision + prec0) / 2,
        macro_recall=(recall + rec0) / 2,
        macro_f1=(f1 + f10) / 2,
        mcc=mcc, kappa=float(kappa), degenerate=degenerate)


def evaluate(predict, records: list[MixedTextRecord], k: int = 3) -> MetricsReport:
    """Aggregate per-record metrics over a dataset.

    Args:
        predict: callable mapping a record to a Prediction.
        records: validated dataset.
        k: boundary budget for F1@K.

    Token metrics are micro-aggregated over all tokens; MAE is averaged
    over records; F1@K is averaged within each gold-boundary-count bucket
    ("1", "2", "3") and over all records ("all").  Records whose gold
    boundary count falls outside the bucket labels still count in "all".
    """
    if not records:
        raise ValueError("empty dataset")
    tp = tn = fp = fn = 0
    maes: list[float] = []
    f1_buckets: dict[str, list[float]] = {"1": [], "2": [], "3": [], "all": []}
    n_tokens = 0

    for rec in records:
        prediction = predict(rec)
        gold = list(rec.gold_labels)
        pred_labels = list(prediction.labels)
        if len(pred_labels) != len(gold):
            raise ValueError(f"record {rec.id}: predicted {len(pred_labels)} labels "
                             f"for {len(gold)} tokens")
        p = np.asarray(pred_labels)
        g = np.asarray(gold)
        tp += int(np.sum((p == 1) & (g == 1)))
        tn += int(np.sum((p == 0) & (g == 0)))
        fp += int(np.sum((p == 1) & (g == 0)))
        fn += int(np.sum((p == 0) & (g == 1)))
        n_tokens += len(gold)

        gold_bounds = list(extract_boundaries(gold))
        pred_bounds = list(extract_boundaries(pred_labels))
        if gold_bounds or pred_bounds:
            maes.append(_boundary_mae_flexible(pred_bounds, gold_bounds, len(gold)))

        top = list(prediction.top_k)[:k]
        score = f1_at_k(top, gold_bounds, k=k)
        f1_buckets["all"].append(score)
        bucket = str(len(gold_bounds))
        if bucket in f1_buckets:
            f1_buckets[bucket].append(score)

    token = _metrics_from_confusion(tp, tn, fp, fn)
    f1_avg = {name: float(np.mean(vals)) for name, vals in f1_buckets.items() if vals}
    counts = {name: len(vals) for name, vals in f1_buckets.items() if vals}
    return MetricsReport(
        mae=float(np.mean(maes)) if maes else 0.0,
        f1_at_k=f1_avg, token=token, bucket_counts=counts,
        num_records=len(records), num_tokens=n_tokens)


def format_report(report: MetricsReport) -> str:
    """Human-readable summary, bucketed F1@K columns first."""
    lines = [
        f"records: {report.num_records}   tokens: {report.num_tokens}   "
        f"boundary unit: {report.boundary_unit}",
        "",
        "boundary metrics",
        f"  MAE: {report.mae:.4f}",
    ]
    cols = [b for b in ("1", "2", "3", "all") if b in report.f1_at_k]
    header = "  F1@K   " + "  ".join(f"Bry={b:<4}" if b != "all" else "All    " for b in cols)
    values = "         " + "  ".join(f"{report.f1_at_k[b]:<7.4f}" for b in cols)
    counts = "  n      " + "  ".join(f"{report.bucket_counts.get(b, 0):<7d}" for b in cols)
    lines += [header, values, counts, "", "token metrics"]
    t = report.token
    lines += [
        f"  accuracy:  {t.accuracy:.4f}",
        f"  precision: {t.precision:.4f}   recall: {t.recall:.4f}   f1: {t.f1:.4f}",
        f"  macro-p:   {t.macro_precision:.4f}   macro-r: {t.macro_recall:.4f}   "
        f"macro-f1: {t.macro_f1:.4f}",
        f"  mcc:       {t.mcc:.4f}   kappa: {t.kappa:.4f}",
    ]
    if t.degenerate:
        lines.append("  note: single-class denominators hit; affected values reported as 0")
    return "\n".join(lines) + "\n"


def report_to_kv(report: MetricsReport) -> str:
    """Machine-readable key=value lines, sorted by key."""
    kv = {
        "mae": report.mae,
        "num_records": report.num_records,
        "num_tokens": report.num_tokens,
        "boundary_unit": report.boundary_unit,
        "token.accuracy": report.token.accuracy,
        "token.precision": report.token.precision,
        "token.recall": report.token.recall,
        "token.f1": report.token.f1,
        "token.macro_precision": report.token.macro_precision,
        "token.macro_recall": report.token.macro_recall,
        "token.macro_f1": report.token.macro_f1,
        "token.mcc": report.token.mcc,
        "token.kappa": report.token.kappa,
        "token.degenerate": int(report.token.degenerate),
    }
    for name, val in report.f1_at_k.items():
        kv[f"f1_at_k.{name}"] = val
    for name, val in report.bucket_counts.items():
        kv[f"bucket_count.{name}"] = val
    lines = []
    for key in sorted(kv):
        val = kv[key]
        lines.append(f"{key}={val:.10g}" if isinstance(val, float) else f"{key}={val}")
    return "\n".join(lines) + "\n"
