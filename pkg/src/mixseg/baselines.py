"""Supervised HMM and MEMM labelers that replace the CRF decoding layer.

Components:
    HmmParams / hmm_fit / hmm_decode     — counting MLE + log-space Viterbi
    MemmParams / memm_fit / memm_decode  — per-context logistic + local Viterbi
    fit_linear_crf                       — linear-emission CRF on the same features
    label_bias_dataset                   — designed instance where MEMM fails

Labels are fully observed, so HMM fitting is plain supervised counting with
add-k smoothing (no Baum-Welch).  Observations are continuous feature
vectors; the HMM models them with per-label diagonal Gaussians, or with a
categorical over sign-quantized symbols as a discrete fallback.  The MEMM
conditions on the previous gold label during fitting (teacher forcing) and
on the previous hypothesized label inside Viterbi at decode time; its local
per-step distributions are normalized, which is exactly what exposes it to
the label bias problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from mixseg.crf import CrfParams, EmissionScores, nll_grad_batch, viterbi_decode

_VAR_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# HMM
# ---------------------------------------------------------------------------

@dataclass
class GaussianEmissions:
    means: np.ndarray      # (L, d)
    variances: np.ndarray  # (L, d), floored

    def log_prob(self, feats: np.ndarray) -> np.ndarray:
        """(n, d) features -> (n, L) per-label log densities."""
        diff = feats[:, None, :] - self.means[None, :, :]
        return -0.5 * (diff * diff / self.variances[None] +
                       np.log(2.0 * np.pi * self.variances)[None]).sum(axis=2)


@dataclass
class CategoricalEmissions:
    """Categorical over sign-quantized feature symbols (2^d of them)."""

    log_probs: np.ndarray  # (L, 2^d)
    dim: int

    def log_prob(self, feats: np.ndarray) -> np.ndarray:
        return self.log_probs[:, quantize_sign(feats)].T


def quantize_sign(feats: np.ndarray) -> np.ndarray:
    """Map each feature row to a symbol id from its coordinate signs."""
    feats = np.atleast_2d(feats)
    if feats.shape[1] > 16:
        raise ValueError("sign quantization supports at most 16 feature dims")
    bits = (feats > 0).astype(np.intp)
    return bits @ (1 << np.arange(feats.shape[1]))


@dataclass
class HmmParams:
    initial: np.ndarray     # (L,)
    transition: np.ndarray  # (L, L), row-stochastic
    emissions: GaussianEmissions | CategoricalEmissions

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        if not np.allclose(self.transition.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("transition rows must sum to 1 (unfitted params?)")
        if not np.isclose(self.initial.sum(), 1.0, atol=1e-6):
            raise ValueError("initial probabilities must sum to 1")
        if np.any(self.initial <= 0) or np.any(self.transition <= 0):
            raise ValueError("probabilities must be positive after smoothing")

    @property
    def num_labels(self) -> int:
        return self.initial.shape[0]


def hmm_fit(sequences: list[tuple[np.ndarray, list[int]]], smoothing: float = 1.0,
            num_labels: int = 2, emission_model: str = "gaussian") -> HmmParams:
    """Supervised maximum likelihood with add-k smoothing.

    Args:
        sequences: (features (n, d), labels) pairs; labels observed.
        smoothing: add-k constant, k > 0.
        emission_model: "gaussian" (diagonal, per label) or "categorical"
            (over sign-quantized symbols).
    """
    if not sequences:
        raise ValueError("empty dataset")
    if smoothing <= 0:
        raise ValueError("smoothing constant must be > 0")
    L = num_labels
    k = float(smoothing)

    init_counts = np.zeros(L)
    trans_counts = np.zeros((L, L))
    per_label_feats: list[list[np.ndarray]] = [[] for _ in range(L)]
    for feats, labels in sequences:
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        y = list(labels)
        init_counts[y[0]] += 1
        for a, b in zip(y, y[1:]):
            trans_counts[a, b] += 1
        for t, lab in enumerate(y):
            per_label_feats[lab].append(feats[t])

    initial = (init_counts + k) / (init_counts.sum() + k * L)
    transition = (trans_counts + k) / (trans_counts.sum(axis=1, keepdims=True) + k * L)

    d = np.atleast_2d(np.asarray(sequences[0][0])).shape[1]
    if emission_model == "gaussian":
        means = np.zeros((L, d))
        variances = np.ones((L, d))
        for lab in range(L):
            if per_label_feats[lab]:
                stacked = np.stack(per_label_feats[lab])
                means[lab] = stacked.mean(axis=0)
                variances[lab] = np.maximum(stacked.var(axis=0), _VAR_FLOOR)
        em = GaussianEmissions(means, variances)
    elif emission_model == "categorical":
        S = 1 << d
        counts = np.full((L, S), 0.0)
        for lab in range(L):
            if per_label_feats[lab]:
                syms = quantize_sign(np.stack(per_label_feats[lab]))
                np.add.at(counts[lab], syms, 1.0)
        probs = (counts + k) / (counts.sum(axis=1, keepdims=True) + k * S)
        em = CategoricalEmissions(np.log(probs), d)
    else:
        raise ValueError(f"unknown emission model {emission_model!r}")
    return HmmParams(initial, transition, em)


def hmm_decode(params: HmmParams, observations: np.ndarray) -> list[int]:
    """Most probable state path, log-space Viterbi, ties toward lower label."""
    feats = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    log_b = params.emissions.log_prob(feats)           # (n, L)
    log_a = np.log(params.transition)
    n, L = log_b.shape
    delta = np.log(params.initial) + log_b[0]
    back = np.zeros((n, L), dtype=np.intp)
    for t in range(1, n):
        cand = delta[:, None] + log_a
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)] + log_b[t]
    y = int(np.argmax(delta))
    path = [y]
    for t in range(n - 1, 0, -1):
        y = int(back[t, y])
        path.append(y)
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# MEMM
# ---------------------------------------------------------------------------

@dataclass
class MemmParams:
    """weights[c] is the (d+1, L) logistic map for previous-label context c.

    Context L (one past the real labels) is the sequence-start context, so
    the first position gets its own locally normalized classifier.
    """

    weights: np.ndarray  # (L+1, L, d+1)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("MEMM weights must be finite")

    @property
    def num_labels(self) -> int:
        return self.weights.shape[1]


def _with_bias(feats: np.ndarray) -> np.ndarray:
    return np.hstack([feats, np.ones((feats.shape[0], 1))])


def memm_local_log_probs(params: MemmParams, feats: np.ndarray) -> np.ndarray:
    """(n, d) features -> (n, L+1, L) log P(y_t | context, f_t), rows normalized."""
    fb = _with_bias(np.atleast_2d(feats))
    logits = np.einsum("nd,cld->ncl", fb, params.weights)
    return logits - logsumexp(logits, axis=2, keepdims=True)


def memm_fit(sequences: list[tuple[np.ndarray, list[int]]], iterations: int = 300,
             learning_rate: float = 0.5, num_labels: int = 2) -> MemmParams:
    """Per-context multinomial logistic regression, teacher-forced.

    Every position t becomes a training example (f_t, y_t) under context
    y_{t-1} (gold), with the start context for t = 0.  Full-batch gradient
    descent on mean cross-entropy; a non-finite or exploding loss aborts
    with a learning-rate diagnostic.
    """
    if not sequences:
        raise ValueError("empty dataset")
    L = num_labels
    d = np.atleast_2d(np.asarray(sequences[0][0])).shape[1]

    by_context: list[list[tuple[np.ndarray, int]]] = [[] for _ in range(L + 1)]
    for feats, labels in sequences:
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        y = list(labels)
        by_context[L].append((feats[0], y[0]))
        for t in range(1, len(y)):
            by_context[y[t - 1]].append((feats[t], y[t]))

    weights = np.zeros((L + 1, L, d + 1))
    for c in range(L + 1):
        if not by_context[c]:
            continue
        X = _with_bias(np.stack([f for f, _ in by_context[c]]))
        targets = np.array([t for _, t in by_context[c]])
        onehot = np.zeros((X.shape[0], L))
        onehot[np.arange(X.shape[0]), targets] = 1.0
        w = np.zeros((L, d + 1))
        prev_loss = np.inf
        for _ in range(iterations):
            logits = X @ w.T
            log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
            loss = -(onehot * log_probs).sum() / X.shape[0]
            if not np.isfinite(loss) or loss > prev_loss * 10 + 10:
                raise ValueError(
                    f"MEMM fit diverged in context {c} (loss {loss}); lower the learning rate")
            prev_loss = min(prev_loss, loss)
            grad = (np.exp(log_probs) - onehot).T @ X / X.shape[0]
            w -= learning_rate * grad
        weights[c] = w
    return MemmParams(weights)


def memm_decode(params: MemmParams, observations: np.ndarray) -> list[int]:
    """Viterbi over locally normalized per-step distributions."""
    feats = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    local = memm_local_log_probs(params, feats)     # (n, L+1, L)
    n, _, L = local.shape
    delta = local[0, L]
    back = np.zeros((n, L), dtype=np.intp)
    for t in range(1, n):
        cand = delta[:, None] + local[t, :L]
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)]
    y = int(np.argmax(delta))
    path = [y]
    for t in range(n - 1, 0, -1):
        y = int(back[t, y])
        path.append(y)
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# Linear-emission CRF on the same features (for like-for-like comparisons)
# ---------------------------------------------------------------------------

@dataclass
class LinearCrf:
    w: np.ndarray  # (d, L) feature-to-emission map
    b: np.ndarray  # (L,)
    crf: CrfParams

    def decode(self, feats: np.ndarray) -> list[int]:
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        em = EmissionScores(feats @ self.w + self.b)
        path, _ = viterbi_decode(em, self.crf)
        return path


def fit_linear_crf(sequences: list[tuple[np.ndarray, list[int]]], iterations: int = 300,
                   learning_rate: float = 0.5, num_labels: int = 2) -> LinearCrf:
    """NLL gradient descent for emissions = W f + b plus CRF transitions."""
    if not sequences:
        raise ValueError("empty dataset")
    L = num_labels
    feats_list = [np.atleast_2d(np.asarray(f, dtype=np.float64)) for f, _ in sequences]
    labels_list = [list(y) for _, y in sequences]
    d = feats_list[0].shape[1]
    lengths = np.array([f.shape[0] for f in feats_list])
    T = int(lengths.max())
    B = len(feats_list)
    X = np.zeros((B, T, d))
    Y = np.zeros((B, T), dtype=np.intp)
    for i, (f, y) in enumerate(zip(feats_list, labels_list)):
        X[i, :len(y)] = f
        Y[i, :len(y)] = y

    w = np.zeros((d, L))
    b = np.zeros(L)
    crf = CrfParams.zeros(L)
    n_tokens = lengths.sum()
    for _ in range(iterations):
        scores = X @ w + b
        total, _, g = nll_grad_batch(scores, lengths, Y, crf)
        if not np.isfinite(total):
            raise ValueError("linear CRF fit diverged; lower the learning rate")
        d_w = np.einsum("btd,btl->dl", X, g.emissions) / n_tokens
        d_b = g.emissions.sum(axis=(0, 1)) / n_tokens
        w -= learning_rate * d_w
        b -= learning_rate * d_b
        crf = CrfParams(crf.transitions - learning_rate * g.transitions / n_tokens,
                        crf.start_scores - learning_rate * g.start / n_tokens,
                        crf.end_scores - learning_rate * g.end / n_tokens)
    return LinearCrf(w, b, crf)


# ---------------------------------------------------------------------------
# Label bias construction
# ---------------------------------------------------------------------------

def label_bias_dataset(seed: int = 0, n_train: int = 300, n_test: int = 100,
                       signal: float = 2.0, noise: float = 0.5,
                       start_bias: float = 0.75):
    """Designed 3-label instance exposing the label bias problem.

    Training sequences have length 2.  First-position features are
    identically zero (the first token carries no evidence at all);
    second-position features are noisy one-hots of the gold label:

        [1, 1] — fraction start_bias; state 1 has a single outgoing
                 transition (1 -> 1, observed without exception)
        [2, 0] — half the remainder; state 2 branches on evidence
        [2, 2] — the other half

    Test sequences have gold [2, 0].  The blank first feature leaves only
    the start prior (tilted toward 1), and the second feature strongly
    indicates 0.  A locally normalized model commits to state 1 on the
    prior and then pays nothing for the forced 1 -> 1 step, ignoring the
    evidence; a globally normalized model weighs the strong second-position
    evidence and recovers [2, 0].

    Returns:
        (train, test): lists of (features (2, 3), labels) pairs.
    """
    rng = np.random.default_rng(seed)
    eye = np.eye(3) * signal
    blank = np.zeros(3)

    def noisy(label):
        return eye[label] + rng.normal(0.0, noise, size=3)

    train = []
    n_absorbing = int(round(n_train * start_bias))
    for i in range(n_train):
        if i < n_absorbing:
            labels = [1, 1]
        elif i % 2 == 0:
            labels = [2, 0]
        else:
            labels = [2, 2]
        train.append((np.stack([blank, noisy(labels[1])]), labels))

    test = []
    for _ in range(n_test):
        test.append((np.stack([blank, noisy(0)]), [2, 0]))
    return train, test
