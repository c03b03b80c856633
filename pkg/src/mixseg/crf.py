"""Linear-chain CRF: scoring, partition function, gradients, Viterbi.

Components:
    CrfParams / EmissionScores       — parameter and score containers
    score_sequence                   — unnormalized path score
    log_partition                    — forward algorithm
    nll_loss                         — negative log-likelihood
    posterior_marginals              — forward-backward unary + pairwise marginals
    grad_nll                         — analytic gradients (marginals - gold indicators)
    viterbi_decode                   — best path, ties broken toward lower label id
    brute_force_log_partition / brute_force_best_path — enumeration oracles
    nll_grad_batch / viterbi_batch   — batched fast paths used by training

Every dynamic program runs in log space with max-shifted log-sum-exp; no
probability-space fallback.  Transitions are position-independent (one
L x L matrix) with explicit start/end score vectors; zeroing start/end
recovers the plain emission+transition score.  Masks are right-padding
only: a prefix of real positions followed by padding.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass
class CrfParams:
    """transitions[a, b] is the score for label a -> b on adjacent tokens."""

    transitions: np.ndarray    # (L, L)
    start_scores: np.ndarray   # (L,)
    end_scores: np.ndarray     # (L,)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.start_scores = np.asarray(self.start_scores, dtype=np.float64)
        self.end_scores = np.asarray(self.end_scores, dtype=np.float64)
        L = self.transitions.shape[0]
        if self.transitions.shape != (L, L):
            raise ValueError(f"transitions must be square, got {self.transitions.shape}")
        if self.start_scores.shape != (L,) or self.end_scores.shape != (L,):
            raise ValueError("start/end score vectors must have length L")
        for arr in (self.transitions, self.start_scores, self.end_scores):
            if not np.all(np.isfinite(arr)):
                raise ValueError("CRF parameters must be finite")

    @property
    def num_labels(self) -> int:
        return self.transitions.shape[0]

    @classmethod
    def zeros(cls, num_labels: int) -> "CrfParams":
        return cls(np.zeros((num_labels, num_labels)), np.zeros(num_labels),
                   np.zeros(num_labels))


@dataclass
class EmissionScores:
    """Per-token, per-label scores with a right-padding mask.

    mask[t] is True for real tokens; True entries must form a prefix
    (mid-sequence masks are rejected).
    """

    scores: np.ndarray            # (n, L)
    mask: np.ndarray | None = None  # (n,) bool

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError(f"scores must be 2-D (n, L), got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("emission scores must be finite")
        n = self.scores.shape[0]
        if self.mask is None:
            self.mask = np.ones(n, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (n,):
                raise ValueError("mask length must match scores")
            k = int(self.mask.sum())
            if not np.all(self.mask[:k]) or np.any(self.mask[k:]):
                raise ValueError("mask must be right-padding only (trues form a prefix)")

    @property
    def n_real(self) -> int:
        return int(self.mask.sum())

    @property
    def num_labels(self) -> int:
        return self.scores.shape[1]


@dataclass
class CrfGradients:
    """d(nll)/d(psi), d/d(transitions), d/d(start), d/d(end)."""

    emissions: np.ndarray    # (n, L), zero on padded rows
    transitions: np.ndarray  # (L, L)
    start: np.ndarray        # (L,)
    end: np.ndarray          # (L,)


def _real_scores(em: EmissionScores) -> np.ndarray:
    n = em.n_real
    if n == 0:
        raise ValueError("instance has no unmasked positions")
    return em.scores[:n]


def _check_labels(labels, n: int, L: int) -> np.ndarray:
    y = np.asarray(list(labels), dtype=np.intp)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels for {n} unmasked positions, got {y.shape[0]}")
    if y.min() < 0 or y.max() >= L:
        raise ValueError(f"labels outside 0..{L - 1}")
    return y


def score_sequence(em: EmissionScores, crf: CrfParams, labels) -> float:
    """Unnormalized score of one labeling over the unmasked prefix.

    S = start[y_1] + sum_t psi_t(y_t) + sum_t phi(y_t, y_{t+1}) + end[y_n].
    """
    scores = _real_scores(em)
    n = scores.shape[0]
    y = _check_labels(labels, n, em.num_labels)
    total = crf.start_scores[y[0]] + crf.end_scores[y[-1]]
    total += scores[np.arange(n), y].sum()
    if n > 1:
        total += crf.transitions[y[:-1], y[1:]].sum()
    return float(total)


def log_partition(em: EmissionScores, crf: CrfParams) -> float:
    """log Z by the forward algorithm over the unmasked prefix."""
    scores = _real_scores(em)
    alpha = crf.start_scores + scores[0]
    for t in range(1, scores.shape[0]):
        alpha = logsumexp(alpha[:, None] + crf.transitions, axis=0) + scores[t]
    return float(logsumexp(alpha + crf.end_scores))


def nll_loss(em: EmissionScores, crf: CrfParams, labels) -> float:
    """Negative log-likelihood: log Z - S(x, y).  Nonnegative up to rounding."""
    return log_partition(em, crf) - score_sequence(em, crf, labels)


def posterior_marginals(em: EmissionScores, crf: CrfParams) -> tuple[np.ndarray, np.ndarray]:
    """Forward-backward posterior marginals.

    Returns:
        unary: (n, L); row t is P(y_t = .) for unmasked t, zeros on padding.
        pairwise: (n-1, L, L); slab t is P(y_t = a, y_{t+1} = b), zeros where
            t+1 is padded.
    """
    scores = _real_scores(em)
    n, L = scores.shape
    n_full = em.scores.shape[0]

    log_alpha = np.empty((n, L))
    log_alpha[0] = crf.start_scores + scores[0]
    for t in range(1, n):
        log_alpha[t] = logsumexp(log_alpha[t - 1][:, None] + crf.transitions, axis=0) + scores[t]

    log_beta = np.empty((n, L))
    log_beta[-1] = crf.end_scores
    for t in range(n - 2, -1, -1):
        log_beta[t] = logsumexp(
            crf.transitions + (scores[t + 1] + log_beta[t + 1])[None, :], axis=1)

    log_z = logsumexp(log_alpha[-1] + crf.end_scores)

    unary = np.zeros((n_full, L))
    unary[:n] = np.exp(log_alpha + log_beta - log_z)

    pairwise = np.zeros((max(n_full - 1, 0), L, L))
    for t in range(n - 1):
        log_pair = (log_alpha[t][:, None] + crf.transitions
                    + (scores[t + 1] + log_beta[t + 1])[None, :] - log_z)
        pairwise[t] = np.exp(log_pair)
    return unary, pairwise


def grad_nll(em: EmissionScores, crf: CrfParams, labels) -> CrfGradients:
    """Analytic gradients of nll_loss: posterior marginals minus gold indicators."""
    scores = _real_scores(em)
    n, L = scores.shape
    y = _check_labels(labels, n, L)
    unary, pairwise = posterior_marginals(em, crf)

    d_em = unary.copy()
    d_em[np.arange(n), y] -= 1.0

    d_trans = pairwise[:max(n - 1, 0)].sum(axis=0)
    np.subtract.at(d_trans, (y[:-1], y[1:]), 1.0)

    d_start = unary[0].copy()
    d_start[y[0]] -= 1.0
    d_end = unary[n - 1].copy()
    d_end[y[-1]] -= 1.0
    return CrfGradients(d_em, d_trans, d_start, d_end)


def viterbi_decode(em: EmissionScores, crf: CrfParams) -> tuple[list[int], float]:
    """Highest-scoring label sequence over the unmasked prefix.

    Ties break toward the lower label id at the final argmax and at every
    backtrack step, so the result is deterministic.
    """
    scores = _real_scores(em)
    n, L = scores.shape
    delta = crf.start_scores + scores[0]
    back = np.zeros((n, L), dtype=np.intp)
    for t in range(1, n):
        cand = delta[:, None] + crf.transitions      # (from, to)
        back[t] = np.argmax(cand, axis=0)            # argmax takes the lowest index on ties
        delta = cand[back[t], np.arange(L)] + scores[t]
    final = delta + crf.end_scores
    last = int(np.argmax(final))
    path = [last]
    for t in range(n - 1, 0, -1):
        last = int(back[t, last])
        path.append(last)
    path.reverse()
    return path, float(final[path[-1]])


# ---------------------------------------------------------------------------
# Enumeration oracles (exponential; for tests and small instances only)
# ---------------------------------------------------------------------------

def _enumerate_scores(em: EmissionScores, crf: CrfParams):
    """Yield (labeling, score) over all L^n labelings, scored term by term."""
    scores = _real_scores(em)
    n, L = scores.shape
    if L ** n > 2_000_000:
        raise ValueError(f"instance too large to enumerate: L^n = {L}^{n}")
    for labeling in itertools.product(range(L), repeat=n):
        s = crf.start_scores[labeling[0]] + crf.end_scores[labeling[-1]]
        for t in range(n):
            s += scores[t, labeling[t]]
        for t in range(n - 1):
            s += crf.transitions[labeling[t], labeling[t + 1]]
        yield labeling, float(s)


def brute_force_log_partition(em: EmissionScores, crf: CrfParams) -> float:
    """Exact log Z by summing over every labeling."""
    return float(logsumexp([s for _, s in _enumerate_scores(em, crf)]))


def brute_force_best_path(em: EmissionScores, crf: CrfParams) -> tuple[list[int], float]:
    """Exact argmax labeling under the Viterbi tie-break.

    Among equal-scoring labelings the winner is the one whose REVERSED
    sequence is lexicographically smallest: Viterbi picks the lowest label
    at the final position first, then at each backtrack step.
    """
    best_path: tuple[int, ...] | None = None
    best_score = -np.inf
    for labeling, s in _enumerate_scores(em, crf):
        if s > best_score or (s == best_score and labeling[::-1] < best_path[::-1]):
            best_path, best_score = labeling, s
    return list(best_path), best_score


# ---------------------------------------------------------------------------
# Batched fast paths (training / bulk decoding)
# ---------------------------------------------------------------------------

def nll_grad_batch(scores: np.ndarray, lengths: np.ndarray, labels: np.ndarray,
                   crf: CrfParams) -> tuple[float, np.ndarray, CrfGradients]:
    """Summed NLL and gradients for a right-padded batch.

    Args:
        scores: (B, T, L) emission scores, padding rows ignored.
        lengths: (B,) real lengths, all >= 1.
        labels: (B, T) gold labels, padding entries ignored.
        crf: shared parameters.

    Returns:
        (total_nll, per_sequence_nll, gradients); gradients.emissions has
        shape (B, T, L) with zeros on padding, and transition/start/end
        gradients are summed over the batch.
    """
    scores = np.asarray(scores, dtype=np.float64)
    B, T, L = scores.shape
    lengths = np.asarray(lengths, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    trans = crf.transitions

    # Forward pass, keeping every alpha for the backward sweep.
    log_alpha = np.empty((B, T, L))
    log_alpha[:, 0] = crf.start_scores[None, :] + scores[:, 0]
    for t in range(1, T):
        nxt = logsumexp(log_alpha[:, t - 1][:, :, None] + trans[None], axis=1) + scores[:, t]
        live = (t < lengths)[:, None]
        log_alpha[:, t] = np.where(live, nxt, log_alpha[:, t - 1])

    last = lengths - 1
    rows = np.arange(B)
    log_z = logsumexp(log_alpha[rows, last] + crf.end_scores[None, :], axis=1)

    log_beta = np.empty((B, T, L))
    log_beta[:, T - 1] = crf.end_scores
    for t in range(T - 2, -1, -1):
        cont = logsumexp(
            trans[None] + (scores[:, t + 1] + log_beta[:, t + 1])[:, None, :], axis=2)
        is_last = (t == last)[:, None]
        log_beta[:, t] = np.where(is_last, crf.end_scores[None, :], cont)

    pos_mask = np.arange(T)[None, :] < lengths[:, None]          # (B, T)
    unary = np.exp(log_alpha + log_beta - log_z[:, None, None])
    unary[~pos_mask] = 0.0

    # Gold path scores.
    tok_idx = np.arange(T)[None, :].repeat(B, axis=0)
    emit_gold = np.where(pos_mask, scores[rows[:, None], tok_idx, labels], 0.0).sum(axis=1)
    pair_mask = np.arange(T - 1)[None, :] < (lengths - 1)[:, None]  # (B, T-1)
    trans_gold = np.where(pair_mask, trans[labels[:, :-1], labels[:, 1:]], 0.0).sum(axis=1)
    path = crf.start_scores[labels[:, 0]] + emit_gold + trans_gold + crf.end_scores[labels[rows, last]]
    per_seq_nll = log_z - path

    # Gradients: marginals minus gold indicators.
    d_em = unary.copy()
    flat = d_em.reshape(B * T, L)
    sel = pos_mask.reshape(-1)
    np.subtract.at(flat, (np.nonzero(sel)[0], labels.reshape(-1)[sel]), 1.0)

    d_trans = np.zeros((L, L))
    for t in range(T - 1):
        live = pair_mask[:, t]
        if not live.any():
            continue
        log_pair = (log_alpha[:, t][:, :, None] + trans[None]
                    + (scores[:, t + 1] + log_beta[:, t + 1])[:, None, :]
                    - log_z[:, None, None])
        d_trans += np.exp(log_pair[live]).sum(axis=0)
    np.subtract.at(d_trans, (labels[:, :-1][pair_mask], labels[:, 1:][pair_mask]), 1.0)

    d_start = unary[:, 0].sum(axis=0)
    np.subtract.at(d_start, labels[:, 0], 1.0)
    d_end = unary[rows, last].sum(axis=0)
    np.subtract.at(d_end, labels[rows, last], 1.0)

    grads = CrfGradients(d_em, d_trans, d_start, d_end)
    return float(per_seq_nll.sum()), per_seq_nll, grads


def viterbi_batch(scores: np.ndarray, lengths: np.ndarray, crf: CrfParams) -> list[list[int]]:
    """Viterbi paths for a right-padded batch; same tie-break as viterbi_decode."""
    scores = np.asarray(scores, dtype=np.float64)
    B, T, L = scores.shape
    lengths = np.asarray(lengths, dtype=np.intp)
    trans = crf.transitions

    delta = crf.start_scores[None, :] + scores[:, 0]
    back = np.zeros((B, T, L), dtype=np.intp)
    for t in range(1, T):
        cand = delta[:, :, None] + trans[None]              # (B, from, to)
        back[:, t] = np.argmax(cand, axis=1)
        nxt = np.take_along_axis(cand, back[:, t][:, None, :], axis=1)[:, 0, :] + scores[:, t]
        live = (t < lengths)[:, None]
        delta = np.where(live, nxt, delta)

    paths: list[list[int]] = []
    final = delta + crf.end_scores[None, :]
    for b in range(B):
        n = int(lengths[b])
        y = int(np.argmax(final[b]))
        path = [y]
        for t in range(n - 1, 0, -1):
            y = int(back[b, t, y])
            path.append(y)
        path.reverse()
        paths.append(path)
    return paths
