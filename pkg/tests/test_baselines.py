import itertools

import numpy as np
import pytest

from mixseg.baselines import (
    CategoricalEmissions,
    GaussianEmissions,
    HmmParams,
    MemmParams,
    fit_linear_crf,
    hmm_decode,
    hmm_fit,
    label_bias_dataset,
    memm_decode,
    memm_fit,
    memm_local_log_probs,
    quantize_sign,
)


def brute_force_hmm_path(params, observations):
    """Enumerate all L^n paths; same tie-break as the CRF decoder."""
    feats = np.atleast_2d(observations)
    log_b = params.emissions.log_prob(feats)
    log_a = np.log(params.transition)
    log_pi = np.log(params.initial)
    n, L = log_b.shape
    best, best_score = None, -np.inf
    for path in itertools.product(range(L), repeat=n):
        s = log_pi[path[0]] + log_b[0, path[0]]
        for t in range(1, n):
            s += log_a[path[t - 1], path[t]] + log_b[t, path[t]]
        if s > best_score or (s == best_score and path[::-1] < best[::-1]):
            best, best_score = path, s
    return list(best)


def counting_oracle(sequences, k, L):
    """Plain dict-based transition/initial counting, independent of hmm_fit."""
    init = {a: 0 for a in range(L)}
    trans = {(a, b): 0 for a in range(L) for b in range(L)}
    for _, labels in sequences:
        init[labels[0]] += 1
        for a, b in zip(labels, labels[1:]):
            trans[(a, b)] += 1
    n_init = sum(init.values())
    initial = [(init[a] + k) / (n_init + k * L) for a in range(L)]
    transition = []
    for a in range(L):
        row_total = sum(trans[(a, b)] for b in range(L))
        transition.append([(trans[(a, b)] + k) / (row_total + k * L) for b in range(L)])
    return np.array(initial), np.array(transition)


def make_sequences(rng, n_seqs, L=2, d=2, sep=3.0):
    seqs = []
    means = np.stack([np.full(d, -sep / 2), np.full(d, sep / 2)] +
                     [np.full(d, sep * (j + 1)) for j in range(L - 2)])
    for _ in range(n_seqs):
        n = int(rng.integers(2, 9))
        labels = rng.integers(0, L, size=n).tolist()
        feats = means[labels] + rng.normal(0, 1.0, size=(n, d))
        seqs.append((feats, labels))
    return seqs


# ---------------------------------------------------------------------------
# HMM fitting
# ---------------------------------------------------------------------------

def test_hmm_fit_add_one_single_sequence():
    feats = np.zeros((3, 1))
    params = hmm_fit([(feats, [0, 0, 1])], smoothing=1.0)
    assert np.allclose(params.transition[0], [0.5, 0.5])
    assert np.allclose(params.initial, [2 / 3, 1 / 3])


def test_hmm_fit_self_loop():
    feats = np.zeros((4, 1))
    params = hmm_fit([(feats, [0, 0, 0, 0])], smoothing=1.0)
    assert params.transition[0, 0] == pytest.approx(0.8)


def test_hmm_fit_matches_counting_oracle():
    rng = np.random.default_rng(0)
    seqs = make_sequences(rng, 200)
    params = hmm_fit(seqs, smoothing=1.0)
    ref_init, ref_trans = counting_oracle(seqs, 1.0, 2)
    assert np.allclose(params.initial, ref_init, atol=1e-12)
    assert np.allclose(params.transition, ref_trans, atol=1e-12)


def test_hmm_fit_rows_stochastic():
    rng = np.random.default_rng(1)
    for k in (0.1, 1.0, 5.0):
        params = hmm_fit(make_sequences(rng, 30), smoothing=k)
        assert np.allclose(params.transition.sum(axis=1), 1.0, atol=1e-9)
        assert np.isclose(params.initial.sum(), 1.0, atol=1e-9)
        assert np.all(params.transition > 0)


def test_hmm_fit_empty_dataset():
    with pytest.raises(ValueError):
        hmm_fit([], smoothing=1.0)


def test_hmm_gaussian_mle():
    rng = np.random.default_rng(2)
    f0 = rng.normal(-2, 0.5, size=(50, 3))
    f1 = rng.normal(2, 0.5, size=(50, 3))
    seqs = [(np.vstack([f0[i], f1[i]]), [0, 1]) for i in range(50)]
    params = hmm_fit(seqs, smoothing=1.0)
    assert np.allclose(params.emissions.means[0], f0.mean(axis=0), atol=1e-12)
    assert np.allclose(params.emissions.variances[1], f1.var(axis=0), atol=1e-12)


# ---------------------------------------------------------------------------
# HMM decoding
# ---------------------------------------------------------------------------

def symmetric_params(L=2, d=1):
    em = GaussianEmissions(np.zeros((L, d)), np.ones((L, d)))
    return HmmParams(np.full(L, 1.0 / L), np.full((L, L), 1.0 / L), em)


def test_hmm_decode_symmetric_tie_break():
    params = symmetric_params()
    path = hmm_decode(params, np.zeros((4, 1)))
    assert path == [0, 0, 0, 0]


def test_hmm_decode_near_deterministic_emissions():
    em = GaussianEmissions(np.array([[-3.0], [3.0]]), np.full((2, 1), 0.01))
    params = HmmParams(np.array([0.5, 0.5]), np.array([[0.6, 0.4], [0.4, 0.6]]), em)
    obs = np.array([[-3.0], [3.0], [3.0], [-3.0]])
    assert hmm_decode(params, obs) == [0, 1, 1, 0]


def test_hmm_decode_matches_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(25):
        L = int(rng.integers(2, 4))
        seqs = make_sequences(rng, 40, L=L, sep=1.5)
        params = hmm_fit(seqs, smoothing=0.5, num_labels=L)
        n = int(rng.integers(1, 7))
        obs = rng.normal(0, 2.0, size=(n, 2))
        assert hmm_decode(params, obs) == brute_force_hmm_path(params, obs)


def test_hmm_categorical_mode():
    rng = np.random.default_rng(4)
    seqs = make_sequences(rng, 80, sep=4.0)
    params = hmm_fit(seqs, smoothing=1.0, emission_model="categorical")
    assert isinstance(params.emissions, CategoricalEmissions)
    correct = total = 0
    for feats, labels in make_sequences(np.random.default_rng(5), 20, sep=4.0):
        pred = hmm_decode(params, feats)
        correct += sum(p == g for p, g in zip(pred, labels))
        total += len(labels)
    assert correct / total > 0.9


def test_quantize_sign():
    feats = np.array([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])
    assert quantize_sign(feats).tolist() == [1, 2, 3]


def test_hmm_unfitted_params_rejected():
    em = GaussianEmissions(np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        HmmParams(np.array([0.5, 0.5]), np.array([[0.9, 0.3], [0.5, 0.5]]), em)


# ---------------------------------------------------------------------------
# MEMM
# ---------------------------------------------------------------------------

def test_memm_zero_weights_uniform():
    params = MemmParams(np.zeros((3, 2, 4)))
    local = memm_local_log_probs(params, np.random.default_rng(0).normal(size=(5, 3)))
    assert np.allclose(np.exp(local), 0.5, atol=1e-12)
    assert memm_decode(params, np.zeros((4, 3))) == [0, 0, 0, 0]


def test_memm_local_distributions_normalize():
    rng = np.random.default_rng(6)
    seqs = make_sequences(rng, 60)
    params = memm_fit(seqs, iterations=150, learning_rate=0.5)
    local = memm_local_log_probs(params, rng.normal(size=(7, 2)))
    assert np.allclose(np.exp(local).sum(axis=2), 1.0, atol=1e-9)


def test_memm_single_position_logistic_argmax():
    rng = np.random.default_rng(7)
    seqs = []
    for _ in range(120):
        lab = int(rng.integers(0, 2))
        f = np.array([[3.0 if lab else -3.0]]) + rng.normal(0, 0.3, size=(1, 1))
        seqs.append((f, [lab]))
    params = memm_fit(seqs, iterations=200, learning_rate=0.5)
    assert memm_decode(params, np.array([[4.0]])) == [1]
    assert memm_decode(params, np.array([[-4.0]])) == [0]


def test_memm_divergence_reported():
    # overlapping classes + an absurd learning rate: the loss oscillates
    # upward instead of saturating, and the fit must refuse to continue
    rng = np.random.default_rng(8)
    seqs = make_sequences(rng, 40, sep=0.2)
    with pytest.raises(ValueError, match="learning rate"):
        memm_fit(seqs, iterations=500, learning_rate=1e6)


def test_memm_empty_dataset():
    with pytest.raises(ValueError):
        memm_fit([], iterations=10, learning_rate=0.1)


# ---------------------------------------------------------------------------
# Label bias construction
# ---------------------------------------------------------------------------

def test_label_bias_memm_vs_crf_paths():
    train, test = label_bias_dataset(seed=0)
    memm = memm_fit(train, iterations=400, learning_rate=0.5, num_labels=3)
    crf = fit_linear_crf(train, iterations=400, learning_rate=0.5, num_labels=3)

    memm_picks_biased = sum(memm_decode(memm, f) == [1, 1] for f, _ in test)
    crf_picks_evidence = sum(crf.decode(f) == [2, 0] for f, _ in test)
    # MEMM follows the forced 1 -> 1 transition on most test cases; the CRF
    # weighs the strong second-position evidence and recovers the gold path.
    assert memm_picks_biased > len(test) * 0.8
    assert crf_picks_evidence > len(test) * 0.8


def test_label_bias_crf_strictly_more_accurate():
    train, test = label_bias_dataset(seed=1)
    memm = memm_fit(train, iterations=400, learning_rate=0.5, num_labels=3)
    crf = fit_linear_crf(train, iterations=400, learning_rate=0.5, num_labels=3)

    def token_acc(decode):
        hits = total = 0
        for feats, gold in test:
            pred = decode(feats)
            hits += sum(p == g for p, g in zip(pred, gold))
            total += len(gold)
        return hits / total

    assert token_acc(crf.decode) > token_acc(lambda f: memm_decode(memm, f))
