"""Acceptance gate: every criterion, at its stated tolerance, one PASS line each.

The synthetic benchmark is pinned here once and shared across criteria:
separation delta = 3 per embedding coordinate (unit noise), 2000 train /
200 test records, all six authorship patterns, total lengths 60-120,
default 3 epochs.  Desk-scale dimensions (2-dim embeddings, hidden 24,
2 layers) and benchmark learning rates are fixed alongside; the package
defaults remain the published table values.
"""

import io
import itertools
import time

import numpy as np
import pytest

from mixseg.baselines import fit_linear_crf, label_bias_dataset, memm_decode, memm_fit
from mixseg.cli import run as cli_run
from mixseg.core import Hyperparameters
from mixseg.crf import (
    CrfParams,
    EmissionScores,
    brute_force_best_path,
    brute_force_log_partition,
    grad_nll,
    log_partition,
    nll_loss,
    posterior_marginals,
    score_sequence,
    viterbi_decode,
)
from mixseg.data_io import SynthConfig, synth_generate
from mixseg.emissions import BiGruParams, DropoutPolicy, bigru_forward, emissions_backward, head_forward
from mixseg.metrics import boundary_mae, evaluate, f1_at_k, token_metrics
from mixseg.training import (
    TrainConfig,
    fit_baseline_pipeline,
    predict_one,
    predict_one_pipeline,
    train,
)

# --- the pinned benchmark ---------------------------------------------------

BENCH_PATTERNS = {"HM": 1.0, "MH": 1.0, "HMH": 0.8, "MHM": 0.8,
                  "HMHMH": 0.2, "MHMHM": 0.2}
BENCH_RATES = (1e-4, 1e-3, 3e-3, 1e-2)
BENCH_DROPOUT = DropoutPolicy(0.05, 0.1, mode="per-layer-linear")
# (corpus seed, training seed) per run; the first pair is the canonical
# benchmark instance used by the threshold and ordering criteria
BENCH_RUNS = ((103, 0), (101, 1), (102, 2))


def benchmark_corpus(corpus_seed):
    cfg = SynthConfig(seed=corpus_seed, num_records=2200, length_range=(60, 120),
                      delta=3.0, embed_dim=2, pattern_weights=BENCH_PATTERNS)
    records, embeddings = synth_generate(cfg)
    data = [(rec, embeddings[rec.embedding_key].astype(np.float64))
            for rec in records]
    return data[:2000], data[2000:]


def benchmark_config(seed, optimized=True):
    hyper = Hyperparameters(batch_size=32, epochs=3, hidden_dim=24, num_layers=2,
                            llrd_rates=BENCH_RATES, max_len=128)
    if optimized:
        return TrainConfig(hyper=hyper, seed=seed, dropout=BENCH_DROPOUT,
                           init_scheme="xavier", use_llrd=True)
    return TrainConfig(hyper=hyper, seed=seed, dropout=DropoutPolicy(),
                       init_scheme="normal", use_llrd=False)


def token_accuracy(decode, data):
    hits = total = 0
    for rec, emb in data:
        pred = decode(emb)
        hits += sum(int(p == g) for p, g in zip(pred, rec.gold_labels))
        total += len(rec.tokens)
    return hits / total


@pytest.fixture(scope="module")
def benchmark_runs():
    """One optimized and one unoptimized training run per pinned instance."""
    runs = {}
    for corpus_seed, seed in BENCH_RUNS:
        data = benchmark_corpus(corpus_seed)
        t0 = time.perf_counter()
        model, logs = train(data[0], [], benchmark_config(seed, optimized=True),
                            log_stream=io.StringIO())
        seconds = time.perf_counter() - t0
        model_u, logs_u = train(data[0], [], benchmark_config(seed, optimized=False),
                                log_stream=io.StringIO())
        runs[(corpus_seed, seed)] = {
            "data": data, "model": model, "logs": logs, "seconds": seconds,
            "model_unopt": model_u, "logs_unopt": logs_u}
    return runs


def random_instance(rng, n, L, scale=1.5):
    em = EmissionScores(rng.normal(0, scale, size=(n, L)))
    crf = CrfParams(rng.normal(0, scale, size=(L, L)),
                    rng.normal(0, scale, size=L),
                    rng.normal(0, scale, size=L))
    return em, crf


# --- criterion 1: CRF exactness ---------------------------------------------

def test_crf_exactness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_rel = 0.0
    checked = 0
    for _ in range(220):
        n = int(rng.integers(1, 7))
        L = int(rng.integers(2, 4))
        em, crf = random_instance(rng, n, L)
        exact = brute_force_log_partition(em, crf)
        rel = abs(log_partition(em, crf) - exact) / abs(exact)
        worst_rel = max(worst_rel, rel)
        assert rel < 1e-10
        path, score = viterbi_decode(em, crf)
        ref_path, ref_score = brute_force_best_path(em, crf)
        assert path == ref_path
        assert score == pytest.approx(ref_score, rel=1e-12, abs=1e-12)
        checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(f"\nPASS crf-exactness: {checked} instances, worst log-Z rel err "
          f"{worst_rel:.2e}, viterbi exact, {elapsed:.1f}s")


# --- criterion 2: gradient fidelity ------------------------------------------

def _finite_diff_all(x, params, crf, labels, h=1e-5):
    def loss():
        hid, cache = bigru_forward(x, params, training=True)
        em = head_forward(hid, params)
        return nll_loss(em, crf, labels), cache, em

    grads = {}
    for name, arr in list(params.named_arrays()) + [
            ("crf.transitions", crf.transitions), ("crf.start", crf.start_scores),
            ("crf.end", crf.end_scores), ("__input__", x)]:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _, _ = loss()
            flat[i] = orig - h
            down, _, _ = loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def _rel(a, b):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8)


def test_gradient_fidelity():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    models = 0
    for i in range(52):
        n = int(rng.integers(1, 6))
        dim = int(rng.integers(2, 5))
        hidden = int(rng.integers(2, 4))
        layers = int(rng.integers(1, 3))
        params = BiGruParams.init(dim, hidden, layers, 2, seed=1000 + i)
        crf = CrfParams(rng.normal(size=(2, 2)), rng.normal(size=2),
                        rng.normal(size=2))
        x = rng.normal(size=(n, dim))
        labels = rng.integers(0, 2, size=n).tolist()

        hid, cache = bigru_forward(x, params, training=True)
        em = head_forward(hid, params)
        crf_grads = grad_nll(em, crf, labels)
        bigru_grads, d_x = emissions_backward(crf_grads.emissions, cache, params)

        fd = _finite_diff_all(x, params, crf, labels)
        for name, arr in bigru_grads.named_arrays():
            err = _rel(arr, fd[name])
            worst = max(worst, err)
            assert err < 1e-4, f"model {i}: {name} rel err {err:.2e}"
        for name, arr in (("crf.transitions", crf_grads.transitions),
                          ("crf.start", crf_grads.start),
                          ("crf.end", crf_grads.end), ("__input__", d_x)):
            err = _rel(arr, fd[name])
            worst = max(worst, err)
            assert err < 1e-4, f"model {i}: {name} rel err {err:.2e}"
        models += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\nPASS gradient-fidelity: {models} end-to-end models, every parameter "
          f"group < 1e-4 (worst {worst:.2e}), {elapsed:.1f}s")


# --- criterion 3: normalization ----------------------------------------------

def test_normalization():
    rng = np.random.default_rng(11)
    worst_unary = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 10))
        L = int(rng.integers(2, 4))
        em, crf = random_instance(rng, n, L)
        unary, _ = posterior_marginals(em, crf)
        dev = np.abs(unary[:n].sum(axis=1) - 1.0).max()
        worst_unary = max(worst_unary, dev)
        assert dev < 1e-9

    worst_total = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 6))
        L = int(rng.integers(2, 4))
        em, crf = random_instance(rng, n, L)
        log_z = log_partition(em, crf)
        total = sum(np.exp(score_sequence(em, crf, y) - log_z)
                    for y in itertools.product(range(L), repeat=n))
        worst_total = max(worst_total, abs(total - 1.0))
        assert abs(total - 1.0) < 1e-9
    print(f"\nPASS normalization: unary sums within {worst_unary:.1e} of 1, "
          f"full-distribution sums within {worst_total:.1e} of 1")


# --- criterion 4: synthetic benchmark ----------------------------------------

def test_synthetic_benchmark(benchmark_runs):
    run0 = benchmark_runs[BENCH_RUNS[0]]
    model, test_data = run0["model"], run0["data"][1]
    assert run0["seconds"] < 600.0

    by_key = {rec.id: emb for rec, emb in test_data}
    report = evaluate(lambda rec: predict_one(model, by_key[rec.id]),
                      [rec for rec, _ in test_data])

    single_maes = []
    for rec, emb in test_data:
        gold = list(rec.boundaries())
        if len(gold) != 1:
            continue
        pred = predict_one(model, emb)
        pred_bounds = sorted(
            j for j in range(1, len(pred.labels))
            if pred.labels[j] != pred.labels[j - 1])
        if len(pred_bounds) == 1:
            single_maes.append(abs(pred_bounds[0] - gold[0]))
        else:
            single_maes.append(min(abs(b - gold[0]) for b in pred_bounds)
                               if pred_bounds else len(rec.tokens))
    single_mae = float(np.mean(single_maes))

    assert report.token.accuracy >= 0.95
    assert single_mae <= 2.0
    assert report.f1_at_k["all"] >= 0.9
    print(f"\nPASS synthetic-benchmark: token accuracy {report.token.accuracy:.4f} "
          f"(>= 0.95), single-boundary MAE {single_mae:.3f} (<= 2.0), "
          f"F1@3 {report.f1_at_k['all']:.4f} (>= 0.9), "
          f"train {run0['seconds']:.0f}s (< 600s)")


# --- criterion 5: decoder-family ordering ---------------------------------------

def test_ordering(benchmark_runs):
    run0 = benchmark_runs[BENCH_RUNS[0]]
    model, (train_data, test_data) = run0["model"], run0["data"]
    hmm = fit_baseline_pipeline(model, train_data, "hmm")
    memm = fit_baseline_pipeline(model, train_data, "memm")
    acc_crf = token_accuracy(lambda e: predict_one(model, e).labels, test_data)
    acc_hmm = token_accuracy(lambda e: predict_one_pipeline(hmm, e).labels,
                             test_data)
    acc_memm = token_accuracy(lambda e: predict_one_pipeline(memm, e).labels,
                              test_data)
    assert acc_crf >= acc_hmm >= acc_memm, (
        f"ordering violated: crf {acc_crf:.6f}, hmm {acc_hmm:.6f}, "
        f"memm {acc_memm:.6f}")

    # the structural half: on the designed label-bias instance the globally
    # normalized model strictly beats the locally normalized one
    lb_train, lb_test = label_bias_dataset(seed=0)
    memm_lb = memm_fit(lb_train, iterations=400, learning_rate=0.5, num_labels=3)
    crf_lb = fit_linear_crf(lb_train, iterations=400, learning_rate=0.5, num_labels=3)

    def lb_accuracy(decode):
        hits = total = 0
        for feats, gold in lb_test:
            pred = decode(feats)
            hits += sum(int(p == g) for p, g in zip(pred, gold))
            total += len(gold)
        return hits / total

    acc_crf_lb = lb_accuracy(crf_lb.decode)
    acc_memm_lb = lb_accuracy(lambda f: memm_decode(memm_lb, f))
    assert acc_crf_lb > acc_memm_lb
    print(f"\nPASS ordering: benchmark crf {acc_crf:.6f} >= hmm {acc_hmm:.6f} "
          f">= memm {acc_memm:.6f}; label-bias instance crf {acc_crf_lb:.3f} "
          f"> memm {acc_memm_lb:.3f} (strict)")


# --- criterion 6: ablation trend ----------------------------------------------

def test_ablation_trend(benchmark_runs):
    gaps = []
    improved = 0
    for key in BENCH_RUNS:
        entry = benchmark_runs[key]
        test_data = entry["data"][1]
        acc_opt = token_accuracy(lambda e: predict_one(entry["model"], e).labels,
                                 test_data)
        acc_unopt = token_accuracy(
            lambda e: predict_one(entry["model_unopt"], e).labels, test_data)
        gaps.append((key, acc_opt, acc_unopt))
        assert acc_opt >= acc_unopt, (
            f"run {key}: optimizations worsened accuracy "
            f"({acc_opt:.5f} < {acc_unopt:.5f})")
        if acc_opt > acc_unopt:
            improved += 1
    assert improved >= 2
    detail = ", ".join(f"{k}: {a:.5f} vs {b:.5f}" for k, a, b in gaps)
    print(f"\nPASS ablation-trend: optimized >= unoptimized on all seeds, "
          f"improved on {improved}/3 ({detail})")


# --- criterion 7: loss monotonicity --------------------------------------------

def test_loss_monotonicity(benchmark_runs):
    for key in BENCH_RUNS:
        logs = benchmark_runs[key]["logs"]
        losses = [entry.loss for entry in logs]
        assert len(losses) == 3
        assert losses[0] > losses[2], f"run {key}: {losses}"
        assert all(b <= a for a, b in zip(losses, losses[1:])), \
            f"run {key}: losses not non-increasing: {losses}"
    print("\nPASS loss-monotonicity: epoch-1 > epoch-3 and non-increasing "
          "on all 3 seeds")


# --- criterion 8: metric unit values -------------------------------------------

def test_metric_units():
    assert f1_at_k({3, 7, 12}, {3, 12}) == pytest.approx(0.8)
    assert boundary_mae([108], [100]) == 8.0
    perfect = token_metrics([0, 1, 1, 0], [0, 1, 1, 0])
    assert perfect.mcc == 1.0 and perfect.kappa == 1.0
    chance = token_metrics([0, 0, 0, 0], [0, 0, 1, 1])
    assert chance.kappa == 0.0
    print("\nPASS metric-units: f1@k 0.8, mae 8.0, perfect MCC=kappa=1, "
          "chance kappa=0")


# --- criterion 9: determinism ---------------------------------------------------

def test_determinism(tmp_path):
    def pipeline(tag):
        work = tmp_path / tag
        work.mkdir()
        assert cli_run(["synth", "--seed", "9", "--n", "120", "--out", str(work),
                        "--length-range", "40,60", "--embed-dim", "3"]) == 0
        assert cli_run(["train", "--train", str(work / "dataset.jsonl"),
                        "--embeddings", str(work / "embeddings.seqe"),
                        "--out", str(work / "model.seqm"),
                        "--epochs", "2", "--batch-size", "16",
                        "--hidden-dim", "8", "--num-layers", "2",
                        "--llrd-rates", "1e-4,1e-3,3e-3,1e-2",
                        "--max-len", "64", "--seed", "3"]) == 0
        assert cli_run(["predict", "--model", str(work / "model.seqm"),
                        "--data", str(work / "dataset.jsonl"),
                        "--embeddings", str(work / "embeddings.seqe"),
                        "--out", str(work / "preds.jsonl")]) == 0
        assert cli_run(["eval", "--predictions", str(work / "preds.jsonl"),
                        "--data", str(work / "dataset.jsonl"),
                        "--out-prefix", str(work / "report")]) == 0
        return {name: (work / name).read_bytes()
                for name in ("dataset.jsonl", "embeddings.seqe", "model.seqm",
                             "preds.jsonl", "report.kv", "report.txt")}

    first, second = pipeline("one"), pipeline("two")
    for name in first:
        assert first[name] == second[name], f"{name} differs between runs"
    print("\nPASS determinism: synth/train/predict/eval byte-identical "
          "across two seeded runs (6 artifacts)")
