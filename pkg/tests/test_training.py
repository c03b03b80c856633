import io

import numpy as np
import pytest

from mixseg.core import Hyperparameters
from mixseg.data_io import SynthConfig, synth_generate
from mixseg.emissions import DropoutPolicy
from mixseg.training import (
    OptimizerState,
    SegmenterModel,
    TrainConfig,
    build_llrd_groups,
    clip_gradients,
    optimizer_step,
    predict_one,
    train,
)


def small_corpus(seed, n=40, delta=3.0):
    cfg = SynthConfig(seed=seed, num_records=n, length_range=(20, 30),
                      min_segment=4, delta=delta, embed_dim=4,
                      pattern_weights={"HM": 1.0, "MH": 1.0, "HMH": 1.0})
    records, embeddings = synth_generate(cfg)
    return [(rec, embeddings[rec.embedding_key].astype(np.float64)) for rec in records]


def small_config(seed=0, epochs=2, **kw):
    hyper = Hyperparameters(batch_size=8, epochs=epochs, hidden_dim=8,
                            num_layers=2, llrd_rates=(1e-4, 3e-3, 1e-2, 3e-2),
                            max_len=64)
    return TrainConfig(hyper=hyper, seed=seed, **kw)


# ---------------------------------------------------------------------------
# LLRD groups
# ---------------------------------------------------------------------------

def test_llrd_default_rates():
    model = SegmenterModel.init(4, 3, 3, 2, seed=0)
    with pytest.warns(UserWarning, match="frozen"):
        groups = build_llrd_groups(model, Hyperparameters().llrd_rates)
    assert [g.group_id for g in groups] == [
        "embeddings", "lower_encoder", "upper_encoder_nn", "head_crf"]
    assert [g.learning_rate for g in groups] == [1e-6, 5e-6, 1e-5, 1e-4]
    assert groups[0].param_names == []
    # 3 layers: lower half is layer 0, upper half layers 1-2
    assert all(n.startswith("gru.0.") for n in groups[1].param_names)
    assert {n.split(".")[1] for n in groups[2].param_names} == {"1", "2"}
    assert set(groups[3].param_names) == {
        "head.w", "head.b", "crf.transitions", "crf.start", "crf.end"}


def test_llrd_covers_every_parameter_once():
    model = SegmenterModel.init(4, 3, 3, 2, seed=0)
    with pytest.warns(UserWarning):
        groups = build_llrd_groups(model, (1e-6, 5e-6, 1e-5, 1e-4))
    seen = [n for g in groups for n in g.param_names]
    assert sorted(seen) == sorted(n for n, _ in model.named_arrays())
    rates = [g.learning_rate for g in groups]
    assert rates == sorted(rates)  # non-decreasing input-side to output-side


def test_llrd_single_uniform_rate():
    model = SegmenterModel.init(4, 3, 2, 2, seed=0)
    groups = build_llrd_groups(model, (1e-3,))
    assert len(groups) == 1
    assert sorted(groups[0].param_names) == sorted(n for n, _ in model.named_arrays())


def test_llrd_bad_rates():
    model = SegmenterModel.init(4, 3, 2, 2, seed=0)
    with pytest.raises(ValueError):
        build_llrd_groups(model, (1e-6, 5e-6))
    with pytest.raises(ValueError):
        build_llrd_groups(model, (1e-4, 5e-6, 1e-5, 1e-3))


# ---------------------------------------------------------------------------
# clip_gradients
# ---------------------------------------------------------------------------

def test_clip_halves_at_double_norm():
    grads = {"a": np.array([2.0, 0.0]), "b": np.array([0.0, 0.0])}
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(2.0)
    assert np.allclose(clipped["a"], [1.0, 0.0])


def test_clip_leaves_small_gradients():
    grads = {"a": np.array([0.3, 0.4])}
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(0.5)
    assert clipped["a"] is grads["a"]


def test_clip_random_thousand_dim():
    rng = np.random.default_rng(0)
    grads = {"w": rng.normal(size=1000)}
    clipped, _ = clip_gradients(grads, 1.0)
    assert np.sqrt(np.sum(clipped["w"] ** 2)) <= 1.0 + 1e-12


def test_clip_nan_aborts():
    with pytest.raises(ValueError, match="non-finite"):
        clip_gradients({"w": np.array([1.0, np.nan])}, 1.0)


def test_clip_infinite_max_norm_is_identity():
    rng = np.random.default_rng(1)
    grads = {"w": rng.normal(size=50) * 100}
    clipped, _ = clip_gradients(grads, np.inf)
    assert clipped["w"] is grads["w"]


# ---------------------------------------------------------------------------
# optimizer_step
# ---------------------------------------------------------------------------

def test_zero_gradient_zero_decay_is_identity():
    p = {"w": np.ones((2, 2))}
    before = p["w"].copy()
    optimizer_step(p, {"w": np.zeros((2, 2))}, {"w": 0.1}, OptimizerState(),
                   weight_decay=0.0)
    assert np.array_equal(p["w"], before)


def test_first_step_size_is_lr():
    p = {"w": np.zeros((3, 3))}
    g = {"w": np.ones((3, 3))}
    optimizer_step(p, g, {"w": 0.01}, OptimizerState(), weight_decay=0.0)
    # bias correction makes the first update m_hat/sqrt(v_hat) = 1 exactly
    assert np.allclose(p["w"], -0.01, atol=1e-9)


def test_quadratic_convergence():
    # targets all well away from 0 keep every coordinate in the
    # linear-progress regime for the whole run (no endgame oscillation)
    rng = np.random.default_rng(2)
    target = rng.uniform(0.8, 1.5, size=(4, 4)) * rng.choice([-1.0, 1.0], size=(4, 4))
    p = {"w": np.zeros((4, 4))}
    state = OptimizerState()
    losses = []
    for _ in range(50):
        diff = p["w"] - target
        losses.append(0.5 * float(np.sum(diff * diff)))
        optimizer_step(p, {"w": diff}, {"w": 0.01}, state, weight_decay=0.0)
    assert all(b <= a + 1e-12 for a, b in zip(losses[5:], losses[6:]))
    assert losses[-1] < losses[0]


def test_decay_applies_to_weight_matrices_only():
    p = {"w": np.full((2, 2), 2.0), "b": np.full(2, 2.0),
         "crf.transitions": np.full((2, 2), 2.0)}
    g = {k: np.zeros_like(v) for k, v in p.items()}
    optimizer_step(p, g, {k: 0.1 for k in p}, OptimizerState(), weight_decay=0.5)
    assert np.allclose(p["w"], 2.0 - 0.1 * 0.5 * 2.0)
    assert np.allclose(p["b"], 2.0)
    assert np.allclose(p["crf.transitions"], 2.0)


def test_sgd_flag():
    p = {"w": np.zeros((2, 2))}
    optimizer_step(p, {"w": np.full((2, 2), 3.0)}, {"w": 0.1}, OptimizerState(),
                   weight_decay=0.0, sgd=True)
    assert np.allclose(p["w"], -0.3)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_zero_epochs_returns_initialization():
    data = small_corpus(0, n=10)
    config = small_config(epochs=0)
    model, logs = train(data, [], config, log_stream=io.StringIO())
    assert logs == []
    ref = SegmenterModel.init(4, config.hyper.hidden_dim, config.hyper.num_layers,
                              config.hyper.num_labels, config.seed, config.init_scheme)
    for (n1, a1), (n2, a2) in zip(model.named_arrays(), ref.named_arrays()):
        assert np.array_equal(a1, a2), n1


def test_loss_decreases_on_separable_data():
    data = small_corpus(1, n=40)
    config = small_config(epochs=3)
    stream = io.StringIO()
    model, logs = train(data, data[:10], config, log_stream=stream)
    assert len(logs) == 3
    assert logs[0].loss > logs[-1].loss
    assert all(np.isfinite(entry.loss) for entry in logs)
    out = stream.getvalue()
    assert out.count("epoch=") == 3 and "dev_acc=" in out


def test_train_deterministic():
    data = small_corpus(2, n=24)
    m1, logs1 = train(data, data[:6], small_config(seed=7), log_stream=io.StringIO())
    m2, logs2 = train(data, data[:6], small_config(seed=7), log_stream=io.StringIO())
    for (n1, a1), (n2, a2) in zip(m1.named_arrays(), m2.named_arrays()):
        assert np.array_equal(a1, a2), n1
    assert [(e.epoch, e.loss, e.dev_accuracy) for e in logs1] == \
           [(e.epoch, e.loss, e.dev_accuracy) for e in logs2]


def test_train_seed_changes_model():
    data = small_corpus(3, n=16)
    m1, _ = train(data, [], small_config(seed=0, epochs=1), log_stream=io.StringIO())
    m2, _ = train(data, [], small_config(seed=1, epochs=1), log_stream=io.StringIO())
    assert any(not np.array_equal(a1, a2)
               for (_, a1), (_, a2) in zip(m1.named_arrays(), m2.named_arrays()))


def test_train_with_dropout_runs():
    data = small_corpus(4, n=16)
    config = small_config(epochs=1,
                          dropout=DropoutPolicy(0.1, 0.3, mode="per-layer-linear"))
    model, logs = train(data, [], config, log_stream=io.StringIO())
    assert np.isfinite(logs[0].loss)


def test_train_rejects_invalid_records():
    data = small_corpus(5, n=6)
    rec, emb = data[0]
    data[0] = (rec, emb[:-2])  # embedding rows no longer match the tokens
    with pytest.raises(ValueError, match="embedding rows"):
        train(data, [], small_config(epochs=1), log_stream=io.StringIO())


def test_train_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        train([], [], small_config(), log_stream=io.StringIO())


def test_trained_model_predicts_boundaries():
    data = small_corpus(6, n=60)
    config = small_config(epochs=3)
    model, _ = train(data[:48], data[48:], config, log_stream=io.StringIO())
    hits = total = 0
    for rec, emb in data[48:]:
        pred = predict_one(model, emb)
        hits += sum(p == g for p, g in zip(pred.labels, rec.gold_labels))
        total += len(rec.tokens)
    assert hits / total > 0.9
