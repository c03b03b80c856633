"""Optimization loop for the BiGRU + CRF segmenter.

Components:
    SegmenterModel             — BiGRU emission network + CRF parameters
    TrainConfig / EpochLog     — run configuration and per-epoch records
    build_llrd_groups          — layer-wise learning-rate groups
    clip_gradients             — global-norm clipping
    optimizer_step             — adaptive moments with decoupled weight decay
    train                      — epochs x batches of forward/NLL/backward/step
    predict_one / features_for — decoding and feature export helpers

Training is deterministic for a fixed (config, seed, data): one generator
drives shuffling and dropout, batches are right-padded, and gradients are
reduced in batch index order.  Decoupled weight decay touches weight
matrices only — never biases, never CRF scores.  The optimizer family is
adaptive moment estimation; plain SGD sits behind a config flag.
"""

from __future__ import annotations

import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from mixseg.core import Hyperparameters, MixedTextRecord, validate_record
from mixseg.crf import (
    CrfParams,
    EmissionScores,
    nll_grad_batch,
    posterior_marginals,
    viterbi_batch,
    viterbi_decode,
)
from mixseg.emissions import (
    BiGruParams,
    DropoutPolicy,
    bigru_forward,
    bigru_forward_batch,
    emissions_backward_batch,
    head_forward_batch,
)
from mixseg.metrics import Prediction, top_k_boundaries

GROUP_IDS = ("embeddings", "lower_encoder", "upper_encoder_nn", "head_crf")


@dataclass
class SegmenterModel:
    bigru: BiGruParams
    crf: CrfParams

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, num_layers: int, num_labels: int,
             seed: int, scheme: str = "xavier") -> "SegmenterModel":
        return cls(BiGruParams.init(input_dim, hidden_dim, num_layers, num_labels,
                                    seed, scheme),
                   CrfParams.zeros(num_labels))

    @classmethod
    def empty(cls, input_dim: int, hidden_dim: int, num_layers: int,
              num_labels: int) -> "SegmenterModel":
        return cls.init(input_dim, hidden_dim, num_layers, num_labels, seed=0)

    def named_arrays(self):
        yield from self.bigru.named_arrays()
        yield "crf.transitions", self.crf.transitions
        yield "crf.start", self.crf.start_scores
        yield "crf.end", self.crf.end_scores

    def parameter_count(self) -> int:
        return sum(arr.size for _, arr in self.named_arrays())


@dataclass
class ParamGroup:
    group_id: str
    learning_rate: float
    param_names: list[str]


@dataclass
class TrainConfig:
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    seed: int = 0
    dropout: DropoutPolicy = field(default_factory=DropoutPolicy)
    init_scheme: str = "xavier"           # "xavier" | "normal"
    use_llrd: bool = True                 # off: every group gets the top rate
    optimizer: str = "adamw"              # "adamw" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class EpochLog:
    epoch: int
    loss: float                  # summed CRF NLL over the epoch
    dev_accuracy: float | None
    seconds: float


def build_llrd_groups(model: SegmenterModel, rates) -> list[ParamGroup]:
    """Assign every parameter to one of four input-to-output groups.

    rates must be four strictly increasing values (embeddings, lower half
    of the recurrent stack, upper half plus the rest of the network, head
    and CRF), or a single value for a degenerate uniform grouping.  The
    embedding group is empty here — the embedding table is frozen — and a
    warning records that.
    """
    rates = [float(r) for r in rates]
    if len(rates) == 1:
        return [ParamGroup("uniform", rates[0],
                           [name for name, _ in model.named_arrays()])]
    if len(rates) != 4:
        raise ValueError(f"need 1 or 4 learning rates, got {len(rates)}")
    if any(b <= a for a, b in zip(rates, rates[1:])):
        raise ValueError(f"learning rates must be strictly increasing: {rates}")

    num_layers = model.bigru.num_layers
    lower = {l for l in range(num_layers // 2)}
    lower_names, upper_names, head_names = [], [], []
    for name, _ in model.named_arrays():
        if name.startswith("gru."):
            layer = int(name.split(".")[1])
            (lower_names if layer in lower else upper_names).append(name)
        else:
            head_names.append(name)

    warnings.warn("embedding table is frozen; LLRD group 'embeddings' is empty")
    return [
        ParamGroup("embeddings", rates[0], []),
        ParamGroup("lower_encoder", rates[1], lower_names),
        ParamGroup("upper_encoder_nn", rates[2], upper_names),
        ParamGroup("head_crf", rates[3], head_names),
    ]


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float
                   ) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    sq = 0.0
    for name, g in grads.items():
        s = float(np.sum(g * g))
        if not np.isfinite(s):
            raise ValueError(f"non-finite gradient in {name!r}; training aborted")
        sq += s
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _decayable(name: str, arr: np.ndarray) -> bool:
    # weight matrices only: no biases, no CRF scores
    return arr.ndim >= 2 and not name.startswith("crf.")


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   rates: dict[str, float], state: OptimizerState,
                   weight_decay: float = 1e-2, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8,
                   sgd: bool = False) -> dict[str, np.ndarray]:
    """One in-place update: bias-corrected adaptive moments + decoupled decay."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        lr = rates[name]
        if lr == 0.0:
            continue
        if sgd:
            update = g
        else:
            m = state.m.setdefault(name, np.zeros_like(p))
            v = state.v.setdefault(name, np.zeros_like(p))
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            update = m_hat / (np.sqrt(v_hat) + eps)
        p -= lr * update
        if weight_decay > 0.0 and _decayable(name, p):
            p -= lr * weight_decay * p
    return params


def _assemble_batch(data, idx, num_labels):
    members = [data[i] for i in idx]
    lengths = np.array([emb.shape[0] for _, emb in members], dtype=np.intp)
    T = int(lengths.max())
    dim = members[0][1].shape[1]
    X = np.zeros((len(members), T, dim))
    Y = np.zeros((len(members), T), dtype=np.intp)
    for b, (rec, emb) in enumerate(members):
        X[b, :lengths[b]] = emb
        Y[b, :lengths[b]] = list(rec.gold_labels)
    return X, Y, lengths


def _dev_accuracy(model, dev_data, batch_size):
    if not dev_data:
        return None
    hits = total = 0
    for start in range(0, len(dev_data), batch_size):
        chunk = dev_data[start:start + batch_size]
        X, Y, lengths = _assemble_batch(chunk, range(len(chunk)), model.bigru.num_labels)
        hidden, _ = bigru_forward_batch(X, lengths, model.bigru)
        scores = head_forward_batch(hidden, model.bigru)
        for b, path in enumerate(viterbi_batch(scores, lengths, model.crf)):
            gold = Y[b, :lengths[b]]
            hits += int(np.sum(np.asarray(path) == gold))
            total += int(lengths[b])
    return hits / total


def train(train_data, dev_data, config: TrainConfig, log_stream=None,
          log_path=None) -> tuple[SegmenterModel, list[EpochLog]]:
    """Train a SegmenterModel on (record, embedding-matrix) pairs.

    Args:
        train_data: list of (MixedTextRecord, (n, dim) float array).
        dev_data: same shape, used for per-epoch token accuracy (may be []).
        config: everything else; config.hyper carries the table defaults.
        log_stream: stream for per-epoch lines (default stdout).
        log_path: optional file that receives the same lines.

    Returns:
        (model, epoch logs).  Identical (config, data) reproduce identical
        parameters bit for bit.
    """
    if not train_data:
        raise ValueError("empty training set")
    for rec, emb in train_data:
        problems = validate_record(rec, max_len=config.hyper.max_len)
        if problems:
            raise ValueError(f"record {rec.id}: " + "; ".join(problems))
        if emb.shape[0] != len(rec.tokens):
            raise ValueError(f"record {rec.id}: {emb.shape[0]} embedding rows for "
                             f"{len(rec.tokens)} tokens")
    hyper = config.hyper
    input_dim = train_data[0][1].shape[1]
    model = SegmenterModel.init(input_dim, hyper.hidden_dim, hyper.num_layers,
                                hyper.num_labels, config.seed, config.init_scheme)

    rates_list = hyper.llrd_rates if config.use_llrd else (hyper.llrd_rates[-1],)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # frozen-embeddings notice, expected here
        groups = build_llrd_groups(model, rates_list)
    rate_of = {}
    for group in groups:
        for name in group.param_names:
            rate_of[name] = group.learning_rate

    params = dict(model.named_arrays())
    state = OptimizerState()
    rng = np.random.default_rng(config.seed)
    log_stream = log_stream if log_stream is not None else sys.stdout
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None

    logs: list[EpochLog] = []
    try:
        for epoch in range(1, hyper.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_data))
            epoch_loss = 0.0
            for start in range(0, len(order), hyper.batch_size):
                idx = order[start:start + hyper.batch_size]
                X, Y, lengths = _assemble_batch(train_data, idx, hyper.num_labels)
                hidden, cache = bigru_forward_batch(
                    X, lengths, model.bigru, dropout=config.dropout,
                    training=True, rng=rng)
                scores = head_forward_batch(hidden, model.bigru)
                total_nll, _, crf_grads = nll_grad_batch(scores, lengths, Y, model.crf)
                if not np.isfinite(total_nll):
                    raise RuntimeError(
                        f"non-finite loss in epoch {epoch}, batch {start // hyper.batch_size}")
                bigru_grads, _ = emissions_backward_batch(crf_grads.emissions, cache,
                                                          model.bigru)
                grads = dict(bigru_grads.named_arrays())
                grads["crf.transitions"] = crf_grads.transitions
                grads["crf.start"] = crf_grads.start
                grads["crf.end"] = crf_grads.end
                grads, _ = clip_gradients(grads, hyper.gradient_clip)
                optimizer_step(params, grads, rate_of, state,
                               weight_decay=hyper.weight_decay,
                               beta1=config.beta1, beta2=config.beta2,
                               eps=config.eps, sgd=config.optimizer == "sgd")
                epoch_loss += total_nll

            dev_acc = _dev_accuracy(model, dev_data, hyper.batch_size)
            seconds = time.perf_counter() - t0
            entry = EpochLog(epoch, epoch_loss, dev_acc, seconds)
            logs.append(entry)
            acc_txt = "n/a" if dev_acc is None else f"{dev_acc:.4f}"
            line = (f"epoch={epoch} loss={epoch_loss:.4f} dev_acc={acc_txt} "
                    f"seconds={seconds:.2f}")
            print(line, file=log_stream)
            if log_file:
                print(line, file=log_file)
    finally:
        if log_file:
            log_file.close()
    return model, logs


# ---------------------------------------------------------------------------
# Inference helpers
# ---------------------------------------------------------------------------

def emission_scores_for(model: SegmenterModel, embeddings: np.ndarray) -> EmissionScores:
    """Inference-mode emission scores for one sequence."""
    hidden, _ = bigru_forward(np.asarray(embeddings, dtype=np.float64), model.bigru)
    return EmissionScores(hidden @ model.bigru.head_w + model.bigru.head_b)


def predict_one(model: SegmenterModel, embeddings: np.ndarray, k: int = 3) -> Prediction:
    """Viterbi labels plus marginal-ranked top-k boundary candidates."""
    em = emission_scores_for(model, embeddings)
    path, _ = viterbi_decode(em, model.crf)
    _, pairwise = posterior_marginals(em, model.crf)
    if pairwise.shape[0]:
        bounds, confs = top_k_boundaries(pairwise, k)
    else:
        bounds, confs = top_k_boundaries(np.asarray(path), k)
    return Prediction(path, bounds.indices, confs)


def features_for(model: SegmenterModel, embeddings: np.ndarray) -> np.ndarray:
    """Head-projected features, the shared observation space for baselines.

    For the binary task this is the decision margin (AI score minus human
    score), one value per token: the head's two outputs are anti-correlated
    by construction, and modeling them as independent dimensions would
    double-count the same evidence.  With more than two labels the full
    score rows are returned.
    """
    scores = emission_scores_for(model, embeddings).scores
    if scores.shape[1] == 2:
        return (scores[:, 1] - scores[:, 0])[:, None]
    return scores


# ---------------------------------------------------------------------------
# HMM / MEMM decoder pipelines over the trained emission network
# ---------------------------------------------------------------------------

@dataclass
class BaselinePipeline:
    """Trained BiGRU backbone with an HMM or MEMM in place of the CRF.

    The decoder consumes the same head-projected features the CRF scores,
    so comparisons across decoder families are like for like.
    """

    backbone: SegmenterModel
    decoder_kind: str       # "hmm" | "memm"
    decoder: object         # HmmParams | MemmParams


def fit_baseline_pipeline(model: SegmenterModel, train_data, kind: str,
                          smoothing: float = 1.0, iterations: int = 300,
                          learning_rate: float = 0.5) -> BaselinePipeline:
    """Fit an HMM or MEMM on the backbone's features over the training set."""
    from mixseg.baselines import hmm_fit, memm_fit

    sequences = [(features_for(model, emb), list(rec.gold_labels))
                 for rec, emb in train_data]
    L = model.bigru.num_labels
    if kind == "hmm":
        decoder = hmm_fit(sequences, smoothing=smoothing, num_labels=L)
    elif kind == "memm":
        decoder = memm_fit(sequences, iterations=iterations,
                           learning_rate=learning_rate, num_labels=L)
    else:
        raise ValueError(f"unknown baseline decoder {kind!r}")
    return BaselinePipeline(model, kind, decoder)


def predict_one_pipeline(pipeline: BaselinePipeline, embeddings: np.ndarray,
                         k: int = 3) -> Prediction:
    """Decode one sequence with the pipeline's HMM/MEMM decoder."""
    from mixseg.baselines import hmm_decode, memm_decode

    feats = features_for(pipeline.backbone, embeddings)
    if pipeline.decoder_kind == "hmm":
        path = hmm_decode(pipeline.decoder, feats)
    else:
        path = memm_decode(pipeline.decoder, feats)
    bounds, confs = top_k_boundaries(np.asarray(path), k)
    return Prediction(path, bounds.indices, confs)
