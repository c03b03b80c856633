"""Emission network: frozen embeddings -> stacked BiGRU -> linear head.

Components:
    EmbeddingTable / lookup_embeddings   — hashed-random or file-backed vectors
    xavier_init                          — uniform(+-sqrt(6/(fan_in+fan_out)))
    DropoutPolicy / dropout_rate         — depth-dependent dropout schedule
    BiGruParams                          — gate weights, both directions, all layers
    bigru_forward / head_forward         — forward passes (per sequence)
    emissions_backward                   — analytic BPTT for every parameter
    *_batch                              — right-padded batch variants for training

GRU convention (fixed; two exist in the literature):
    z = sigmoid(x W_z + h U_z + b_z)         update gate
    r = sigmoid(x W_r + h U_r + b_r)         reset gate
    c = tanh(x W_h + (r * h) U_h + b_h)      candidate
    h' = (1 - z) * h + z * c

Dropout is inverted (scaled by 1/(1-p) at train time) and applied between
stacked layers only: the input of layer l (l >= 1) is masked at
dropout_rate(l).  Inference needs no rescaling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    """Frozen token-level embeddings.

    hashed-random mode derives each vector deterministically from
    (token string, seed), so test corpora need no embedding files.
    file-backed mode serves vectors loaded from an embedding file.
    """

    dim: int = 64
    source: str = "hashed-random"
    seed: int = 0
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("embedding dim must be >= 1")
        if self.source not in ("hashed-random", "file-backed"):
            raise ValueError(f"unknown embedding source {self.source!r}")


def _hashed_vector(token: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                             key=int(seed).to_bytes(8, "little", signed=True)).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


def lookup_embeddings(tokens, table: EmbeddingTable) -> np.ndarray:
    """Materialize an (n, dim) matrix for a token sequence.

    Raises KeyError for tokens absent from a file-backed table.
    """
    toks = list(tokens.tokens) if hasattr(tokens, "tokens") else list(tokens)
    if table.source == "hashed-random":
        return np.stack([_hashed_vector(t, table.seed, table.dim) for t in toks])
    rows = []
    for t in toks:
        if t not in table.vectors:
            raise KeyError(f"token {t!r} missing from file-backed embedding table")
        rows.append(np.asarray(table.vectors[t], dtype=np.float64))
    return np.stack(rows)


# ---------------------------------------------------------------------------
# Initialization and dropout
# ---------------------------------------------------------------------------

def xavier_init(fan_in: int, fan_out: int, seed) -> np.ndarray:
    """Uniform Xavier/Glorot matrix of shape (fan_in, fan_out).

    seed may be an int or a numpy Generator (consumed in place, so one
    generator can initialize a whole model deterministically).
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass(frozen=True)
class DropoutPolicy:
    """Depth-dependent dropout: off, or linear in layer index."""

    p_min: float = 0.0
    p_max: float = 0.0
    mode: str = "off"            # "off" | "per-layer-linear"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_min <= self.p_max < 1.0):
            raise ValueError("need 0 <= p_min <= p_max < 1")
        if self.mode not in ("off", "per-layer-linear"):
            raise ValueError(f"unknown dropout mode {self.mode!r}")


def dropout_rate(layer_index: int, policy: DropoutPolicy, num_layers: int) -> float:
    """Rate for one layer: p_min at the bottom rising linearly to p_max."""
    if not 0 <= layer_index < num_layers:
        raise ValueError(f"layer index {layer_index} outside 0..{num_layers - 1}")
    if policy.mode == "off":
        return 0.0
    if num_layers == 1:
        return policy.p_min
    frac = layer_index / (num_layers - 1)
    return policy.p_min + (policy.p_max - policy.p_min) * frac


def inverted_dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Keep mask scaled by 1/(1-rate); expectation of x*mask equals x."""
    if rate <= 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

_GATES = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")


@dataclass
class GruDirection:
    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_h: np.ndarray
    u_h: np.ndarray
    b_h: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng, scheme: str) -> "GruDirection":
        def mat(rows, cols):
            if scheme == "xavier":
                return xavier_init(rows, cols, rng)
            return rng.standard_normal((rows, cols))  # naive unscaled baseline

        return cls(
            w_z=mat(input_dim, hidden_dim), u_z=mat(hidden_dim, hidden_dim),
            b_z=np.zeros(hidden_dim),
            w_r=mat(input_dim, hidden_dim), u_r=mat(hidden_dim, hidden_dim),
            b_r=np.zeros(hidden_dim),
            w_h=mat(input_dim, hidden_dim), u_h=mat(hidden_dim, hidden_dim),
            b_h=np.zeros(hidden_dim),
        )

    @classmethod
    def zeros_like(cls, other: "GruDirection") -> "GruDirection":
        return cls(**{g: np.zeros_like(getattr(other, g)) for g in _GATES})


@dataclass
class GruLayer:
    fwd: GruDirection
    bwd: GruDirection


@dataclass
class BiGruParams:
    """Stacked bidirectional GRU plus the linear classification head.

    Layer 0 consumes embedding vectors; deeper layers consume the 2*hidden
    concatenation of the layer below.
    """

    layers: list[GruLayer]
    head_w: np.ndarray   # (2*hidden, num_labels)
    head_b: np.ndarray   # (num_labels,)
    input_dim: int
    hidden_dim: int

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, num_layers: int, num_labels: int,
             seed: int, scheme: str = "xavier") -> "BiGruParams":
        if scheme not in ("xavier", "normal"):
            raise ValueError(f"unknown init scheme {scheme!r}")
        rng = np.random.default_rng(seed)
        layers = []
        for l in range(num_layers):
            d = input_dim if l == 0 else 2 * hidden_dim
            layers.append(GruLayer(GruDirection.init(d, hidden_dim, rng, scheme),
                                   GruDirection.init(d, hidden_dim, rng, scheme)))
        if scheme == "xavier":
            head_w = xavier_init(2 * hidden_dim, num_labels, rng)
        else:
            head_w = rng.standard_normal((2 * hidden_dim, num_labels))
        return cls(layers=layers, head_w=head_w, head_b=np.zeros(num_labels),
                   input_dim=input_dim, hidden_dim=hidden_dim)

    @classmethod
    def zeros_like(cls, other: "BiGruParams") -> "BiGruParams":
        layers = [GruLayer(GruDirection.zeros_like(lay.fwd), GruDirection.zeros_like(lay.bwd))
                  for lay in other.layers]
        return cls(layers=layers, head_w=np.zeros_like(other.head_w),
                   head_b=np.zeros_like(other.head_b),
                   input_dim=other.input_dim, hidden_dim=other.hidden_dim)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_labels(self) -> int:
        return self.head_w.shape[1]

    def named_arrays(self):
        """Yield (name, array) in a fixed order; arrays are live references."""
        for l, layer in enumerate(self.layers):
            for dname, direction in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                for g in _GATES:
                    yield f"gru.{l}.{dname}.{g}", getattr(direction, g)
        yield "head.w", self.head_w
        yield "head.b", self.head_b


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

@dataclass
class _DirectionCache:
    x: np.ndarray         # (B, T, D) inputs in this direction's time order
    h_prev: np.ndarray    # (B, T, H): h_{t-1}, with h_{-1} = 0
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray


@dataclass
class ForwardCache:
    lengths: np.ndarray
    rev_idx: np.ndarray                 # (B, T) per-sequence reversal gather
    pos_mask: np.ndarray                # (B, T) True on real tokens
    directions: list[tuple[_DirectionCache, _DirectionCache]]
    drop_masks: list[np.ndarray | None]  # mask applied to input of layer l (None for l=0)
    hidden: np.ndarray                  # (B, T, 2H) final layer output
    training: bool


def _run_direction(x: np.ndarray, p: GruDirection) -> tuple[np.ndarray, _DirectionCache]:
    B, T, _ = x.shape
    H = p.u_z.shape[0]
    h = np.zeros((B, H))
    h_prev = np.empty((B, T, H))
    z_all = np.empty((B, T, H))
    r_all = np.empty((B, T, H))
    c_all = np.empty((B, T, H))
    out = np.empty((B, T, H))
    for t in range(T):
        xt = x[:, t]
        h_prev[:, t] = h
        z = expit(xt @ p.w_z + h @ p.u_z + p.b_z)
        r = expit(xt @ p.w_r + h @ p.u_r + p.b_r)
        c = np.tanh(xt @ p.w_h + (r * h) @ p.u_h + p.b_h)
        h = (1.0 - z) * h + z * c
        z_all[:, t], r_all[:, t], c_all[:, t] = z, r, c
        out[:, t] = h
    return out, _DirectionCache(x, h_prev, z_all, r_all, c_all)


def _reversal_index(lengths: np.ndarray, T: int) -> np.ndarray:
    # involution: reverses each sequence within its real length, identity on padding
    B = lengths.shape[0]
    idx = np.tile(np.arange(T), (B, 1))
    rev = lengths[:, None] - 1 - idx
    return np.where(idx < lengths[:, None], rev, idx)


def _gather_time(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return x[np.arange(x.shape[0])[:, None], idx]


def bigru_forward_batch(x: np.ndarray, lengths: np.ndarray, params: BiGruParams,
                        dropout: DropoutPolicy | None = None, training: bool = False,
                        rng: np.random.Generator | None = None
                        ) -> tuple[np.ndarray, ForwardCache]:
    """Stacked BiGRU over a right-padded batch.

    Args:
        x: (B, T, input_dim) embeddings, zero rows on padding.
        lengths: (B,) real lengths, all >= 1.
        dropout: optional policy; masks are drawn from rng (or the policy
            seed when rng is None) and recorded for the backward pass.

    Returns:
        (hidden, cache) with hidden of shape (B, T, 2*hidden_dim); padding
        rows are zeroed.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (B, T, D) input, got {x.shape}")
    if x.shape[2] != params.input_dim:
        raise ValueError(f"input dim {x.shape[2]} != model input dim {params.input_dim}")
    lengths = np.asarray(lengths, dtype=np.intp)
    B, T, _ = x.shape
    dropout = dropout or DropoutPolicy()
    if training and dropout.mode != "off" and rng is None:
        rng = np.random.default_rng(dropout.seed)

    rev_idx = _reversal_index(lengths, T)
    pos_mask = np.arange(T)[None, :] < lengths[:, None]

    directions: list[tuple[_DirectionCache, _DirectionCache]] = []
    drop_masks: list[np.ndarray | None] = []
    inp = x
    for l, layer in enumerate(params.layers):
        if l > 0 and training and dropout.mode != "off":
            rate = dropout_rate(l, dropout, params.num_layers)
            mask = inverted_dropout_mask(inp.shape, rate, rng)
            inp = inp * mask
            drop_masks.append(mask)
        else:
            drop_masks.append(None)
        out_f, cache_f = _run_direction(inp, layer.fwd)
        out_b_rev, cache_b = _run_direction(_gather_time(inp, rev_idx), layer.bwd)
        out_b = _gather_time(out_b_rev, rev_idx)
        inp = np.concatenate([out_f, out_b], axis=2)
        inp = inp * pos_mask[:, :, None]
        directions.append((cache_f, cache_b))

    cache = ForwardCache(lengths=lengths, rev_idx=rev_idx, pos_mask=pos_mask,
                         directions=directions, drop_masks=drop_masks,
                         hidden=inp, training=training)
    return inp, cache


def head_forward_batch(hidden: np.ndarray, params: BiGruParams) -> np.ndarray:
    """(B, T, 2H) -> (B, T, L) emission scores."""
    if hidden.shape[-1] != params.head_w.shape[0]:
        raise ValueError(f"hidden width {hidden.shape[-1]} != head input "
                         f"{params.head_w.shape[0]}")
    return hidden @ params.head_w + params.head_b


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def _backward_direction(d_out: np.ndarray, cache: _DirectionCache, p: GruDirection,
                        grads: GruDirection) -> np.ndarray:
    """BPTT through one direction; returns gradient wrt the direction input."""
    B, T, _ = cache.x.shape
    dx = np.zeros_like(cache.x)
    dh_carry = np.zeros((B, p.u_z.shape[0]))
    for t in range(T - 1, -1, -1):
        dh = d_out[:, t] + dh_carry
        z, r, c = cache.z[:, t], cache.r[:, t], cache.c[:, t]
        h_prev = cache.h_prev[:, t]
        xt = cache.x[:, t]

        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        da_c = dc * (1.0 - c * c)
        grads.w_h += xt.T @ da_c
        grads.u_h += (r * h_prev).T @ da_c
        grads.b_h += da_c.sum(axis=0)

        d_rh = da_c @ p.u_h.T
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_z = dz * z * (1.0 - z)
        grads.w_z += xt.T @ da_z
        grads.u_z += h_prev.T @ da_z
        grads.b_z += da_z.sum(axis=0)

        da_r = dr * r * (1.0 - r)
        grads.w_r += xt.T @ da_r
        grads.u_r += h_prev.T @ da_r
        grads.b_r += da_r.sum(axis=0)

        dx[:, t] = da_z @ p.w_z.T + da_r @ p.w_r.T + da_c @ p.w_h.T
        dh_carry = dh_prev + da_z @ p.u_z.T + da_r @ p.u_r.T
    return dx


def emissions_backward_batch(d_scores: np.ndarray, cache: ForwardCache,
                             params: BiGruParams) -> tuple[BiGruParams, np.ndarray]:
    """Gradients of a scalar loss wrt all parameters and the input embeddings.

    d_scores is the upstream gradient on the emission scores, (B, T, L),
    zero on padding rows.
    """
    if cache is None:
        raise ValueError("missing forward cache")
    d_scores = np.asarray(d_scores, dtype=np.float64) * cache.pos_mask[:, :, None]
    grads = BiGruParams.zeros_like(params)
    H = params.hidden_dim

    d_hidden = d_scores @ params.head_w.T
    flat_hidden = cache.hidden.reshape(-1, 2 * H)
    flat_d = d_scores.reshape(-1, params.num_labels)
    grads.head_w += flat_hidden.T @ flat_d
    grads.head_b += flat_d.sum(axis=0)

    for l in range(params.num_layers - 1, -1, -1):
        layer = params.layers[l]
        cache_f, cache_b = cache.directions[l]
        d_fwd = d_hidden[:, :, :H]
        d_bwd = _gather_time(d_hidden[:, :, H:], cache.rev_idx)
        dx_f = _backward_direction(d_fwd, cache_f, layer.fwd,
                                   grads.layers[l].fwd)
        dx_b_rev = _backward_direction(d_bwd, cache_b, layer.bwd,
                                       grads.layers[l].bwd)
        d_inp = dx_f + _gather_time(dx_b_rev, cache.rev_idx)
        if cache.drop_masks[l] is not None:
            d_inp = d_inp * cache.drop_masks[l]
        d_hidden = d_inp
    return grads, d_hidden


# ---------------------------------------------------------------------------
# Per-sequence wrappers (the module contract; batch size 1 underneath)
# ---------------------------------------------------------------------------

def bigru_forward(embeddings: np.ndarray, params: BiGruParams,
                  dropout: DropoutPolicy | None = None, training: bool = False,
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """(n, dim) embeddings -> (n, 2*hidden_dim) bidirectional features."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (n, dim) embeddings, got {x.shape}")
    hidden, cache = bigru_forward_batch(x[None], np.array([x.shape[0]]), params,
                                        dropout=dropout, training=training, rng=rng)
    return hidden[0], cache


def head_forward(hidden: np.ndarray, params: BiGruParams):
    """(n, 2*hidden_dim) features -> EmissionScores with an all-true mask."""
    from mixseg.crf import EmissionScores
    scores = head_forward_batch(np.asarray(hidden, dtype=np.float64)[None], params)[0]
    return EmissionScores(scores)


def emissions_backward(grad_emissions: np.ndarray, cache: ForwardCache,
                       params: BiGruParams) -> tuple[BiGruParams, np.ndarray]:
    """Per-sequence backward; cache must come from the matching forward call."""
    g = np.asarray(grad_emissions, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"expected (n, L) upstream gradient, got {g.shape}")
    if cache is None:
        raise ValueError("missing forward cache")
    if cache.hidden.shape[0] != 1 or cache.hidden.shape[1] != g.shape[0]:
        raise ValueError("cache does not match this gradient's sequence shape")
    grads, d_x = emissions_backward_batch(g[None], cache, params)
    return grads, d_x[0]
