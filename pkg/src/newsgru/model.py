"""Dual-attention GRU forward pass.

Per window: headline attention pools each day's news matrix into one vector,
a trainable day embedding is appended, a GRU consumes the seven day vectors,
day attention pools the seven hidden states into one feature vector, and a
dropout-regularized linear softmax head yields the two class probabilities.
Every intermediate needed for backprop or explanation lands in ForwardTrace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import Rng, concat, glorot_init, hadamard, matvec, sigmoid, softmax, tanh

__all__ = [
    "ForwardTrace",
    "ModelConfig",
    "ModelParams",
    "classify",
    "compose_input",
    "draw_dropout_mask",
    "forward",
    "forward_window",
    "gru_cell",
    "init_params",
    "input_attention",
    "output_attention",
    "param_shapes",
    "params_to_vector",
    "vector_to_params",
]

PROB_CLAMP = 1e-12


@dataclass
class ModelConfig:
    d: int = 300          # sentence embedding dimension
    d_day: int = 5        # day embedding dimension
    d_h: int = 64         # GRU hidden dimension
    window: int = 7       # fixed number of days per window
    dropout_p: float = 0.5
    literal_input_mean: bool = False      # keep the 1/n factor on the day vector
    literal_output_attention: bool = False  # unnormalized day scores, 1/7 average

    def validate(self) -> None:
        if min(self.d, self.d_day, self.d_h) < 1:
            raise ValueError(f"dimensions must be >= 1: d={self.d}, "
                             f"d_day={self.d_day}, d_h={self.d_h}")
        if self.window != 7:
            raise ValueError(f"window is fixed at 7, got {self.window}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


@dataclass
class ModelParams:
    """Every trainable tensor. b_att is a 0-d array so all fields update alike.

    The headline-score bias b_att is kept for interface and checkpoint
    stability, but a bias shared by all headlines of a day shifts every
    score equally and softmax cancels the shift, so it can never influence
    the output and its exact gradient is zero.
    """

    w_att: np.ndarray   # (d,)    headline scorer
    b_att: np.ndarray   # ()      headline scorer bias (inert, see above)
    D: np.ndarray       # (7, d_day) day embeddings
    W_u: np.ndarray     # (d_h, d_h + d + d_day) update gate
    W_r: np.ndarray     # (d_h, d_h + d + d_day) reset gate
    W_h: np.ndarray     # (d_h, d_h + d + d_day) candidate state
    W_sim: np.ndarray   # (d_h,)  diagonal of the day-similarity matrix
    w_out: np.ndarray   # (d_h,)  output embedding pattern
    W_cls: np.ndarray   # (2, d_h) class weights
    b_cls: np.ndarray   # (2,)    class bias


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) order used for flattening and checkpoints."""
    d, dd, dh, w = config.d, config.d_day, config.d_h, config.window
    gate = (dh, dh + d + dd)
    return [
        ("w_att", (d,)),
        ("b_att", ()),
        ("D", (w, dd)),
        ("W_u", gate),
        ("W_r", gate),
        ("W_h", gate),
        ("W_sim", (dh,)),
        ("w_out", (dh,)),
        ("W_cls", (2, dh)),
        ("b_cls", (2,)),
    ]


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    config.validate()
    d, dd, dh = config.d, config.d_day, config.d_h
    cols = dh + d + dd
    return ModelParams(
        w_att=glorot_init(d, 1, rng).ravel(),
        b_att=np.zeros(()),
        D=glorot_init(config.window, dd, rng),
        W_u=glorot_init(dh, cols, rng),
        W_r=glorot_init(dh, cols, rng),
        W_h=glorot_init(dh, cols, rng),
        W_sim=glorot_init(dh, 1, rng).ravel(),
        w_out=glorot_init(dh, 1, rng).ravel(),
        W_cls=glorot_init(2, dh, rng),
        b_cls=np.zeros(2),
    )


def params_to_vector(params: ModelParams, config: ModelConfig) -> np.ndarray:
    return np.concatenate(
        [np.asarray(getattr(params, name), dtype=np.float64).ravel()
         for name, _ in param_shapes(config)]
    )


def vector_to_params(vec: np.ndarray, config: ModelConfig) -> ModelParams:
    shapes = param_shapes(config)
    expected = sum(int(np.prod(shape)) if shape else 1 for _, shape in shapes)
    if vec.size != expected:
        raise ValueError(f"parameter vector has {vec.size} entries, expected {expected}")
    fields = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        fields[name] = np.array(vec[offset:offset + size], dtype=np.float64).reshape(shape)
        offset += size
    return ModelParams(**fields)


@dataclass
class ForwardTrace:
    """Cached activations and attention weights of one forward pass."""

    day_inputs: list[np.ndarray]     # per day, (n_t, d) headline embeddings
    news_weights: list[np.ndarray]   # per day, (n_t,) softmax headline weights
    news_vecs: list[np.ndarray]      # per day, (d,) attended news vector
    gru_inputs: list[np.ndarray]     # per day, (d + d_day,)
    update_gates: list[np.ndarray]   # per day, (d_h,)
    reset_gates: list[np.ndarray]    # per day, (d_h,)
    candidates: list[np.ndarray]     # per day, (d_h,)
    hiddens: list[np.ndarray]        # per day, (d_h,)
    day_scores: np.ndarray           # (7,) raw similarity scores
    day_weights: np.ndarray          # (7,) normalized weights (raw in literal mode)
    attended: np.ndarray             # (d_h,) pooled feature vector
    dropout_mask: np.ndarray | None  # (d_h,) in training with p > 0, else None
    logits: np.ndarray               # (2,)
    probs: np.ndarray                # (2,)


def input_attention(day_embeddings: np.ndarray, params: ModelParams,
                    literal_mean: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Pool one day's (n, d) headline matrix into a single vector.

    Headline scores are row . w_att; softmax over the day's headlines gives
    the weights. The shared bias b_att is not added because softmax cancels
    a common shift exactly. Default output is the convex combination of the
    rows; literal_mean divides by n as well. An empty day yields the zero
    vector and no weights.
    """
    d = params.w_att.shape[0]
    T = np.asarray(day_embeddings, dtype=np.float64)
    if T.ndim != 2 or T.shape[1] != d:
        raise ValueError(f"day embeddings must be (n, {d}), got {T.shape}")
    n = T.shape[0]
    if n == 0:
        return np.zeros(d), np.zeros(0)
    weights = softmax(T @ params.w_att)
    pooled = weights @ T
    if literal_mean:
        pooled = pooled / n
    return pooled, weights


def compose_input(news_vec: np.ndarray, day_index: int, D: np.ndarray) -> np.ndarray:
    """Append the day embedding for window position day_index (0-based)."""
    if not 0 <= day_index < D.shape[0]:
        raise ValueError(f"day_index {day_index} outside 0..{D.shape[0] - 1}")
    return concat(news_vec, D[day_index])


def gru_cell(h_prev: np.ndarray, x: np.ndarray, params: ModelParams
             ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One GRU step; returns (h, update_gate, reset_gate, candidate).

    Gates have no bias terms. The new state is the per-coordinate convex
    blend (1 - U) * h_prev + U * candidate.
    """
    d_h = params.W_u.shape[0]
    if h_prev.shape != (d_h,):
        raise ValueError(f"h_prev must be ({d_h},), got {h_prev.shape}")
    if params.W_u.shape[1] != d_h + x.shape[0]:
        raise ValueError(
            f"gate weights expect input of {params.W_u.shape[1] - d_h}, "
            f"got {x.shape[0]}"
        )
    hx = concat(h_prev, x)
    update = sigmoid(matvec(params.W_u, hx))
    reset = sigmoid(matvec(params.W_r, hx))
    rx = concat(hadamard(reset, h_prev), x)
    candidate = tanh(matvec(params.W_h, rx))
    h = (1.0 - update) * h_prev + update * candidate
    return h, update, reset, candidate


def output_attention(hiddens: Sequence[np.ndarray], params: ModelParams,
                     literal: bool = False
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pool the seven hidden states; returns (attended, raw_scores, weights).

    Each day's raw score is h_t . (W_sim * w_out), a diagonal similarity
    against the output pattern. Default mode softmaxes the scores and takes
    the convex combination; literal mode keeps the raw scores as weights and
    averages score-scaled states over the seven days.
    """
    if len(hiddens) != 7:
        raise ValueError(f"output attention needs exactly 7 states, got {len(hiddens)}")
    sim = params.W_sim * params.w_out
    scores = np.array([h @ sim for h in hiddens])
    if literal:
        attended = sum(s * h for s, h in zip(scores, hiddens)) / 7.0
        return attended, scores, scores.copy()
    weights = softmax(scores)
    attended = sum(w * h for w, h in zip(weights, hiddens))
    return attended, scores, weights


def draw_dropout_mask(d_h: int, p: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/(1-p), keep probability 1-p."""
    scale = 1.0 / (1.0 - p)
    return np.array([0.0 if rng.random() < p else scale for _ in range(d_h)])


def _class_logits(attended: np.ndarray, params: ModelParams,
                  dropout_mask: np.ndarray | None) -> np.ndarray:
    a = attended if dropout_mask is None else attended * dropout_mask
    return matvec(params.W_cls, a) + params.b_cls


def classify(attended: np.ndarray, params: ModelParams,
             dropout_mask: np.ndarray | None = None) -> np.ndarray:
    """Class probabilities; the mask (training only) is applied to the feature."""
    if dropout_mask is not None and dropout_mask.shape != attended.shape:
        raise ValueError(
            f"dropout mask shape {dropout_mask.shape} != feature {attended.shape}"
        )
    return softmax(_class_logits(attended, params, dropout_mask))


def forward(day_embeddings: Sequence[np.ndarray], params: ModelParams,
            config: ModelConfig, training: bool = False,
            rng: Rng | None = None,
            dropout_mask: np.ndarray | None = None
            ) -> tuple[np.ndarray, ForwardTrace]:
    """Full forward pass over one window's seven (n_t, d) day matrices.

    In training mode with dropout_p > 0 a mask is drawn from rng unless one
    is supplied explicitly (gradient checking fixes the mask). Evaluation
    mode never applies a mask and is a pure function of its inputs.
    """
    if len(day_embeddings) != config.window:
        raise ValueError(
            f"window must hold {config.window} days, got {len(day_embeddings)}"
        )
    if training and config.dropout_p > 0 and dropout_mask is None:
        if rng is None:
            raise ValueError("training-mode forward with dropout needs an rng")
        dropout_mask = draw_dropout_mask(config.d_h, config.dropout_p, rng)
    if not training:
        dropout_mask = None

    day_inputs = []
    news_weights = []
    news_vecs = []
    gru_inputs = []
    update_gates = []
    reset_gates = []
    candidates = []
    hiddens = []
    h = np.zeros(config.d_h)
    for t in range(config.window):
        T = np.asarray(day_embeddings[t], dtype=np.float64)
        pooled, weights = input_attention(T, params, config.literal_input_mean)
        x = compose_input(pooled, t, params.D)
        h, update, reset, candidate = gru_cell(h, x, params)
        day_inputs.append(T)
        news_weights.append(weights)
        news_vecs.append(pooled)
        gru_inputs.append(x)
        update_gates.append(update)
        reset_gates.append(reset)
        candidates.append(candidate)
        hiddens.append(h)

    attended, day_scores, day_weights = output_attention(
        hiddens, params, config.literal_output_attention
    )
    logits = _class_logits(attended, params, dropout_mask)
    probs = softmax(logits)

    trace = ForwardTrace(
        day_inputs=day_inputs,
        news_weights=news_weights,
        news_vecs=news_vecs,
        gru_inputs=gru_inputs,
        update_gates=update_gates,
        reset_gates=reset_gates,
        candidates=candidates,
        hiddens=hiddens,
        day_scores=day_scores,
        day_weights=day_weights,
        attended=attended,
        dropout_mask=dropout_mask,
        logits=logits,
        probs=probs,
    )
    return probs, trace


def forward_window(window, params: ModelParams, config: ModelConfig,
                   training: bool = False, rng: Rng | None = None,
                   dropout_mask: np.ndarray | None = None
                   ) -> tuple[np.ndarray, ForwardTrace]:
    """forward() over a corpus Window whose buckets have been embedded."""
    mats = []
    for bucket in window.days:
        if bucket.embeddings is None:
            raise ValueError(
                f"day {bucket.trading_date} has no embeddings; run embed_buckets first"
            )
        mats.append(bucket.embeddings)
    return forward(mats, params, config, training=training, rng=rng,
                   dropout_mask=dropout_mask)
