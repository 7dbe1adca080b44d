"""Cross-entropy loss, exact backpropagation through the whole model, Adam
updates, the minibatch training loop, finite-difference gradient checking,
and JSON checkpoint serialization."""

from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluation
from .corpus import Splits, Window
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    forward,
    init_params,
    param_shapes,
    params_to_vector,
)
from .numerics import NumericalError, Rng, finite_diff_grad

__all__ = [
    "AdamState",
    "Checkpoint",
    "GradCheckResult",
    "TrainConfig",
    "adam_step",
    "backward",
    "batch_gradients",
    "cross_entropy",
    "gradient_check",
    "load_checkpoint",
    "save_checkpoint",
    "train_loop",
    "write_metrics_csv",
]

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1

# substream ids drawn off the master seed
INIT_STREAM = 1
DROPOUT_STREAM = 2
SHUFFLE_STREAM = 3

_PROB_CLAMP = 1e-12


@dataclass
class TrainConfig:
    batch_size: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True
    threads: int = 1

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError(f"betas must be in (0, 1), got {self.beta1}, {self.beta2}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log of the probability assigned to the true class, clamped at 1e-12."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return -float(np.log(max(float(probs[label]), _PROB_CLAMP)))


def _zero_grads(config: ModelConfig) -> ModelParams:
    return ModelParams(**{
        name: np.zeros(shape) for name, shape in param_shapes(config)
    })


def _softmax_backward(weights: np.ndarray, grad_weights: np.ndarray) -> np.ndarray:
    # d loss / d scores given d loss / d softmax(scores)
    dot = weights @ grad_weights
    return weights * (grad_weights - dot)


def backward(trace: ForwardTrace, label: int, params: ModelParams,
             config: ModelConfig) -> ModelParams:
    """Exact gradient of cross_entropy(forward(...)) for every parameter.

    The trace must come from a forward pass with these params; the dropout
    mask recorded there is treated as a constant. Returns a ModelParams
    sized container of gradients.
    """
    grads = _zero_grads(config)
    d, d_h = config.d, config.d_h

    # classifier head
    g_logits = trace.probs.copy()
    if trace.probs[label] > _PROB_CLAMP:
        g_logits[label] -= 1.0
    else:
        g_logits[:] = 0.0  # loss clamped, locally constant
    mask = trace.dropout_mask
    a_used = trace.attended if mask is None else trace.attended * mask
    grads.W_cls += np.outer(g_logits, a_used)
    grads.b_cls += g_logits
    g_att = params.W_cls.T @ g_logits
    if mask is not None:
        g_att = g_att * mask

    # day attention
    hiddens = trace.hiddens
    sim = params.W_sim * params.w_out
    if config.literal_output_attention:
        g_scores = np.array([g_att @ h for h in hiddens]) / 7.0
        g_hidden = [trace.day_scores[t] / 7.0 * g_att + g_scores[t] * sim
                    for t in range(7)]
    else:
        g_weights = np.array([g_att @ h for h in hiddens])
        g_scores = _softmax_backward(trace.day_weights, g_weights)
        g_hidden = [trace.day_weights[t] * g_att + g_scores[t] * sim
                    for t in range(7)]
    g_sim = sum(g_scores[t] * hiddens[t] for t in range(7))
    grads.W_sim += g_sim * params.w_out
    grads.w_out += g_sim * params.W_sim

    # GRU, backwards through the seven days
    g_carry = np.zeros(d_h)
    for t in range(6, -1, -1):
        g_h = g_hidden[t] + g_carry
        h_prev = hiddens[t - 1] if t > 0 else np.zeros(d_h)
        update = trace.update_gates[t]
        reset = trace.reset_gates[t]
        cand = trace.candidates[t]
        x = trace.gru_inputs[t]

        g_update = g_h * (cand - h_prev)
        g_cand = g_h * update
        g_prev = g_h * (1.0 - update)

        g_zh = g_cand * (1.0 - cand * cand)
        rx = np.concatenate([reset * h_prev, x])
        grads.W_h += np.outer(g_zh, rx)
        g_rx = params.W_h.T @ g_zh
        g_reset = g_rx[:d_h] * h_prev
        g_prev = g_prev + g_rx[:d_h] * reset
        g_x = g_rx[d_h:].copy()

        hx = np.concatenate([h_prev, x])
        g_zu = g_update * update * (1.0 - update)
        grads.W_u += np.outer(g_zu, hx)
        g_hx = params.W_u.T @ g_zu
        g_prev = g_prev + g_hx[:d_h]
        g_x += g_hx[d_h:]

        g_zr = g_reset * reset * (1.0 - reset)
        grads.W_r += np.outer(g_zr, hx)
        g_hx = params.W_r.T @ g_zr
        g_prev = g_prev + g_hx[:d_h]
        g_x += g_hx[d_h:]

        # split the GRU input back into news vector and day embedding
        g_news = g_x[:d]
        grads.D[t] += g_x[d:]

        T = trace.day_inputs[t]
        n = T.shape[0]
        if n > 0:
            weights = trace.news_weights[t]
            g_w = T @ g_news
            if config.literal_input_mean:
                g_w = g_w / n
            g_s = _softmax_backward(weights, g_w)
            grads.w_att += T.T @ g_s
            # b_att shifts all scores equally; softmax cancels it, gradient is 0

        g_carry = g_prev

    return grads


def window_gradients(window_days: Sequence[np.ndarray], label: int,
                     params: ModelParams, config: ModelConfig,
                     dropout_mask: np.ndarray | None = None,
                     training: bool = True) -> tuple[float, ModelParams]:
    """Loss and parameter gradients for a single window."""
    probs, trace = forward(window_days, params, config, training=training,
                           dropout_mask=dropout_mask)
    loss = cross_entropy(probs, label)
    return loss, backward(trace, label, params, config)


def _accumulate(total: ModelParams, part: ModelParams, config: ModelConfig) -> None:
    for name, _ in param_shapes(config):
        getattr(total, name).__iadd__(getattr(part, name))


def _scale(grads: ModelParams, factor: float, config: ModelConfig) -> None:
    for name, _ in param_shapes(config):
        getattr(grads, name).__imul__(factor)


def batch_gradients(windows: Sequence[Window], params: ModelParams,
                    config: ModelConfig, masks: Sequence[np.ndarray | None],
                    threads: int = 1) -> tuple[float, list[int], ModelParams]:
    """Mean loss, per-window predictions, and mean gradients over a batch.

    Per-window work may run on a thread pool; the reduction always happens
    in window order, so the result is identical for any thread count.
    """
    def one(i: int):
        window = windows[i]
        mats = [b.embeddings for b in window.days]
        probs, trace = forward(mats, params, config, training=True,
                               dropout_mask=masks[i])
        loss = cross_entropy(probs, window.label)
        return loss, int(np.argmax(probs)), backward(trace, window.label, params, config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(windows))))
    else:
        results = [one(i) for i in range(len(windows))]

    total = _zero_grads(config)
    losses = []
    preds = []
    for loss, pred, grads in results:
        losses.append(loss)
        preds.append(pred)
        _accumulate(total, grads, config)
    _scale(total, 1.0 / len(windows), config)
    return float(np.mean(losses)), preds, total


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, config: ModelConfig) -> "AdamState":
        return cls(
            m={name: np.zeros(shape) for name, shape in param_shapes(config)},
            v={name: np.zeros(shape) for name, shape in param_shapes(config)},
        )


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              config: ModelConfig, tcfg: TrainConfig) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, in place. Non-finite gradients abort."""
    state.t += 1
    b1, b2 = tcfg.beta1, tcfg.beta2
    for name, _ in param_shapes(config):
        g = getattr(grads, name)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in tensor {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** state.t)
        v_hat = v / (1.0 - b2 ** state.t)
        getattr(params, name).__isub__(tcfg.lr * m_hat / (np.sqrt(v_hat) + tcfg.eps_adam))
    return params, state


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    metadata: dict = field(default_factory=dict)
    schema_version: int = CHECKPOINT_SCHEMA


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> None:
    """JSON checkpoint; float values round-trip exactly through repr."""
    doc = {
        "schema_version": checkpoint.schema_version,
        "config": {
            "d": checkpoint.config.d,
            "d_day": checkpoint.config.d_day,
            "d_h": checkpoint.config.d_h,
            "window": checkpoint.config.window,
            "dropout_p": checkpoint.config.dropout_p,
            "literal_input_mean": checkpoint.config.literal_input_mean,
            "literal_output_attention": checkpoint.config.literal_output_attention,
        },
        "tensors": {
            name: {
                "shape": list(shape),
                "data": [float(x) for x in
                         np.asarray(getattr(checkpoint.params, name)).ravel()],
            }
            for name, shape in param_shapes(checkpoint.config)
        },
        "metadata": checkpoint.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path,
                    expect: ModelConfig | None = None) -> Checkpoint:
    """Load and validate a checkpoint; shapes are checked tensor by tensor."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a valid checkpoint: {exc}") from None
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(
            f"{path}: schema_version {doc.get('schema_version')!r}, "
            f"expected {CHECKPOINT_SCHEMA}"
        )
    config = ModelConfig(**doc["config"])
    reference = expect if expect is not None else config
    tensors = {}
    for name, shape in param_shapes(reference):
        entry = doc["tensors"].get(name)
        if entry is None:
            raise ValueError(f"{path}: tensor {name} missing")
        if tuple(entry["shape"]) != shape:
            raise ValueError(
                f"{path}: tensor {name} has shape {tuple(entry['shape'])}, "
                f"expected {shape}"
            )
        tensors[name] = np.array(entry["data"], dtype=np.float64).reshape(shape)
    return Checkpoint(config=config, params=ModelParams(**tensors),
                      metadata=doc.get("metadata", {}))


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,train_acc,val_acc,val_mcc\n")
        for row in rows:
            fh.write(
                f"{row['epoch']},{row['train_loss']!r},{row['train_acc']!r},"
                f"{row['val_acc']!r},{row['val_mcc']!r}\n"
            )


def train_loop(splits: Splits, params_init: ModelParams, config: ModelConfig,
               tcfg: TrainConfig) -> tuple[Checkpoint, list[dict]]:
    """Seeded minibatch Adam training with best-validation checkpointing.

    Only the train split drives parameter updates. The train order is
    reshuffled every epoch from a dedicated stream; validation is scored in
    evaluation mode each epoch and the parameters with the best validation
    accuracy (earliest epoch on ties) are kept.
    """
    tcfg.validate()
    config.validate()
    if not splits.train:
        raise ValueError("train split is empty")
    master = Rng(tcfg.seed)
    shuffle_rng = master.derive(SHUFFLE_STREAM)
    dropout_rng = master.derive(DROPOUT_STREAM)

    params = copy.deepcopy(params_init)
    state = AdamState.zeros(config)
    best_params = copy.deepcopy(params)
    best_val = -1.0
    best_epoch = 0
    metrics: list[dict] = []

    order = list(range(len(splits.train)))
    for epoch in range(1, tcfg.epochs + 1):
        if tcfg.shuffle:
            shuffle_rng.shuffle(order)
        epoch_losses = []
        correct = 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = [splits.train[i] for i in order[start:start + tcfg.batch_size]]
            masks = [
                None if config.dropout_p == 0 else
                np.array([0.0 if dropout_rng.random() < config.dropout_p
                          else 1.0 / (1.0 - config.dropout_p)
                          for _ in range(config.d_h)])
                for _ in batch
            ]
            loss, preds, grads = batch_gradients(batch, params, config, masks,
                                                 threads=tcfg.threads)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            correct += sum(int(p == w.label) for p, w in zip(preds, batch))
            epoch_losses.append(loss * len(batch))
            adam_step(params, grads, state, config, tcfg)

        train_loss = float(sum(epoch_losses) / len(order))
        train_acc = correct / len(order)
        if splits.val:
            val = evaluation.evaluate_windows(splits.val, params, config)
            val_acc, val_mcc = val.accuracy, val.mcc
        else:
            val_acc, val_mcc = float("nan"), float("nan")
        metrics.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "train_acc": train_acc,
            "val_acc": val_acc,
            "val_mcc": val_mcc,
        })
        log.info("epoch %d: train_loss=%.4f train_acc=%.3f val_acc=%.3f val_mcc=%.3f",
                 epoch, train_loss, train_acc, val_acc, val_mcc)
        if splits.val and val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_params = copy.deepcopy(params)

    if not splits.val:
        best_params = params
        best_epoch = tcfg.epochs
    checkpoint = Checkpoint(
        config=config,
        params=best_params,
        metadata={
            "epoch": best_epoch,
            "seed": tcfg.seed,
            "best_val_acc": best_val if splits.val else None,
            "epochs_run": tcfg.epochs,
        },
    )
    return checkpoint, metrics


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def _reference_loss(day_mats: Sequence[np.ndarray], vec: np.ndarray,
                    config: ModelConfig, label: int,
                    mask: np.ndarray | None) -> np.longdouble:
    """Straight-line re-evaluation of the loss in extended precision.

    This is the differencing oracle for gradient checks: an independent
    transcription of the forward formulas, run in np.longdouble so the
    central-difference cancellation at eps=1e-5 is not limited by float64
    rounding of the loss itself. It never calls the production forward.
    """
    ld = np.longdouble
    pos = {}
    offset = 0
    for name, shape in param_shapes(config):
        size = int(np.prod(shape)) if shape else 1
        pos[name] = np.asarray(vec[offset:offset + size], dtype=ld).reshape(shape)
        offset += size
    d, d_h = config.d, config.d_h

    def soft(v):
        z = np.exp(v - v.max())
        return z / z.sum()

    h = np.zeros(d_h, dtype=ld)
    hiddens = []
    for t in range(config.window):
        T = np.asarray(day_mats[t], dtype=ld)
        if T.shape[0] == 0:
            pooled = np.zeros(d, dtype=ld)
        else:
            weights = soft(T @ pos["w_att"] + pos["b_att"])
            pooled = weights @ T
            if config.literal_input_mean:
                pooled = pooled / T.shape[0]
        x = np.concatenate([pooled, pos["D"][t]])
        hx = np.concatenate([h, x])
        update = 1.0 / (1.0 + np.exp(-(pos["W_u"] @ hx)))
        reset = 1.0 / (1.0 + np.exp(-(pos["W_r"] @ hx)))
        cand = np.tanh(pos["W_h"] @ np.concatenate([reset * h, x]))
        h = (1.0 - update) * h + update * cand
        hiddens.append(h)

    sim = pos["W_sim"] * pos["w_out"]
    scores = np.array([hh @ sim for hh in hiddens], dtype=ld)
    if config.literal_output_attention:
        attended = sum(s * hh for s, hh in zip(scores, hiddens)) / ld(7)
    else:
        weights = soft(scores)
        attended = sum(w * hh for w, hh in zip(weights, hiddens))
    if mask is not None:
        attended = attended * np.asarray(mask, dtype=ld)
    probs = soft(pos["W_cls"] @ attended + pos["b_cls"])
    return -np.log(np.maximum(probs[label], ld(_PROB_CLAMP)))


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_tensor: str
    worst_coord: int
    details: list[dict]

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= 1e-4


def _coord_tensor(config: ModelConfig, flat_index: int) -> str:
    offset = 0
    for name, shape in param_shapes(config):
        size = int(np.prod(shape)) if shape else 1
        if flat_index < offset + size:
            return name
        offset += size
    return "?"


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| / max(|a|, |b|, 1e-8), elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def _random_instance(rng: Rng, config: ModelConfig, force_empty_day: bool):
    """Random params plus a window of random day matrices.

    Day sizes are drawn from 0..4; one day is forced empty (or not), and one
    day is forced to hold at least two headlines so the headline softmax has
    a nontrivial Jacobian.
    """
    params = init_params(config, rng)
    counts = [rng.integers(5) for _ in range(config.window)]
    empty_idx = None
    if force_empty_day:
        empty_idx = rng.integers(config.window)
        counts[empty_idx] = 0
    else:
        counts = [max(1, c) for c in counts]
    candidates = [i for i in range(config.window) if i != empty_idx]
    multi = candidates[rng.integers(len(candidates))]
    counts[multi] = max(2, counts[multi])
    mats = [rng.uniform(-1.0, 1.0, (c, config.d)) for c in counts]
    return params, mats


def gradient_check(seeds: Sequence[int] = range(5), d: int = 8, d_day: int = 3,
                   d_h: int = 6, eps: float = 1e-5,
                   dropout: bool = False) -> GradCheckResult:
    """Compare backward() against central finite differences.

    Runs every seed over all four combinations of the literal attention
    flags, both labels, and windows with and without an empty day. With
    dropout=True a fixed mask is used so the loss stays deterministic.
    """
    worst = (0.0, "?", -1)
    details = []
    for seed in seeds:
        for literal_in in (False, True):
            for literal_out in (False, True):
                config = ModelConfig(
                    d=d, d_day=d_day, d_h=d_h, dropout_p=0.5 if dropout else 0.0,
                    literal_input_mean=literal_in,
                    literal_output_attention=literal_out,
                )
                rng = Rng(seed).derive(INIT_STREAM)
                for force_empty in (True, False):
                    params, mats = _random_instance(rng, config, force_empty)
                    mask = None
                    if dropout:
                        mask_rng = Rng(seed).derive(DROPOUT_STREAM)
                        mask = np.array(
                            [0.0 if mask_rng.random() < config.dropout_p else
                             1.0 / (1.0 - config.dropout_p)
                             for _ in range(config.d_h)]
                        )
                    for label in (0, 1):
                        probs, trace = forward(mats, params, config,
                                               training=dropout, dropout_mask=mask)
                        analytic = params_to_vector(
                            backward(trace, label, params, config), config
                        )
                        x0 = params_to_vector(params, config)
                        base_ref = float(_reference_loss(mats, x0, config, label, mask))
                        if abs(cross_entropy(probs, label) - base_ref) > 1e-10:
                            raise NumericalError(
                                "production loss and reference loss disagree "
                                f"by more than 1e-10 (seed {seed})"
                            )
                        numeric = finite_diff_grad(
                            lambda vec: _reference_loss(mats, vec, config, label, mask),
                            x0, eps,
                        )
                        errs = relative_error(analytic, numeric)
                        idx = int(np.argmax(errs))
                        max_err = float(errs[idx])
                        details.append({
                            "seed": seed,
                            "literal_input_mean": literal_in,
                            "literal_output_attention": literal_out,
                            "empty_day": force_empty,
                            "label": label,
                            "max_rel_err": max_err,
                            "tensor": _coord_tensor(config, idx),
                        })
                        if max_err > worst[0]:
                            worst = (max_err, _coord_tensor(config, idx), idx)
    return GradCheckResult(
        max_rel_err=worst[0],
        worst_tensor=worst[1],
        worst_coord=worst[2],
        details=details,
    )
