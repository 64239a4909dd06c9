"""Sequence regression head: 2-layer LSTM, per-window score and attention
networks, temporal softmax pooling, masked squared-error loss, exact
reverse-mode gradients (including gradients with respect to the input
sequence) and an Adam optimizer with a stepped learning-rate schedule.

Everything is plain float64 numpy; parameters live in a flat name -> array
mapping so the optimizer and the checkpoint writer can treat them uniformly.
Gate order in the stacked LSTM weights is input, forget, candidate, output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

ATTENTION_TOL = 1e-12


class NonFiniteActivationError(FloatingPointError):
    """A forward-pass activation left the finite range."""


def softmax(z: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax over a 1-D array."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


@dataclass
class NetworkWeights:
    """All head parameters as a flat name -> float64 array mapping."""

    arrays: dict[str, np.ndarray]
    k: int
    m: int
    width: int

    @classmethod
    def initialize(cls, k: int, m: int, width: int, rng: np.random.Generator):
        """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases are
        zero except the forget-gate bias, which starts at 1."""
        def uniform(rows, cols):
            bound = 1.0 / np.sqrt(cols)
            return rng.uniform(-bound, bound, size=(rows, cols))

        h = width
        arrays = {
            "lstm0.w_x": uniform(4 * h, k),
            "lstm0.w_h": uniform(4 * h, h),
            "lstm0.b": np.zeros(4 * h),
            "lstm1.w_x": uniform(4 * h, h),
            "lstm1.w_h": uniform(4 * h, h),
            "lstm1.b": np.zeros(4 * h),
        }
        for tag, out_dim in (("p_ann", m), ("a_ann", 1)):
            arrays[f"{tag}.w0"] = uniform(h, h)
            arrays[f"{tag}.b0"] = np.zeros(h)
            arrays[f"{tag}.w1"] = uniform(h, h)
            arrays[f"{tag}.b1"] = np.zeros(h)
            arrays[f"{tag}.w2"] = uniform(out_dim, h)
            arrays[f"{tag}.b2"] = np.zeros(out_dim)
        for name in ("lstm0.b", "lstm1.b"):
            arrays[name][h:2 * h] = 1.0
        return cls(arrays=arrays, k=k, m=m, width=width)

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            arrays={n: a.copy() for n, a in self.arrays.items()},
            k=self.k, m=self.m, width=self.width,
        )

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(a) for n, a in self.arrays.items()}


@dataclass
class ForwardTrace:
    """Forward-pass record; attention weights are validated on construction."""

    hidden: np.ndarray  # (T, width), top LSTM layer
    per_time_scores: np.ndarray  # (T, M)
    attention_logits: np.ndarray  # (T,)
    attention: np.ndarray  # (T,)
    prediction: np.ndarray  # (M,)
    cache: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if np.any(self.attention < 0):
            raise ValueError("attention weights must be nonnegative")
        total = float(self.attention.sum())
        if abs(total - 1.0) > ATTENTION_TOL:
            raise ValueError(f"attention weights sum to {total!r}, not 1")


def _lstm_layer_forward(x, w_x, w_h, b, layer):
    t_n = x.shape[0]
    h_dim = w_h.shape[1]
    gates = np.empty((t_n, 4 * h_dim))
    cells = np.empty((t_n, h_dim))
    tanh_cells = np.empty((t_n, h_dim))
    hidden = np.empty((t_n, h_dim))
    x_proj = x @ w_x.T + b  # input contribution for every step at once
    h_prev = np.zeros(h_dim)
    c_prev = np.zeros(h_dim)
    for t in range(t_n):
        z = x_proj[t] + w_h @ h_prev
        i = sigmoid(z[:h_dim])
        f = sigmoid(z[h_dim:2 * h_dim])
        g = np.tanh(z[2 * h_dim:3 * h_dim])
        o = sigmoid(z[3 * h_dim:])
        c_cell = f * c_prev + i * g
        tc = np.tanh(c_cell)
        h = o * tc
        if not np.isfinite(h).all() or not np.isfinite(c_cell).all():
            raise NonFiniteActivationError(
                f"non-finite LSTM activation at layer {layer}, time step {t}"
            )
        gates[t, :h_dim] = i
        gates[t, h_dim:2 * h_dim] = f
        gates[t, 2 * h_dim:3 * h_dim] = g
        gates[t, 3 * h_dim:] = o
        cells[t] = c_cell
        tanh_cells[t] = tc
        hidden[t] = h
        h_prev, c_prev = h, c_cell
    return hidden, {"x": x, "gates": gates, "cells": cells, "tanh_cells": tanh_cells,
                    "hidden": hidden}


def _mlp_forward(h, weights, tag):
    w0, b0 = weights.arrays[f"{tag}.w0"], weights.arrays[f"{tag}.b0"]
    w1, b1 = weights.arrays[f"{tag}.w1"], weights.arrays[f"{tag}.b1"]
    w2, b2 = weights.arrays[f"{tag}.w2"], weights.arrays[f"{tag}.b2"]
    a1 = np.maximum(h @ w0.T + b0, 0.0)
    a2 = np.maximum(a1 @ w1.T + b1, 0.0)
    out = a2 @ w2.T + b2
    if not np.isfinite(out).all():
        t_bad = int(np.flatnonzero(~np.isfinite(out).all(axis=1))[0])
        raise NonFiniteActivationError(f"non-finite {tag} output at time step {t_bad}")
    return out, {"a1": a1, "a2": a2, "h": h}


def forward(loadings: np.ndarray, weights: NetworkWeights) -> ForwardTrace:
    """Run the full head on one subject's (T, K) loading sequence.

    The LSTM stack produces hidden states h_t; the score network maps each
    h_t to per-window score estimates, the attention network to a scalar
    logit. The prediction is the softmax-over-time weighted average of the
    per-window estimates.
    """
    x = np.asarray(loadings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"loadings must be (T, K) with T >= 1, got {x.shape}")
    if x.shape[1] != weights.k:
        raise ValueError(f"loadings have K={x.shape[1]}, network expects {weights.k}")
    if not np.isfinite(x).all():
        raise ValueError("loadings must be finite")

    h0, cache0 = _lstm_layer_forward(
        x, weights.arrays["lstm0.w_x"], weights.arrays["lstm0.w_h"],
        weights.arrays["lstm0.b"], layer=0,
    )
    h1, cache1 = _lstm_layer_forward(
        h0, weights.arrays["lstm1.w_x"], weights.arrays["lstm1.w_h"],
        weights.arrays["lstm1.b"], layer=1,
    )
    scores, p_cache = _mlp_forward(h1, weights, "p_ann")
    logits, a_cache = _mlp_forward(h1, weights, "a_ann")
    logits = logits[:, 0]
    attention = softmax(logits)
    prediction = attention @ scores
    return ForwardTrace(
        hidden=h1,
        per_time_scores=scores,
        attention_logits=logits,
        attention=attention,
        prediction=prediction,
        cache={"lstm0": cache0, "lstm1": cache1, "p_ann": p_cache, "a_ann": a_cache},
    )


def masked_mse(trace, severity) -> float:
    """Squared error summed over observed scores only.

    Unobserved entries contribute nothing to the loss or to any gradient,
    whatever sentinel value they hold.
    """
    prediction = trace.prediction if isinstance(trace, ForwardTrace) else np.asarray(trace, float)
    if prediction.shape[0] != severity.m:
        raise ValueError(
            f"prediction has {prediction.shape[0]} entries, severity has {severity.m}"
        )
    mask = severity.observed
    safe_truth = np.where(mask, severity.scores, 0.0)
    diff = np.where(mask, prediction - safe_truth, 0.0)
    return float(diff @ diff)


def _mlp_backward(dout, weights, cache, tag, grads):
    a1, a2, h = cache["a1"], cache["a2"], cache["h"]
    w1 = weights.arrays[f"{tag}.w1"]
    w2 = weights.arrays[f"{tag}.w2"]
    grads[f"{tag}.w2"] += dout.T @ a2
    grads[f"{tag}.b2"] += dout.sum(axis=0)
    da2 = (dout @ w2) * (a2 > 0)
    grads[f"{tag}.w1"] += da2.T @ a1
    grads[f"{tag}.b1"] += da2.sum(axis=0)
    da1 = (da2 @ w1) * (a1 > 0)
    grads[f"{tag}.w0"] += da1.T @ h
    grads[f"{tag}.b0"] += da1.sum(axis=0)
    return da1 @ weights.arrays[f"{tag}.w0"]


def _lstm_layer_backward(dh_out, cache, w_x, w_h, grads, prefix):
    x, gates = cache["x"], cache["gates"]
    cells, tanh_cells = cache["cells"], cache["tanh_cells"]
    hidden = cache["hidden"]
    t_n = x.shape[0]
    h_dim = hidden.shape[1]
    dz_all = np.empty((t_n, 4 * h_dim))
    dh_next = np.zeros(h_dim)
    dc_next = np.zeros(h_dim)
    for t in range(t_n - 1, -1, -1):
        i = gates[t, :h_dim]
        f = gates[t, h_dim:2 * h_dim]
        g = gates[t, 2 * h_dim:3 * h_dim]
        o = gates[t, 3 * h_dim:]
        c_prev = cells[t - 1] if t > 0 else 0.0
        dh = dh_out[t] + dh_next
        dc = dh * o * (1.0 - tanh_cells[t] ** 2) + dc_next
        dz = dz_all[t]
        dz[:h_dim] = dc * g * i * (1.0 - i)                  # input gate
        dz[h_dim:2 * h_dim] = dc * c_prev * f * (1.0 - f)    # forget gate
        dz[2 * h_dim:3 * h_dim] = dc * i * (1.0 - g ** 2)    # candidate
        dz[3 * h_dim:] = dh * tanh_cells[t] * o * (1.0 - o)  # output gate
        dh_next = w_h.T @ dz
        dc_next = dc * f
    # weight gradients in bulk: z_t = W_x x_t + W_h h_{t-1} + b
    h_prev_all = np.vstack([np.zeros((1, h_dim)), hidden[:-1]])
    grads[f"{prefix}.w_x"] += dz_all.T @ x
    grads[f"{prefix}.w_h"] += dz_all.T @ h_prev_all
    grads[f"{prefix}.b"] += dz_all.sum(axis=0)
    return dz_all @ w_x


def backward(trace: ForwardTrace, loadings, weights: NetworkWeights, severity):
    """Exact gradients of the masked squared error.

    Returns
    -------
    (grads, grad_inputs)
        grads maps every parameter name to its gradient array; grad_inputs is
        the (T, K) gradient with respect to the input loading sequence.
    """
    if trace.hidden.shape[1] != weights.width:
        raise ValueError("trace and weights disagree on the hidden width")
    if trace.per_time_scores.shape[1] != weights.m:
        raise ValueError("trace and weights disagree on the score count")
    grads = weights.zeros_like()
    mask = severity.observed
    safe_truth = np.where(mask, severity.scores, 0.0)
    dpred = np.where(mask, 2.0 * (trace.prediction - safe_truth), 0.0)

    attention = trace.attention
    scores = trace.per_time_scores
    dscores = np.outer(attention, dpred)
    datt = scores @ dpred
    dlogits = attention * (datt - float(attention @ datt))  # softmax jacobian

    dh = _mlp_backward(dscores, weights, trace.cache["p_ann"], "p_ann", grads)
    dh += _mlp_backward(dlogits[:, None], weights, trace.cache["a_ann"], "a_ann", grads)

    dh0 = _lstm_layer_backward(
        dh, trace.cache["lstm1"], weights.arrays["lstm1.w_x"],
        weights.arrays["lstm1.w_h"], grads, "lstm1",
    )
    grad_inputs = _lstm_layer_backward(
        dh0, trace.cache["lstm0"], weights.arrays["lstm0.w_x"],
        weights.arrays["lstm0.w_h"], grads, "lstm0",
    )
    return grads, grad_inputs


@dataclass
class AdamState:
    """Adam moments plus the stepped learning-rate schedule.

    The effective rate is ``lr * decay ** (epoch // decay_every)``, optionally
    ramped linearly over the first ``warmup_epochs`` epochs; the epoch index
    is supplied by the caller so the schedule survives checkpointing.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.95
    decay_every: int = 5
    warmup_epochs: int = 0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def effective_lr(self, epoch: int | None) -> float:
        if epoch is None:
            return self.lr
        rate = self.lr * self.decay ** (epoch // self.decay_every)
        if self.warmup_epochs > 0 and epoch < self.warmup_epochs:
            rate *= (epoch + 1) / self.warmup_epochs
        return rate


def adam_step(params: dict, grads: dict, state: AdamState, epoch: int | None = None):
    """One Adam update, in place, over a name -> array parameter mapping."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name!r}")
    state.step_count += 1
    t = state.step_count
    lr = state.effective_lr(epoch)
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
