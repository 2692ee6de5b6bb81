"""Minimal fully-connected network with exact reverse-mode gradients.

Just enough machinery for primal-dual training: TanH hidden layers, a
choice of output activation (identity / relu / softplus / scaled softmax,
each followed by a constant output scale), batched forward/backward in
float64, and plain SGD/SGA steps with inverse-time learning-rate decay.
Instances are value-like: forward/backward never mutate the network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

HIDDEN_ACTIVATIONS = ("tanh",)
OUTPUT_ACTIVATIONS = ("identity", "relu", "softplus", "scaled_softmax")


@dataclass(frozen=True)
class LrSchedule:
    """Inverse-time decay phi(t) = base / (1 + decay_rate * t)."""

    base: float
    decay_rate: float = 0.0
    decay_kind: str = "inverse_time"

    def __post_init__(self):
        if self.base <= 0 or self.decay_rate < 0:
            raise ValueError("base must be > 0 and decay_rate >= 0")
        if self.decay_kind != "inverse_time":
            raise ValueError("only inverse_time decay is supported")

    def __call__(self, t) -> float:
        return self.base / (1.0 + self.decay_rate * t)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


class Mlp:
    """Fully-connected network; weights[l] has shape (width[l+1], width[l])."""

    def __init__(self, layer_widths, weights, biases,
                 hidden_activation: str = "tanh",
                 output_activation: str = "identity",
                 output_scale: float = 1.0):
        self.layer_widths = tuple(int(w) for w in layer_widths)
        if len(self.layer_widths) < 2 or any(w < 1 for w in self.layer_widths):
            raise ValueError("layer_widths needs >= 2 positive entries")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.output_scale = float(output_scale)
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        n_layers = len(self.layer_widths) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("need one weight matrix and bias per layer")
        for l in range(n_layers):
            d_out, d_in = self.layer_widths[l + 1], self.layer_widths[l]
            if self.weights[l].shape != (d_out, d_in):
                raise ValueError(f"weight {l} must have shape ({d_out}, {d_in})")
            if self.biases[l].shape != (d_out,):
                raise ValueError(f"bias {l} must have shape ({d_out},)")

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, layer_widths, output_activation: str, seed,
             output_scale: float = 1.0, hidden_activation: str = "tanh") -> "Mlp":
        """Glorot-uniform weights (the TanH default), zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        widths = [int(w) for w in layer_widths]
        weights, biases = [], []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (d_in + d_out))
            weights.append(rng.uniform(-limit, limit, size=(d_out, d_in)))
            biases.append(np.zeros(d_out))
        return cls(widths, weights, biases, hidden_activation,
                   output_activation, output_scale)

    def copy(self) -> "Mlp":
        return Mlp(self.layer_widths, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.hidden_activation,
                   self.output_activation, self.output_scale)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # -- forward / backward -------------------------------------------------

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layer_widths[0]:
            raise ValueError(f"input must have {self.layer_widths[0]} features")
        return x, squeeze

    def forward_cached(self, x):
        """Batched forward pass returning (output, cache-for-backward)."""
        x2, squeeze = self._as_batch(x)
        acts = [x2]          # post-activation of each layer, starting with input
        pre_out = None
        h = x2
        n_layers = len(self.weights)
        for l in range(n_layers):
            z = h @ self.weights[l].T + self.biases[l]
            if l < n_layers - 1:
                h = np.tanh(z)
                acts.append(h)
            else:
                pre_out = z
        out = self._output_act(pre_out)
        cache = (acts, pre_out, out, squeeze)
        return (out[0] if squeeze else out), cache

    def forward(self, x):
        out, _ = self.forward_cached(x)
        return out

    def _output_act(self, z):
        kind, scale = self.output_activation, self.output_scale
        if kind == "identity":
            return scale * z
        if kind == "relu":
            return scale * np.maximum(z, 0.0)
        if kind == "softplus":
            return scale * np.logaddexp(0.0, z)
        return scale * _softmax_rows(z)  # scaled_softmax: rows sum to scale

    def _output_act_vjp(self, z, out, cot):
        """Cotangent wrt pre-activation from a cotangent wrt the output."""
        kind, scale = self.output_activation, self.output_scale
        if kind == "identity":
            return scale * cot
        if kind == "relu":
            return scale * cot * (z > 0.0)
        if kind == "softplus":
            return scale * cot * expit(z)
        p = out / scale  # softmax probabilities
        return scale * p * (cot - np.sum(p * cot, axis=1, keepdims=True))

    def backward_cached(self, cache, output_cotangent):
        """Exact gradients of sum_n cot_n . out_n wrt every weight and bias."""
        acts, pre_out, out, squeeze = cache
        cot = np.asarray(output_cotangent, dtype=float)
        if squeeze and cot.ndim == 1:
            cot = cot[None, :]
        if cot.shape != out.shape:
            raise ValueError(f"cotangent shape {cot.shape} != output shape {out.shape}")
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = self._output_act_vjp(pre_out, out, cot)
        for l in range(len(self.weights) - 1, -1, -1):
            grads_w[l] = delta.T @ acts[l]
            grads_b[l] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.weights[l]) * (1.0 - acts[l] ** 2)
        return list(zip(grads_w, grads_b))

    def backward(self, x, output_cotangent):
        """Self-contained backward: recomputes the forward pass internally."""
        _, cache = self.forward_cached(x)
        return self.backward_cached(cache, output_cotangent)

    # -- parameter updates ---------------------------------------------------

    def sgd_step(self, grads, schedule: LrSchedule, t: int,
                 direction: str = "descent") -> "Mlp":
        """In-place w <- w -/+ phi(t) * grad; returns self for chaining."""
        if direction not in ("descent", "ascent"):
            raise ValueError("direction must be 'descent' or 'ascent'")
        lr = schedule(t)
        sign = -1.0 if direction == "descent" else 1.0
        for (gw, gb), w, b in zip(grads, self.weights, self.biases):
            if gw.shape != w.shape or gb.shape != b.shape:
                raise ValueError("gradient shapes do not match parameters")
            w += sign * lr * gw
            b += sign * lr * gb
        return self

    # -- parameter flattening (used by finite-difference checks) -------------

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat_params(self, flat: np.ndarray) -> None:
        i = 0
        for arrs in zip(self.weights, self.biases):
            for a in arrs:
                a[...] = flat[i:i + a.size].reshape(a.shape)
                i += a.size
        if i != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    # -- checkpoint format ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activations": {"hidden": self.hidden_activation,
                            "output": self.output_activation},
            "output_scale": self.output_scale,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(d["layer_widths"], d["weights"], d["biases"],
                   d["activations"]["hidden"], d["activations"]["output"],
                   d.get("output_scale", 1.0))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def zero_grads_like(net: Mlp):
    return [(np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(net.weights, net.biases)]


def grads_l1(grads) -> float:
    """Sum of absolute values over a gradient set (one convergence ingredient)."""
    return float(sum(np.abs(gw).sum() + np.abs(gb).sum() for gw, gb in grads))
