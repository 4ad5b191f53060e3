"""Minimal dense neural-network kernel with hand-derived gradients.

Just enough machinery for the graph classifier: dense layers with
relu/softmax/identity activations, class-weighted cross entropy, ADAM, and
inverted-scaling dropout.  Every gradient path is analytic and checkable
against central finite differences via :func:`gradient_check`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, NumericWarning, ParameterError
from .validation import as_seed_sequence, check_probability

ACTIVATIONS = ("relu", "softmax", "identity")

_PROB_FLOOR = 1e-12  # probabilities are clamped here before taking logs


@dataclass
class DenseLayer:
    """Fully connected layer: activation(W x + b), W is (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ContractError(
                f"inconsistent layer shapes W{self.weight.shape} b{self.bias.shape}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ContractError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def glorot_uniform(out_dim: int, in_dim: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def init_dense(out_dim: int, in_dim: int, activation: str,
               rng: np.random.Generator) -> DenseLayer:
    """Glorot-uniform weights, zero bias."""
    return DenseLayer(weight=glorot_uniform(out_dim, in_dim, rng),
                      bias=np.zeros(out_dim), activation=activation)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax (last axis), shift-invariant and overflow-safe."""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return relu(z)
    if activation == "softmax":
        return softmax(z)
    if activation == "identity":
        return z
    raise ParameterError(f"unknown activation {activation!r}")


def dense_forward(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply the layer to a vector or a batch of row vectors.

    Returns (activation output, cached pre-activation) for use in backprop.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.in_dim:
        raise ContractError(
            f"input dim {x.shape[-1]} does not match layer in_dim {layer.in_dim}")
    z = x @ layer.weight.T + layer.bias
    return apply_activation(z, layer.activation), z


def weighted_cross_entropy(probs, true_class: int, class_weights) -> tuple[float, np.ndarray]:
    """Class-weighted cross entropy of one probability vector.

    ``true_class`` indexes into ``probs``/``class_weights`` (0-based).
    Returns the loss -w_c log(p_c) and its gradient with respect to the
    logits, w_c (p - onehot_c).  Probabilities below 1e-12 are clamped with
    a :class:`NumericWarning`.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1:
        raise ContractError("probs must be a vector")
    if not 0 <= true_class < len(probs):
        raise ParameterError(f"true_class {true_class} out of range")
    if abs(float(probs.sum()) - 1.0) > 1e-6 or probs.min() < -1e-12:
        raise ContractError("probs must lie on the simplex")
    weights = np.asarray(class_weights, dtype=float)
    if weights.shape != probs.shape or np.any(weights <= 0):
        raise ParameterError("class_weights must be positive, one per class")
    p_true = float(probs[true_class])
    if p_true < _PROB_FLOOR:
        warnings.warn("probability clamped before log", NumericWarning, stacklevel=2)
        p_true = _PROB_FLOOR
    w = float(weights[true_class])
    onehot = np.zeros_like(probs)
    onehot[true_class] = 1.0
    return -w * np.log(p_true), w * (probs - onehot)


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], t=0)


@dataclass(frozen=True)
class AdamHyperparams:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, hyper: AdamHyperparams) -> list[np.ndarray]:
    """One bias-corrected ADAM update; mutates ``state``, returns new params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params/grads/state length mismatch")
    for k, grad in enumerate(grads):
        if grad.shape != params[k].shape:
            raise ContractError(f"gradient {k} shape {grad.shape} != {params[k].shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(
                "non-finite gradient",
                diagnostics={"param_index": k, "bad": int(np.sum(~np.isfinite(grad)))})
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    out = []
    for k, (p, grad) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * grad
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * grad * grad
        m_hat = state.m[k] / bias1
        v_hat = state.v[k] / bias2
        out.append(p - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.epsilon))
    return out


@dataclass(frozen=True)
class DropoutMask:
    """Bernoulli keep indicators scaled by 1/(1-rate); expectation-preserving."""

    values: np.ndarray = field(repr=False)
    rate: float = 0.0
    seed: tuple | None = None

    @classmethod
    def sample(cls, n_units: int, rate: float, seed, *spawn_key: int) -> "DropoutMask":
        """Draw a reproducible mask: same (seed, spawn_key) -> same mask."""
        rate = check_probability(rate, "dropout rate", inclusive_high=False)
        if rate == 0.0:
            return cls(values=np.ones(n_units), rate=0.0, seed=(seed, *spawn_key))
        rng = np.random.default_rng(as_seed_sequence(seed, *spawn_key))
        keep = rng.random(n_units) >= rate
        return cls(values=keep / (1.0 - rate), rate=rate, seed=(seed, *spawn_key))


def apply_dropout(x: np.ndarray, mask: DropoutMask) -> np.ndarray:
    """Elementwise product with the mask (broadcast over leading axes)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(mask.values):
        raise ContractError(
            f"mask length {len(mask.values)} does not match input dim {x.shape[-1]}")
    return x * mask.values


def gradient_check(loss_and_grads, params: list[np.ndarray],
                   step: float = 1e-5, floor: float | None = None) -> float:
    """Max relative discrepancy between analytic and central-difference gradients.

    ``loss_and_grads(params)`` must return ``(loss, grads)`` with grads
    aligned to ``params``.  Use only in differentiable configurations
    (dropout off, away from relu kinks).

    The relative-error denominator is floored at ``floor`` (default
    1e-6 * max(1, |loss|)): central differences of a loss of magnitude f
    carry roundoff of order eps*f/step, so gradient coordinates below that
    noise cannot be compared in purely relative terms.
    """
    base_loss, analytic = loss_and_grads(params)
    if floor is None:
        floor = 1e-6 * max(1.0, abs(float(base_loss)))
    worst = 0.0
    for k, p in enumerate(params):
        flat = p.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            plus = [q.copy() for q in params]
            plus[k].ravel()[idx] = orig + step
            minus = [q.copy() for q in params]
            minus[k].ravel()[idx] = orig - step
            f_plus, _ = loss_and_grads(plus)
            f_minus, _ = loss_and_grads(minus)
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[k].ravel()[idx])
            denom = max(abs(a), abs(numeric), floor)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
