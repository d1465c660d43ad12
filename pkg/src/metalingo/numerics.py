# The MIT License (MIT)

# Copyright (c) 2024 metalingo contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in
# all copies or substantial portions of the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN
# THE SOFTWARE.
"""Deterministic numerical substrate shared by every other module.

Vectors and matrices are plain float64 numpy arrays. Randomness comes from
:class:`Rng`, a thin wrapper over numpy's Philox counter-based generator:
a seed and a stream key fully determine the draw sequence on any platform.
"""
import binascii
from dataclasses import dataclass, replace

import numpy as np

CE_PROBABILITY_FLOOR = 1e-12
RELATIVE_ERROR_FLOOR = 1e-8

ADAMW_BETA1 = 0.9
ADAMW_BETA2 = 0.999
ADAMW_EPSILON = 1e-8
ADAMW_WEIGHT_DECAY = 0.01


class NumericError(ArithmeticError):
    """Raised when a non-finite value appears or a numeric contract breaks"""


def as_vector(values, name="vector"):
    """Returns values as a finite 1-D float64 array"""
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1:
        raise ValueError("{} must be 1-D, got shape {}".format(name, vector.shape))
    ensure_finite(vector, name)
    return vector


def as_matrix(values, name="matrix"):
    """Returns values as a finite 2-D float64 array"""
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise ValueError("{} must be 2-D, got shape {}".format(name, matrix.shape))
    ensure_finite(matrix, name)
    return matrix


def ensure_finite(values, name="value"):
    """Raises NumericError if values contain NaN or infinity"""
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite {}".format(name))
    return values


def stream_key(name):
    """Maps a stream name (or integer) to a stable 32-bit key"""
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return binascii.crc32(str(name).encode("utf-8"))


class Rng:
    """Seeded pseudo-random source.

    Algorithm: Philox-4x64 (numpy.random.Philox) keyed by
    SeedSequence([seed, *stream]). Child streams append a key to the path,
    string keys hashed with CRC-32, so derived streams are independent of
    the order in which they are requested.
    """

    def __init__(self, seed, stream=()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream = tuple(stream)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32] + list(self.stream)
        self.generator = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy))
        )

    def child(self, name):
        """Returns an independent stream derived from this one"""
        return Rng(self.seed, self.stream + (stream_key(name),))

    def uniform(self, low=0.0, high=1.0, size=None):
        """Uniform draws in [low, high)"""
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        """Gaussian draws"""
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        """Integer draws in [low, high)"""
        return self.generator.integers(low, high, size)

    def choice(self, population, size=None, replace=True, p=None):
        """Draws from a population, optionally weighted"""
        return self.generator.choice(population, size=size, replace=replace, p=p)

    def permutation(self, values):
        """Returns a shuffled copy (or a permutation of range(values))"""
        return self.generator.permutation(values)


def softmax(logits, axis=-1):
    """Softmax with max-subtraction; accepts a vector or a batch of rows"""
    values = np.asarray(logits, dtype=np.float64)
    if values.size == 0:
        raise ValueError("softmax of empty input")
    ensure_finite(values, "logits")
    shifted = values - np.max(values, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    """Numerically stable log of softmax"""
    values = np.asarray(logits, dtype=np.float64)
    if values.size == 0:
        raise ValueError("log_softmax of empty input")
    ensure_finite(values, "logits")
    shifted = values - np.max(values, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def cross_entropy(probs, true_label):
    """Returns -log probs[true_label].

    Probabilities below CE_PROBABILITY_FLOOR are floored, so a degenerate
    head yields a large finite loss (about 27.63) instead of infinity.
    """
    probs = as_vector(probs, "probabilities")
    if not 0 <= true_label < probs.size:
        raise ValueError(
            "label {} out of range for {} classes".format(true_label, probs.size)
        )
    if np.any(probs < 0) or abs(np.sum(probs) - 1.0) > 1e-9:
        raise ValueError("probabilities must form a distribution")
    return float(-np.log(max(probs[true_label], CE_PROBABILITY_FLOOR)))


def batch_cross_entropy(logits, labels):
    """Mean cross-entropy of a batch of logits and the gradient on the logits"""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    count = logits.shape[0]
    log_probs = log_softmax(logits)
    rows = np.arange(count)
    loss = -np.mean(log_probs[rows, labels])
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return float(loss), grad / count


@dataclass(frozen=True)
class AdamWConfig:
    """AdamW hyperparameters"""

    lr: float = 1e-5
    beta1: float = ADAMW_BETA1
    beta2: float = ADAMW_BETA2
    eps: float = ADAMW_EPSILON
    weight_decay: float = ADAMW_WEIGHT_DECAY

    def __post_init__(self):
        if self.lr < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("invalid AdamW hyperparameters")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("AdamW betas must lie in [0, 1)")


@dataclass(frozen=True)
class AdamWState:
    """First and second moments plus the shared step counter"""

    m: np.ndarray
    v: np.ndarray
    t: int
    config: AdamWConfig

    @classmethod
    def zeros(cls, size, config=None):
        """Fresh state for a parameter vector of the given size"""
        return cls(np.zeros(size), np.zeros(size), 0, config or AdamWConfig())


def adamw_step(params, grads, state, indices=None):
    """One AdamW step with bias correction and decoupled weight decay.

    Returns (new_params, new_state); inputs are never mutated. With
    ``indices`` only those coordinates (of params and of both moments)
    change, the rest are carried over bit-for-bit.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not params.shape == grads.shape == state.m.shape == state.v.shape:
        raise ValueError(
            "length mismatch: params {}, grads {}, state {}".format(
                params.shape, grads.shape, state.m.shape
            )
        )
    ensure_finite(grads, "gradient")
    hp = state.config
    t = state.t + 1
    sel = slice(None) if indices is None else indices

    g = grads[sel]
    p = params[sel] * (1.0 - hp.lr * hp.weight_decay)
    m = hp.beta1 * state.m[sel] + (1.0 - hp.beta1) * g
    v = hp.beta2 * state.v[sel] + (1.0 - hp.beta2) * g * g
    m_hat = m / (1.0 - hp.beta1**t)
    v_hat = v / (1.0 - hp.beta2**t)
    p = p - hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps)

    new_params = params.copy()
    new_m = state.m.copy()
    new_v = state.v.copy()
    new_params[sel] = p
    new_m[sel] = m
    new_v[sel] = v
    ensure_finite(new_params, "parameters")
    return new_params, replace(state, m=new_m, v=new_v, t=t)


def relative_error(a, b):
    """|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR), elementwise"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), RELATIVE_ERROR_FLOOR)
    return np.abs(a - b) / scale


def numerical_gradient(loss_fn, params, h=1e-5):
    """Central-difference gradient of a scalar function"""
    params = as_vector(params, "params")
    if h <= 0:
        raise ValueError("step h must be positive")
    grad = np.zeros_like(params)
    probe = params.copy()
    for i in range(params.size):
        original = probe[i]
        probe[i] = original + h
        plus = loss_fn(probe)
        probe[i] = original - h
        minus = loss_fn(probe)
        probe[i] = original
        grad[i] = (plus - minus) / (2.0 * h)
    return grad


def finite_diff_check(loss_fn, params, analytic_grad, h=1e-5):
    """Returns the max relative error between analytic and central-difference gradients"""
    params = as_vector(params, "params")
    analytic_grad = as_vector(analytic_grad, "analytic gradient")
    if analytic_grad.shape != params.shape:
        raise ValueError("gradient length does not match parameters")
    first = loss_fn(params.copy())
    second = loss_fn(params.copy())
    if first != second:
        raise NumericError("loss function is not deterministic")
    numeric = numerical_gradient(loss_fn, params, h)
    if params.size == 0:
        return 0.0
    return float(np.max(relative_error(analytic_grad, numeric)))
