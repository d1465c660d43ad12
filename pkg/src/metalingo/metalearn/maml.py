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
"""First-order MAML.

Inner: theta_hat = theta - alpha * grad L_support(theta). Outer:
theta <- theta - beta * sum_i grad L_query_i(theta_hat_i), where the query
gradient at theta_hat stands in for the gradient w.r.t. theta (second
derivatives are dropped).
"""
from dataclasses import dataclass

import numpy as np

from ..model import head_loss
from ..numerics import ensure_finite
from . import LoopConfig


@dataclass(frozen=True)
class MamlConfig(LoopConfig):
    """First-order MAML hyperparameters"""

    inner_lr: float = 0.01
    outer_lr: float = 0.001
    inner_steps: int = 1
    tasks_per_update: int = 4

    def __post_init__(self):
        super().__post_init__()
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ValueError("MAML learning rates must be positive")
        if self.inner_steps < 1 or self.tasks_per_update < 1:
            raise ValueError("inner_steps and tasks_per_update must be at least 1")


def sgd_step(params, grads, lr, indices=None):
    """params - lr * grads, restricted to ``indices`` when given"""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError("length mismatch: params {}, grads {}".format(params.shape, grads.shape))
    ensure_finite(grads, "gradient")
    updated = params.copy()
    sel = slice(None) if indices is None else indices
    updated[sel] = params[sel] - lr * grads[sel]
    return ensure_finite(updated, "parameters")


def _labels(examples):
    return np.array([example.label for example in examples], dtype=np.int64)


def maml_inner(model, support, tag, inner_lr, inner_steps=1, rng=None):
    """Task-adapted copy of the model after SGD steps on the support set"""
    if not model.has_head(tag):
        raise ValueError("unknown head: {}".format(tag))
    indices = model.parameter_indices(tag)
    mode = "eval" if rng is None else "train"
    work = model.copy()
    labels = _labels(support)
    for _ in range(inner_steps):
        _, grad = head_loss(work, support, labels, tag, mode=mode, rng=rng)
        work.load_flat(sgd_step(work.flat, grad, inner_lr, indices))
    return work


def maml_step(model, episodes, inner_lr, outer_lr, inner_steps=1, rng=None):
    """One meta-update over a batch of episodes.

    Every inner adaptation starts from the same theta. Returns the updated
    model (a new object) and the mean query loss.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("no episodes")
    total = np.zeros(model.parameter_count)
    losses = []
    for episode in episodes:
        if not episode.support or not episode.query:
            raise ValueError("MAML episodes need support and query sets")
        adapted = maml_inner(model, episode.support, episode.task, inner_lr, inner_steps, rng)
        mode = "eval" if rng is None else "train"
        loss, grad = head_loss(
            adapted, episode.query, _labels(episode.query), episode.task, mode=mode, rng=rng
        )
        total += grad
        losses.append(loss)
    updated = model.copy().load_flat(sgd_step(model.flat, total, outer_lr))
    return updated, float(np.mean(losses))
