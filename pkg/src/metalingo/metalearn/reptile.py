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
"""Reptile: adapt a copy per task with AdamW, then move toward the adapted weights"""
from dataclasses import dataclass, field

import numpy as np

from ..episodes import EpisodeShape
from ..model import head_loss
from ..numerics import AdamWState, adamw_step, as_vector
from . import LoopConfig


@dataclass(frozen=True)
class ReptileConfig(LoopConfig):
    """Reptile hyperparameters; beta decays linearly to 0 when beta_decay is set"""

    inner_steps: int = 3
    beta: float = 0.5
    beta_decay: bool = True
    tasks_per_update: int = 4
    episode: EpisodeShape = field(default_factory=lambda: EpisodeShape(way=2))

    def __post_init__(self):
        super().__post_init__()
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.tasks_per_update < 1:
            raise ValueError("tasks_per_update must be at least 1")

    def beta_at(self, iteration, total):
        """Outer step size at a 0-based iteration of a run of ``total``"""
        if not self.beta_decay or total <= 0:
            return self.beta
        return self.beta * (1.0 - iteration / total)


def reptile_inner(model, support, tag, inner_steps, adamw, rng=None):
    """Runs ``inner_steps`` AdamW steps of head cross-entropy on the support set.

    Starts from the model's parameters with fresh optimizer moments and
    touches only the encoder and the ``tag`` head; the model itself is not
    modified. Dropout is active when an rng is given. Returns the adapted
    flat vector and the loss seen before each step.
    """
    if not model.has_head(tag):
        raise ValueError("unknown head: {}".format(tag))
    if inner_steps < 1:
        raise ValueError("inner_steps must be at least 1")
    labels = np.array([example.label for example in support], dtype=np.int64)
    indices = model.parameter_indices(tag)
    work = model.copy()
    state = AdamWState.zeros(work.parameter_count, adamw)
    mode = "eval" if rng is None else "train"
    losses = []
    for _ in range(inner_steps):
        loss, grad = head_loss(work, support, labels, tag, mode=mode, rng=rng)
        params, state = adamw_step(work.flat, grad, state, indices)
        work.load_flat(params)
        losses.append(loss)
    return work.flatten(), losses


def reptile_outer(theta, adapted, beta):
    """theta + beta * mean_i(adapted_i - theta)"""
    theta = as_vector(theta, "theta")
    adapted = list(adapted)
    if not adapted:
        raise ValueError("no adapted parameter vectors")
    for vector in adapted:
        if np.shape(vector) != theta.shape:
            raise ValueError("adapted vector length does not match theta")
    deltas = np.stack([as_vector(v, "adapted") for v in adapted]) - theta
    return theta + beta * deltas.mean(axis=0)
