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
"""Learners, training regimes and evaluation"""
from dataclasses import dataclass, field

from ..episodes import EpisodeShape
from ..numerics import AdamWConfig

REGIMES = ("reptile", "maml", "protonet", "non_episodic")


@dataclass(frozen=True)
class LoopConfig:
    """Iteration budget shared by every regime.

    ``iterations`` is per epoch; "auto" resolves to the smallest count
    that lets every queued example be seen once per epoch.
    """

    iterations: object = 20000
    epochs: int = 2
    eval_interval: int = 100
    dev_episodes: int = 20
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    episode: EpisodeShape = field(default_factory=EpisodeShape)

    def __post_init__(self):
        if self.iterations != "auto" and (
            not isinstance(self.iterations, int) or self.iterations < 0
        ):
            raise ValueError("iterations must be a non-negative integer or 'auto'")
        if self.epochs < 1 or self.eval_interval < 1 or self.dev_episodes < 0:
            raise ValueError("epochs and eval_interval must be at least 1")
