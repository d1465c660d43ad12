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
"""Prototypical networks with a joint head cross-entropy term.

Prototypes are class means of support encodings; a query is classified by
a softmax over negated distances to the prototypes. The episode loss is
``lambda_dce * DCE(query) + lambda_ce * CE(head, support + query)``.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from ..model import backward, forward
from ..numerics import as_matrix, batch_cross_entropy, log_softmax, softmax
from . import LoopConfig

DISTANCES = ("squared_euclidean", "euclidean")
_CDIST_METRIC = {"squared_euclidean": "sqeuclidean", "euclidean": "euclidean"}


@dataclass(frozen=True)
class ProtoConfig(LoopConfig):
    """Prototypical network hyperparameters"""

    lambda_dce: float = 1.0
    lambda_ce: float = 1.0
    distance: str = "squared_euclidean"
    languages_per_episode: int = 1

    def __post_init__(self):
        super().__post_init__()
        check_lambdas(self.lambda_dce, self.lambda_ce)
        if self.distance not in DISTANCES:
            raise ValueError("unknown distance: {}".format(self.distance))
        if self.languages_per_episode < 1:
            raise ValueError("languages_per_episode must be at least 1")


class ProtoLoss(NamedTuple):
    """Episode loss, its flat gradient and the parts it is made of"""

    loss: float
    gradient: np.ndarray
    dce: float
    ce: float
    accuracy: float


def check_lambdas(lambda_dce, lambda_ce):
    """Both weights non-negative and not both zero"""
    if lambda_dce < 0 or lambda_ce < 0:
        raise ValueError("loss weights must be non-negative")
    if lambda_dce == 0 and lambda_ce == 0:
        raise ValueError("lambda_dce and lambda_ce must not both be zero")


def prototypes(encodings_by_class):
    """Mean encoding of each class, stacked in class order"""
    means = []
    for c, encodings in enumerate(encodings_by_class):
        encodings = np.asarray(encodings, dtype=np.float64)
        if encodings.ndim != 2 or encodings.shape[0] == 0:
            raise ValueError("class {} has no encodings".format(c))
        means.append(encodings.mean(axis=0))
    return np.stack(means)


def distances(queries, centers, distance="squared_euclidean"):
    """(queries x centers) distance table"""
    if distance not in DISTANCES:
        raise ValueError("unknown distance: {}".format(distance))
    queries = as_matrix(queries, "queries")
    centers = as_matrix(centers, "prototypes")
    if queries.shape[1] != centers.shape[1]:
        raise ValueError(
            "query dimension {} does not match prototype dimension {}".format(
                queries.shape[1], centers.shape[1]
            )
        )
    return cdist(queries, centers, _CDIST_METRIC[distance])


def proto_classify(query_encoding, centers, distance="squared_euclidean"):
    """Class probabilities softmax(-d(query, mu_c)); a vector in gives a vector out"""
    centers = as_matrix(centers, "prototypes")
    if centers.shape[0] < 2:
        raise ValueError("need at least 2 prototypes")
    single = np.ndim(query_encoding) == 1
    probs = softmax(-distances(query_encoding, centers, distance), axis=1)
    return probs[0] if single else probs


def _distance_grads(queries, centers, upstream, distance):
    """Backpropagates dL/dD through the distance table"""
    diff = queries[:, None, :] - centers[None, :, :]
    if distance == "squared_euclidean":
        weight = 2.0 * upstream
    else:
        norm = np.sqrt(np.sum(diff * diff, axis=2))
        weight = np.divide(upstream, norm, out=np.zeros_like(norm), where=norm > 0)
    weighted = weight[:, :, None] * diff
    return weighted.sum(axis=1), -weighted.sum(axis=0)


def proto_episode_loss(
    model, episode, lambda_dce=1.0, lambda_ce=1.0, rng=None, distance="squared_euclidean"
):
    """Combined loss of an episode with its exact gradient.

    One forward pass covers support then query, so dropout (train mode,
    when an rng is given) uses one mask set for both.
    """
    check_lambdas(lambda_dce, lambda_ce)
    if not episode.query:
        raise ValueError("prototypical episodes need a query set")
    tag = episode.task
    if lambda_ce > 0 and not model.has_head(tag):
        raise ValueError("unknown head: {}".format(tag))
    examples = episode.support + episode.query
    n_support = len(episode.support)
    trace = forward(
        model,
        examples,
        head=tag if lambda_ce > 0 else None,
        mode="eval" if rng is None else "train",
        rng=rng,
    )
    encoding = trace.encoding
    support, query = encoding[:n_support], encoding[n_support:]

    positions = episode.support_positions()
    centers = prototypes([support[positions == c] for c in range(episode.way)])
    table = distances(query, centers, distance)
    targets = episode.query_positions()
    rows = np.arange(targets.size)
    log_probs = log_softmax(-table, axis=1)
    dce = float(-np.mean(log_probs[rows, targets]))
    accuracy = float(np.mean(np.argmin(table, axis=1) == targets))

    # dDCE/dlogits with logits = -table
    g = np.exp(log_probs)
    g[rows, targets] -= 1.0
    g /= targets.size
    d_query, d_centers = _distance_grads(query, centers, -g, distance)
    d_support = d_centers[positions] / episode.shot
    encoding_grad = lambda_dce * np.vstack([d_support, d_query])

    ce = 0.0
    logits_grad = None
    if lambda_ce > 0:
        labels = np.array([e.label for e in examples], dtype=np.int64)
        ce, ce_grad = batch_cross_entropy(trace.logits[tag], labels)
        logits_grad = {tag: lambda_ce * ce_grad}

    gradient = backward(model, trace, logits_grad=logits_grad, encoding_grad=encoding_grad)
    return ProtoLoss(
        loss=combined_loss(dce, ce, lambda_dce, lambda_ce),
        gradient=gradient,
        dce=dce,
        ce=ce,
        accuracy=accuracy,
    )


def combined_loss(dce, ce, lambda_dce=1.0, lambda_ce=1.0):
    """lambda_dce * dce + lambda_ce * ce"""
    return lambda_dce * dce + lambda_ce * ce
