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
"""Accuracy and confusion matrices by head argmax or nearest prototype"""
from dataclasses import dataclass

import numpy as np

from ..corpus import DataError
from ..episodes import build_episode
from ..model import encode, forward
from .protonet import distances, prototypes

METHODS = ("head", "prototype")


@dataclass(frozen=True)
class Evaluation:
    """Accuracy, confusion matrix (rows = true labels) and predictions"""

    accuracy: float
    confusion: np.ndarray
    predictions: np.ndarray


def confusion_matrix(true_labels, predictions, num_labels):
    """Counts of (true, predicted) pairs"""
    matrix = np.zeros((num_labels, num_labels), dtype=np.int64)
    np.add.at(matrix, (np.asarray(true_labels), np.asarray(predictions)), 1)
    return matrix


def _sources(source):
    return [source] if hasattr(source, "examples") else list(source)


def prototype_centers(model, source):
    """Per-label prototypes of one or more labeled datasets, encoded in eval mode"""
    sources = _sources(source)
    encodings = np.vstack([encode(model, s.features) for s in sources])
    labels = np.concatenate([s.labels for s in sources])
    first = sources[0]
    groups = []
    for label in range(first.num_labels):
        members = encodings[labels == label]
        if members.shape[0] == 0:
            raise DataError(
                "prototype source {} has no example of label {!r}".format(
                    first.name, first.label_names[label]
                )
            )
        groups.append(members)
    return prototypes(groups)


def evaluate(model, dataset, method="head", prototype_source=None, distance="squared_euclidean"):
    """Scores a model on a dataset.

    ``head`` takes the argmax of the dataset task's head. ``prototype``
    builds one prototype per label from ``prototype_source`` (a dataset or
    a list of them, pooled) and predicts the nearest one; label sets must
    be aligned.
    """
    if method not in METHODS:
        raise ValueError("unknown evaluation method: {}".format(method))
    if method == "head":
        if not model.has_head(dataset.task):
            raise ValueError("missing head: {}".format(dataset.task))
        logits = forward(model, dataset.features, head=dataset.task).logits[dataset.task]
        predictions = np.argmax(logits, axis=1)
    else:
        if prototype_source is None:
            raise ValueError("the prototype method needs a prototype source")
        for source in _sources(prototype_source):
            if source.label_names != dataset.label_names:
                raise DataError(
                    "prototype source {} is not label-aligned with {}".format(
                        source.name, dataset.name
                    )
                )
        centers = prototype_centers(model, prototype_source)
        table = distances(encode(model, dataset.features), centers, distance)
        predictions = np.argmin(table, axis=1)
    labels = dataset.labels
    return Evaluation(
        accuracy=float(np.mean(predictions == labels)),
        confusion=confusion_matrix(labels, predictions, dataset.num_labels),
        predictions=predictions,
    )


def episode_accuracy(model, dataset, shape, count, rng, distance="squared_euclidean"):
    """Mean query accuracy of ``count`` prototype episodes drawn from a dataset.

    The way is capped at the dataset's label count.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    query = shape.query or shape.shot
    scores = []
    for _ in range(count):
        episode = build_episode(dataset, shape.way_for(dataset), shape.shot, query, rng=rng)
        support = encode(model, episode.support)
        positions = episode.support_positions()
        centers = prototypes([support[positions == c] for c in range(episode.way)])
        table = distances(encode(model, episode.query), centers, distance)
        scores.append(np.mean(np.argmin(table, axis=1) == episode.query_positions()))
    return float(np.mean(scores))
