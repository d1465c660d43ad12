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
"""Task augmentation by decomposing a dataset into cluster-combination tasks.

Examples are embedded and grouped by label, each label group is split
into K clusters with k-means, and choosing one cluster per label yields
K^N new tasks.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .corpus import DataError
from .episodes import TaskQueue, episode_capable
from .model import Model, encode
from .numerics import NumericError, Rng, as_matrix

logger = logging.getLogger(__name__)

# slack for floating-point noise in the inertia monotonicity check
INERTIA_SLACK = 1e-9


@dataclass(frozen=True)
class DrecaConfig:
    """k-means and queue mixing parameters"""

    clusters: int = 2
    embed: str = "encoder"
    restarts: int = 5
    max_iterations: int = 100
    tolerance: float = 1e-8
    seed: int = 0
    mixing: float = 0.5

    def __post_init__(self):
        if self.clusters < 1 or self.restarts < 1 or self.max_iterations < 1:
            raise ValueError("clusters, restarts and max_iterations must be at least 1")
        if self.embed not in ("encoder", "identity"):
            raise ValueError("unknown embedding: {}".format(self.embed))
        if not 0.0 <= self.mixing <= 1.0:
            raise ValueError("mixing must lie in [0, 1]")


@dataclass(frozen=True)
class KMeansResult:
    """Best clustering over all restarts"""

    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: tuple


@dataclass(frozen=True)
class DrecaTask:
    """One cluster per label; members are the union of the chosen clusters"""

    clusters: tuple
    members: tuple
    indices: tuple
    parent: str

    @property
    def name(self):
        """Dataset name of the task"""
        return "%s~dreca%s" % (self.parent, "-".join(str(c) for c in self.clusters))


def label_groups(dataset, embed=None):
    """Map label -> (example indices, embedded rows) over the whole dataset.

    ``embed`` is None (raw features), a Model (eval-mode encodings) or a
    callable from a feature matrix to an embedding matrix.
    """
    if isinstance(embed, Model):
        embedded = encode(embed, dataset.features)
    elif embed is None:
        embedded = np.array(dataset.features)
    else:
        embedded = as_matrix(embed(dataset.features), "embedding")
    return {
        label: (indices, embedded[indices])
        for label, indices in dataset.indices_by_label().items()
        if indices.size
    }


def _seed_centroids(points, k, rng):
    """k-means++ seeding"""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = cdist(points, points[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(n, p=closest / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(rng.choice(remaining))
        chosen.append(index)
        closest = np.minimum(closest, cdist(points, points[[index]], "sqeuclidean")[:, 0])
    return points[chosen].copy()


def _inertia(points, assignments, centroids):
    return float(np.sum((points - centroids[assignments]) ** 2))


def _lloyd(points, k, config, rng):
    centroids = _seed_centroids(points, k, rng)
    assignments = np.argmin(cdist(points, centroids, "sqeuclidean"), axis=1)
    history = []
    for _ in range(config.max_iterations):
        # empty clusters take the point farthest from its own centroid
        for cluster in range(k):
            if not np.any(assignments == cluster):
                gaps = np.sum((points - centroids[assignments]) ** 2, axis=1)
                counts = np.bincount(assignments, minlength=k)
                gaps[counts[assignments] <= 1] = -1.0
                assignments[int(np.argmax(gaps))] = cluster
        centroids = np.stack([points[assignments == c].mean(axis=0) for c in range(k)])
        inertia = _inertia(points, assignments, centroids)
        if history and inertia > history[-1] + INERTIA_SLACK * max(1.0, history[-1]):
            raise NumericError("k-means inertia increased")
        history.append(inertia)
        updated = np.argmin(cdist(points, centroids, "sqeuclidean"), axis=1)
        if np.array_equal(updated, assignments):
            break
        if len(history) > 1 and history[-2] - inertia <= config.tolerance * max(inertia, 1e-300):
            break
        assignments = updated
    return KMeansResult(assignments, centroids, history[-1], tuple(history))


def kmeans(points, k, config=None, rng=None):
    """Lloyd's algorithm with k-means++ seeding, best of ``restarts`` by inertia.

    Ties keep the earliest restart. Each restart draws from its own child
    stream of ``rng``.
    """
    points = as_matrix(points, "points")
    config = config or DrecaConfig(clusters=k)
    rng = rng or Rng(config.seed).child("kmeans")
    if k < 1:
        raise ValueError("k must be at least 1")
    if points.shape[0] < k:
        raise ValueError(
            "fewer points ({}) than clusters ({})".format(points.shape[0], k)
        )
    best = None
    for restart in range(config.restarts):
        result = _lloyd(points, k, config, rng.child(restart))
        logger.debug("k-means restart %d inertia %.6g", restart, result.inertia)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def enumerate_tasks(cluster_groups, parent="", ids=None):
    """All K^N combinations of one cluster per label, in lexicographic order.

    ``cluster_groups[label][cluster]`` holds example indices; ``ids`` maps
    an index to an example id (defaults to the index itself).
    """
    cluster_groups = [list(groups) for groups in cluster_groups]
    if not cluster_groups:
        raise ValueError("no label groups")
    k = len(cluster_groups[0])
    if any(len(groups) != k for groups in cluster_groups):
        raise ValueError("every label needs the same number of clusters")
    tasks = []
    for combination in itertools.product(range(k), repeat=len(cluster_groups)):
        indices = sorted(
            int(i)
            for label, cluster in enumerate(combination)
            for i in cluster_groups[label][cluster]
        )
        members = tuple(ids[i] if ids is not None else str(i) for i in indices)
        tasks.append(DrecaTask(tuple(combination), members, tuple(indices), parent))
    return tasks


def decompose(dataset, config, embed=None, rng=None):
    """Clusters every label group of a dataset and enumerates the tasks"""
    rng = rng or Rng(config.seed).child("dreca")
    groups = label_groups(dataset, embed)
    if len(groups) != dataset.num_labels:
        raise DataError("{} does not contain every label".format(dataset.name))
    cluster_groups = []
    for label, (indices, points) in sorted(groups.items()):
        result = kmeans(points, config.clusters, config, rng.child(label))
        cluster_groups.append(
            [indices[result.assignments == c] for c in range(config.clusters)]
        )
    ids = [example.id for example in dataset.examples]
    tasks = enumerate_tasks(cluster_groups, dataset.name, ids)
    logger.info("%s decomposed into %d tasks", dataset.name, len(tasks))
    return tasks


def task_datasets(dataset, tasks):
    """One dataset per task, holding the task's members in dataset order"""
    return [dataset.subset(task.indices, task.name) for task in tasks]


def augment_queue(queue, datasets, mixing, shot, query_per_class):
    """Adds episode-capable task datasets to a queue.

    New tasks share weight ``mixing`` by the queue's temperature rule; the
    original datasets keep their relative probabilities scaled by
    ``1 - mixing``.
    """
    if not 0.0 <= mixing <= 1.0:
        raise ValueError("mixing must lie in [0, 1]")
    capable = [d for d in datasets if episode_capable(d, shot, query_per_class)]
    if not capable:
        raise DataError("no episode-capable task among {} candidates".format(len(datasets)))
    if mixing == 0.0:
        return queue
    segments = [(count, weight * (1.0 - mixing)) for count, weight in queue.segments]
    segments.append((len(capable), mixing))
    logger.info(
        "queue augmented with %d of %d tasks at mixing %.2f", len(capable), len(datasets), mixing
    )
    return TaskQueue(list(queue.datasets) + capable, queue.temperature, segments)


def manifest(tasks):
    """JSON-ready description of tasks: cluster tuple and member ids"""
    return [
        {
            "name": task.name,
            "parent": task.parent,
            "clusters": list(task.clusters),
            "members": list(task.members),
        }
        for task in tasks
    ]
