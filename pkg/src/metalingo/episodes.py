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
"""Task queue and N-way K-shot episode construction.

Task sampling follows the temperature rule
``P(i) = q_i^(1/tau) / sum_k q_k^(1/tau)`` over dataset sizes q_i,
evaluated in log space; ``tau = inf`` is uniform.
"""
import math
from dataclasses import dataclass

import numpy as np

from .corpus import DataError, check_aligned
from .numerics import softmax

SCENARIOS = ("aux_only", "aux_support_mixed_query")
DEFAULT_TARGET_FRACTION = 1.0 / 3.0


@dataclass(frozen=True)
class EpisodeShape:
    """How episodes are drawn: N-way K-shot with Q queries per class"""

    way: int = 3
    shot: int = 4
    query_per_class: int = None
    scenario: str = "aux_only"
    target_fraction: float = DEFAULT_TARGET_FRACTION

    def __post_init__(self):
        if self.way < 2 or self.shot < 1:
            raise ValueError("episodes need way >= 2 and shot >= 1")
        if self.scenario not in SCENARIOS:
            raise ValueError("unknown scenario: {}".format(self.scenario))

    @property
    def query(self):
        """Effective query count per class (defaults to shot)"""
        return self.shot if self.query_per_class is None else self.query_per_class

    def way_for(self, dataset):
        """Way used on a dataset; tasks with fewer labels run smaller episodes"""
        return min(self.way, dataset.num_labels)


def example_key(example):
    """Identity of an example across datasets"""
    return (example.language, example.task, example.id)


@dataclass(frozen=True)
class Episode:
    """Support and query sets over the same ``way`` classes"""

    support: tuple
    query: tuple
    way: int
    shot: int
    query_per_class: int
    classes: tuple
    sources: tuple
    task: str

    def __post_init__(self):
        if len(self.classes) != self.way or len(set(self.classes)) != self.way:
            raise ValueError("episode needs {} distinct classes".format(self.way))
        if len(self.support) != self.way * self.shot:
            raise ValueError("support must hold way * shot examples")
        if len(self.query) != self.way * self.query_per_class:
            raise ValueError("query must hold way * query_per_class examples")
        for part, per_class in ((self.support, self.shot), (self.query, self.query_per_class)):
            counts = {c: 0 for c in self.classes}
            for example in part:
                if example.label not in counts:
                    raise ValueError("label {} is not an episode class".format(example.label))
                counts[example.label] += 1
            if any(count != per_class for count in counts.values()):
                raise ValueError("unbalanced episode classes")
        # ids are only unique inside one file
        support_ids = {example_key(example) for example in self.support}
        if len(support_ids) != len(self.support):
            raise ValueError("duplicate example in support")
        if support_ids & {example_key(example) for example in self.query}:
            raise ValueError("support and query overlap")

    @staticmethod
    def _relative(examples, classes):
        position = {c: i for i, c in enumerate(classes)}
        return np.array([position[e.label] for e in examples], dtype=np.int64)

    def support_labels(self):
        """Dataset label indices of the support set"""
        return np.array([e.label for e in self.support], dtype=np.int64)

    def query_labels(self):
        """Dataset label indices of the query set"""
        return np.array([e.label for e in self.query], dtype=np.int64)

    def support_positions(self):
        """Position of each support label in ``classes`` (0..way-1)"""
        return self._relative(self.support, self.classes)

    def query_positions(self):
        """Position of each query label in ``classes`` (0..way-1)"""
        return self._relative(self.query, self.classes)


def queue_probabilities(sizes, temperature):
    """Sampling probability of each dataset from its size and the temperature"""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.ndim != 1 or sizes.size == 0:
        raise ValueError("sizes must be a non-empty list")
    if np.any(~np.isfinite(sizes)) or np.any(sizes <= 0):
        raise ValueError("dataset sizes must be positive")
    if math.isnan(temperature) or temperature <= 0:
        raise ValueError("temperature must be positive")
    if math.isinf(temperature):
        return np.full(sizes.size, 1.0 / sizes.size)
    return softmax(np.log(sizes) / temperature)


class TaskQueue:
    """Datasets with their sampling distribution.

    ``segments`` optionally splits the queue into consecutive groups, each
    holding (count, weight); the temperature rule applies inside a group
    and the group weight scales it. Weights must sum to 1.
    """

    def __init__(self, datasets, temperature=1.0, segments=None):
        self.datasets = tuple(datasets)
        if not self.datasets:
            raise ValueError("empty task queue")
        self.temperature = temperature
        self.segments = tuple(segments or ((len(self.datasets), 1.0),))
        if sum(count for count, _ in self.segments) != len(self.datasets):
            raise ValueError("segments must cover the queue")
        if abs(sum(weight for _, weight in self.segments) - 1.0) > 1e-12:
            raise ValueError("segment weights must sum to 1")
        parts, start = [], 0
        for count, weight in self.segments:
            sizes = [d.size for d in self.datasets[start : start + count]]
            parts.append(weight * queue_probabilities(sizes, temperature))
            start += count
        self.probabilities = np.concatenate(parts)
        self.probabilities.setflags(write=False)

    def __len__(self):
        return len(self.datasets)

    @property
    def tasks(self):
        """Task tags present in the queue, in first-appearance order"""
        return list(dict.fromkeys(d.task for d in self.datasets))

    @property
    def total_examples(self):
        """Examples over all datasets with non-zero probability"""
        return sum(d.size for d, p in zip(self.datasets, self.probabilities) if p > 0)


def sample_task(queue, rng):
    """Draws one dataset according to the queue distribution"""
    if not len(queue):
        raise ValueError("empty task queue")
    return queue.datasets[int(rng.choice(len(queue), p=queue.probabilities))]


def sample_companions(queue, first, count, rng):
    """``first`` plus up to count-1 other same-task, label-aligned datasets.

    Companions are drawn without replacement with the queue probabilities
    renormalized over the eligible datasets.
    """
    chosen = [first]
    eligible = [
        i
        for i, d in enumerate(queue.datasets)
        if d is not first
        and d.task == first.task
        and d.label_names == first.label_names
        and queue.probabilities[i] > 0
    ]
    extra = min(count - 1, len(eligible))
    if extra > 0:
        weights = queue.probabilities[eligible]
        picks = rng.choice(len(eligible), size=extra, replace=False, p=weights / weights.sum())
        chosen.extend(queue.datasets[eligible[int(i)]] for i in picks)
    return chosen


def _pools(datasets):
    pools = {}
    for dataset in datasets:
        for label, indices in dataset.indices_by_label().items():
            pools.setdefault(label, []).extend(dataset.examples[i] for i in indices)
    return pools


def episode_capable(dataset, shot, query_per_class):
    """True if every label of the dataset can fill support and query"""
    return bool(np.all(dataset.label_counts() >= shot + query_per_class))


def build_episode(
    datasets,
    way,
    shot,
    query_per_class=None,
    scenario="aux_only",
    target_dataset=None,
    rng=None,
    target_fraction=DEFAULT_TARGET_FRACTION,
):
    """Samples an N-way K-shot episode from one or more aligned datasets.

    ``aux_only`` draws support and query from the pooled datasets. The
    mixed scenario draws support from them and decides each query slot
    independently: target with probability ``target_fraction``, else
    auxiliary.
    """
    if rng is None:
        raise ValueError("build_episode needs an rng")
    if scenario not in SCENARIOS:
        raise ValueError("unknown scenario: {}".format(scenario))
    if way < 1 or shot < 1:
        raise ValueError("way and shot must be at least 1")
    query_per_class = shot if query_per_class is None else query_per_class
    if query_per_class < 0:
        raise ValueError("query_per_class must be non-negative")
    if not 0.0 <= target_fraction <= 1.0:
        raise ValueError("target_fraction must lie in [0, 1]")
    datasets = [datasets] if hasattr(datasets, "examples") else list(datasets)
    mixed = scenario == "aux_support_mixed_query"
    if mixed and target_dataset is None:
        raise ValueError("the mixed scenario needs a target dataset")
    check_aligned(datasets + ([target_dataset] if mixed else []))
    num_labels = datasets[0].num_labels
    if way > num_labels:
        raise DataError(
            "way {} exceeds the {} shared labels".format(way, num_labels)
        )

    aux = _pools(datasets)
    target = _pools([target_dataset]) if mixed else {}
    needed = shot + query_per_class
    eligible = [
        label
        for label in range(num_labels)
        if len(aux.get(label, ())) >= needed
        and (not mixed or len(target.get(label, ())) >= query_per_class)
    ]
    if len(eligible) < way:
        raise DataError(
            "insufficient examples per class: {} of {} labels hold {} examples".format(
                len(eligible), num_labels, needed
            )
        )

    classes = tuple(int(c) for c in rng.choice(eligible, size=way, replace=False))
    support, query = [], []
    for label in classes:
        if mixed:
            from_target = rng.uniform(size=query_per_class) < target_fraction
            n_target = int(from_target.sum())
            picks = rng.choice(len(aux[label]), size=shot + query_per_class - n_target, replace=False)
            drawn = [aux[label][int(i)] for i in picks]
            targets = [
                target[label][int(i)]
                for i in rng.choice(len(target[label]), size=n_target, replace=False)
            ]
            support.extend(drawn[:shot])
            rest = iter(drawn[shot:])
            tgt = iter(targets)
            query.extend(next(tgt) if flag else next(rest) for flag in from_target)
        else:
            picks = rng.choice(len(aux[label]), size=needed, replace=False)
            drawn = [aux[label][int(i)] for i in picks]
            support.extend(drawn[:shot])
            query.extend(drawn[shot:])

    sources = [d.name for d in datasets] + ([target_dataset.name] if mixed else [])
    return Episode(
        support=tuple(support),
        query=tuple(query),
        way=way,
        shot=shot,
        query_per_class=query_per_class,
        classes=classes,
        sources=tuple(sources),
        task=datasets[0].task,
    )
