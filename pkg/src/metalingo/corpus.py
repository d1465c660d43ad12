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
"""Datasets, file formats and the synthetic multi-language task family.

JSONL line format (UTF-8)::

    {"id": "...", "features": [0.1, ...], "label": "entailment",
     "language": "en", "task": "nli"}

Labels are mapped to indices by first appearance unless a sidecar label
file (one name per line) fixes the order.
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.linalg import expm

from .featurize import DEFAULT_DIM, featurize_pair
from .numerics import Rng
from .settings import ConfigError

logger = logging.getLogger(__name__)

JSONL_FIELDS = ("id", "features", "label", "language", "task")
TSV_HEADER = ("premise", "hypothesis", "label")

# Rotation angle (radians, spectral norm) per unit of language shift
ROTATION_PER_SHIFT = 0.3


class DataError(ValueError):
    """Raised for malformed, empty, ragged or misaligned data"""


@dataclass(frozen=True, eq=False)
class Example:
    """One labeled instance"""

    id: str
    features: np.ndarray
    label: int
    language: str
    task: str


class TaskDataset:
    """A named pool of examples sharing a (task, language) pair and label set"""

    def __init__(self, name, task, language, label_names, examples):
        self.name = name
        self.task = task
        self.language = language
        self.label_names = tuple(label_names)
        self.examples = tuple(examples)
        if not self.examples:
            raise DataError("empty dataset: {}".format(name))
        dims = {example.features.shape for example in self.examples}
        if len(dims) != 1:
            raise DataError("inconsistent feature dims in {}".format(name))
        for example in self.examples:
            if not 0 <= example.label < len(self.label_names):
                raise DataError(
                    "label {} out of range in {}".format(example.label, name)
                )
            if example.task != task or example.language != language:
                raise DataError(
                    "example {} does not belong to {}/{}".format(
                        example.id, task, language
                    )
                )
        self._features = np.stack([e.features for e in self.examples])
        self._features.setflags(write=False)

    def __len__(self):
        return len(self.examples)

    def __repr__(self):
        return "TaskDataset(%r, size=%d)" % (self.name, self.size)

    @property
    def size(self):
        """Example count q_i"""
        return len(self.examples)

    @property
    def num_labels(self):
        """Size of the label set"""
        return len(self.label_names)

    @property
    def feature_dim(self):
        """Feature vector width"""
        return self._features.shape[1]

    @property
    def features(self):
        """Read-only (size x feature_dim) matrix in example order"""
        return self._features

    @property
    def labels(self):
        """Label indices in example order"""
        return np.array([e.label for e in self.examples], dtype=np.int64)

    def label_counts(self):
        """Examples per label index"""
        return np.bincount(self.labels, minlength=self.num_labels)

    def indices_by_label(self):
        """Map label index -> example indices, in example order"""
        labels = self.labels
        return {
            label: np.flatnonzero(labels == label) for label in range(self.num_labels)
        }

    def subset(self, indices, name=None):
        """Dataset of the selected examples (order kept as given)"""
        return TaskDataset(
            name or self.name,
            self.task,
            self.language,
            self.label_names,
            [self.examples[i] for i in indices],
        )


def check_aligned(datasets):
    """Raises DataError unless all datasets share task tag and ordered label set"""
    datasets = list(datasets)
    first = datasets[0]
    for dataset in datasets[1:]:
        if dataset.label_names != first.label_names:
            raise DataError(
                "label sets not aligned: {} has {}, {} has {}".format(
                    first.name, list(first.label_names), dataset.name, list(dataset.label_names)
                )
            )
        if dataset.task != first.task:
            raise DataError(
                "datasets of different tasks cannot share an episode: {} and {}".format(
                    first.task, dataset.task
                )
            )
    return datasets


def load_labels(path):
    """Reads a sidecar label file: one label name per line"""
    with open(path, "r", encoding="utf-8") as file:
        names = [line.strip() for line in file if line.strip()]
    if not names:
        raise DataError("{}: no labels".format(path))
    if len(set(names)) != len(names):
        raise DataError("{}: duplicate labels".format(path))
    return names


def save_labels(label_names, path):
    """Writes a sidecar label file"""
    with open(path, "w", encoding="utf-8") as file:
        for name in label_names:
            file.write(name + "\n")


class _LabelMap:
    def __init__(self, path, fixed=None):
        self.path = path
        self.fixed = fixed is not None
        self.names = list(fixed or [])

    def index(self, name, line_number):
        if name in self.names:
            return self.names.index(name)
        if self.fixed:
            raise DataError(
                "{}:{}: unknown label {!r}".format(self.path, line_number, name)
            )
        self.names.append(name)
        return len(self.names) - 1


def _dataset_from_rows(path, rows, label_names):
    if not rows:
        raise DataError("{}: empty dataset".format(path))
    task, language = rows[0].task, rows[0].language
    return TaskDataset("%s/%s" % (task, language), task, language, label_names, rows)


def load_jsonl(path, label_names=None):
    """Loads one (task, language) dataset from a JSONL file"""
    labels = _LabelMap(path, label_names)
    examples = []
    dim = None
    with open(path, "r", encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except ValueError as e:
                raise DataError("{}:{}: malformed JSON ({})".format(path, line_number, e)) from e
            if not isinstance(record, dict):
                raise DataError("{}:{}: expected an object".format(path, line_number))
            missing = [key for key in JSONL_FIELDS if key not in record]
            if missing:
                raise DataError(
                    "{}:{}: missing fields {}".format(path, line_number, missing)
                )
            try:
                features = np.asarray(record["features"], dtype=np.float64)
            except (TypeError, ValueError) as e:
                raise DataError(
                    "{}:{}: features must be numbers".format(path, line_number)
                ) from e
            if features.ndim != 1 or not np.all(np.isfinite(features)):
                raise DataError(
                    "{}:{}: features must be a finite number array".format(
                        path, line_number
                    )
                )
            if dim is None:
                dim = features.size
            elif features.size != dim:
                raise DataError(
                    "{}:{}: expected {} features, got {}".format(
                        path, line_number, dim, features.size
                    )
                )
            if examples and (
                record["language"] != examples[0].language
                or record["task"] != examples[0].task
            ):
                raise DataError(
                    "{}:{}: a file holds a single task and language".format(
                        path, line_number
                    )
                )
            examples.append(
                Example(
                    id=str(record["id"]),
                    features=features,
                    label=labels.index(str(record["label"]), line_number),
                    language=str(record["language"]),
                    task=str(record["task"]),
                )
            )
    dataset = _dataset_from_rows(path, examples, labels.names)
    logger.debug("loaded %s from %s", dataset, path)
    return dataset


def dump_jsonl(dataset, path):
    """Writes a dataset as JSONL; floats use repr so reloading is exact"""
    with open(path, "w", encoding="utf-8") as file:
        for example in dataset.examples:
            record = {
                "id": example.id,
                "features": [float(v) for v in example.features],
                "label": dataset.label_names[example.label],
                "language": example.language,
                "task": example.task,
            }
            file.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_tsv(path, task, language=None, label_names=None, dim=DEFAULT_DIM):
    """Loads a ``premise<TAB>hypothesis<TAB>label`` file through the featurizer.

    The header row is optional; the language defaults to the file stem.
    """
    language = language or os.path.splitext(os.path.basename(path))[0]
    labels = _LabelMap(path, label_names)
    examples = []
    with open(path, "r", encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            columns = line.split("\t")
            if len(columns) != 3:
                raise DataError(
                    "{}:{}: expected 3 tab-separated columns, got {}".format(
                        path, line_number, len(columns)
                    )
                )
            if line_number == 1 and tuple(c.strip().lower() for c in columns) == TSV_HEADER:
                continue
            premise, hypothesis, label = columns
            examples.append(
                Example(
                    id="%s:%d" % (language, line_number),
                    features=featurize_pair(premise, hypothesis, dim),
                    label=labels.index(label.strip(), line_number),
                    language=language,
                    task=task,
                )
            )
    return _dataset_from_rows(path, examples, labels.names)


def _largest_remainder(count, fractions):
    exact = [count * f for f in fractions]
    parts = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - parts[i]), i))
    for i in order[: count - sum(parts)]:
        parts[i] += 1
    # every part gets at least one example of each label
    for i, part in enumerate(parts):
        if part == 0:
            donor = max(range(len(parts)), key=lambda j: (parts[j], -j))
            parts[donor] -= 1
            parts[i] = 1
    return parts


def split(dataset, fractions, seed):
    """Stratified, deterministic split into len(fractions) disjoint datasets"""
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1, got {}".format(sum(fractions)))
    rng = Rng(seed).child("split")
    parts = [[] for _ in fractions]
    for label, indices in dataset.indices_by_label().items():
        if indices.size < len(fractions):
            raise DataError(
                "label {!r} of {} has {} examples for {} split parts".format(
                    dataset.label_names[label], dataset.name, indices.size, len(fractions)
                )
            )
        shuffled = rng.permutation(indices)
        start = 0
        for part, count in zip(parts, _largest_remainder(indices.size, fractions)):
            part.extend(shuffled[start : start + count])
            start += count
    names = ["train", "dev", "test"] if len(fractions) == 3 else range(len(fractions))
    return tuple(
        dataset.subset(sorted(part), "%s:%s" % (dataset.name, name))
        for part, name in zip(parts, names)
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic task family"""

    num_languages: int = 5
    num_labels: int = 3
    feature_dim: int = 16
    clusters_per_label: int = 2
    separation: float = 4.0
    cluster_separation: float = 2.0
    noise: float = 1.0
    shift: float = 1.0
    samples_per_label: int = 60
    seed: int = 0
    task: str = "nli"
    label_names: tuple = field(default=())
    languages: tuple = field(default=())

    def __post_init__(self):
        counts = (
            self.num_languages,
            self.num_labels,
            self.feature_dim,
            self.clusters_per_label,
            self.samples_per_label,
        )
        if any(count < 1 for count in counts):
            raise ConfigError("synthetic counts must be at least 1")
        if self.separation <= 0:
            raise ConfigError("synthetic separation must be positive")
        if min(self.cluster_separation, self.noise, self.shift) < 0:
            raise ConfigError("synthetic spreads and shift must be non-negative")
        if self.feature_dim < max(self.num_labels, self.clusters_per_label):
            raise ConfigError(
                "feature_dim must be at least num_labels and clusters_per_label"
            )
        if self.label_names and len(self.label_names) != self.num_labels:
            raise ConfigError("label_names must hold num_labels names")
        if self.languages and len(self.languages) != self.num_languages:
            raise ConfigError("languages must hold num_languages names")
        object.__setattr__(self, "label_names", tuple(self.label_names))
        object.__setattr__(self, "languages", tuple(self.languages))

    @property
    def language_tags(self):
        """Language tags, generated when not given"""
        return self.languages or tuple("lang%d" % i for i in range(self.num_languages))

    @property
    def labels(self):
        """Label names, generated when not given"""
        return self.label_names or tuple("class%d" % i for i in range(self.num_labels))

    @classmethod
    def from_dict(cls, document):
        """Spec from a JSON object; unknown keys are rejected"""
        if not isinstance(document, dict):
            raise ConfigError("synthetic spec must be an object")
        known = {f.name for f in fields(cls)}
        for key in document:
            if key not in known:
                raise ConfigError("unknown key: %s" % key)
        try:
            return cls(**document)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def _orthogonal(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def _simplex(count, dim, edge, rotation):
    # scaled basis vectors are pairwise sqrt(2) * scale apart
    points = np.zeros((count, dim))
    points[np.arange(count), np.arange(count)] = edge / math.sqrt(2.0)
    points -= points.mean(axis=0)
    return points @ rotation.T


class _Generative:
    """Shared cluster structure plus one affine map per language"""

    def __init__(self, spec):
        self.spec = spec
        rng = Rng(spec.seed).child("synthetic").child(spec.task)
        dim = spec.feature_dim
        self.centers = _simplex(
            spec.num_labels, dim, spec.separation, _orthogonal(rng.child("centers"), dim)
        )
        self.offsets = [
            _simplex(
                spec.clusters_per_label,
                dim,
                spec.cluster_separation,
                _orthogonal(rng.child("clusters").child(label), dim),
            )
            for label in range(spec.num_labels)
        ]
        self.maps = []
        for index in range(spec.num_languages):
            lang_rng = rng.child("language").child(index)
            b = lang_rng.normal(size=(dim, dim))
            skew = b - b.T
            skew /= np.linalg.norm(skew, 2)
            rotation = expm(ROTATION_PER_SHIFT * spec.shift * skew)
            direction = lang_rng.normal(size=dim)
            offset = spec.shift * direction / np.linalg.norm(direction)
            self.maps.append((rotation, offset))
        self.rng = rng

    def transform(self, language_index, points):
        rotation, offset = self.maps[language_index]
        return points @ rotation.T + offset


def generative_centers(spec):
    """Map language tag -> (num_labels x feature_dim) true class centers"""
    model = _Generative(spec)
    return {
        language: model.transform(index, model.centers)
        for index, language in enumerate(spec.language_tags)
    }


def centers_dataset(spec, language):
    """One-example-per-label dataset holding the true centers of a language"""
    centers = generative_centers(spec)[language]
    examples = [
        Example(
            id="center/%s/%s" % (language, name),
            features=centers[label],
            label=label,
            language=language,
            task=spec.task,
        )
        for label, name in enumerate(spec.labels)
    ]
    return TaskDataset(
        "%s/%s:centers" % (spec.task, language), spec.task, language, spec.labels, examples
    )


def generate_synthetic(spec):
    """One dataset per language; examples of label c cycle over its sub-clusters.

    Example ids read ``task/language/label/cluster/index``.
    """
    model = _Generative(spec)
    datasets = []
    for index, language in enumerate(spec.language_tags):
        noise_rng = model.rng.child("samples").child(index)
        examples = []
        for label in range(spec.num_labels):
            clusters = np.arange(spec.samples_per_label) % spec.clusters_per_label
            points = (
                model.centers[label]
                + model.offsets[label][clusters]
                + spec.noise
                * noise_rng.normal(size=(spec.samples_per_label, spec.feature_dim))
            )
            points = model.transform(index, points)
            for i, (cluster, point) in enumerate(zip(clusters, points)):
                examples.append(
                    Example(
                        id="%s/%s/%d/%d/%d" % (spec.task, language, label, cluster, i),
                        features=point,
                        label=label,
                        language=language,
                        task=spec.task,
                    )
                )
        datasets.append(
            TaskDataset(
                "%s/%s" % (spec.task, language), spec.task, language, spec.labels, examples
            )
        )
    logger.debug(
        "generated %d synthetic languages for task %s", len(datasets), spec.task
    )
    return datasets


def planted_cluster(example):
    """Sub-cluster index a synthetic example was drawn from"""
    return int(example.id.split("/")[3])
