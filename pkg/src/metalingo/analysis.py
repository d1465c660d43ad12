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
"""Representation diagnostics: cosine Hausdorff distance, CCA similarity and PCA.

CSV outputs: ``pca.csv`` (id, language, x, y), ``cca.csv`` (layer,
similarity, ridge) and ``hausdorff.csv`` (pair, distance).
"""
import csv
import io
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import cdist

from .model import forward
from .numerics import NumericError, as_matrix, as_vector

logger = logging.getLogger(__name__)

CCA_RIDGE = 1e-6


@dataclass(frozen=True)
class RepresentationSet:
    """Rows of encodings with an identifying label"""

    label: str
    matrix: np.ndarray
    ids: tuple = ()
    languages: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_matrix(self.matrix, self.label))

    def __len__(self):
        return self.matrix.shape[0]


def _rows(values):
    return values.matrix if isinstance(values, RepresentationSet) else as_matrix(values)


def cosine_distance(s, t):
    """1 - cos(s, t), in [0, 2]"""
    s = as_vector(s, "s")
    t = as_vector(t, "t")
    if s.shape != t.shape:
        raise ValueError("vectors have different dimensions")
    ns, nt = np.linalg.norm(s), np.linalg.norm(t)
    if ns == 0 or nt == 0:
        raise ValueError("cosine distance of a zero vector")
    return float(np.clip(1.0 - (s @ t) / (ns * nt), 0.0, 2.0))


def hausdorff(S, T):
    """max(max_s min_t d(s, t), max_t min_s d(s, t)) with cosine distance d"""
    s, t = _rows(S), _rows(T)
    if s.shape[1] != t.shape[1]:
        raise ValueError("sets have different dimensions")
    if np.any(np.linalg.norm(s, axis=1) == 0) or np.any(np.linalg.norm(t, axis=1) == 0):
        raise ValueError("cosine distance of a zero vector")
    table = np.clip(cdist(s, t, "cosine"), 0.0, 2.0)
    return float(max(table.min(axis=1).max(), table.min(axis=0).max()))


def _orthonormal_basis(centered):
    u, sigma, _ = np.linalg.svd(centered, full_matrices=False)
    if sigma.size == 0 or sigma[0] == 0:
        raise NumericError("rank-0 input")
    tol = sigma[0] * max(centered.shape) * np.finfo(np.float64).eps
    return u[:, sigma > tol]


def _inverse_sqrt(cov):
    values, vectors = la.eigh(cov)
    return (vectors / np.sqrt(values)) @ vectors.T


def canonical_correlations(X, Y):
    """Canonical correlations (descending) and whether the ridge path was used.

    With more rows than columns the correlations are the singular values
    of U_x^T U_y for orthonormal bases of the centered column spaces.
    Otherwise covariances get CCA_RIDGE added to the diagonal before
    whitening.
    """
    x, y = _rows(X), _rows(Y)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("CCA needs the same number of rows")
    if n < 3:
        raise ValueError("CCA needs at least 3 rows")
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    if n > max(x.shape[1], y.shape[1]):
        rho = np.linalg.svd(_orthonormal_basis(x).T @ _orthonormal_basis(y), compute_uv=False)
        return np.clip(rho, 0.0, 1.0), False
    if not np.any(x) or not np.any(y):
        raise NumericError("rank-0 input")
    logger.debug("CCA with %d rows for %d/%d columns: ridge %g", n, x.shape[1], y.shape[1], CCA_RIDGE)
    wx = _inverse_sqrt(x.T @ x + CCA_RIDGE * np.eye(x.shape[1]))
    wy = _inverse_sqrt(y.T @ y + CCA_RIDGE * np.eye(y.shape[1]))
    rho = la.svd(wx @ (x.T @ y) @ wy, compute_uv=False)
    rank = min(np.linalg.matrix_rank(x), np.linalg.matrix_rank(y))
    return np.clip(rho[:rank], 0.0, 1.0), True


def cca_similarity(X, Y):
    """Mean canonical correlation, in [0, 1]"""
    rho, _ = canonical_correlations(X, Y)
    return float(np.mean(rho))


@dataclass(frozen=True)
class Pca2:
    """Two-component projection"""

    coordinates: np.ndarray
    explained: np.ndarray
    components: np.ndarray


def pca2(X):
    """Top two principal components of the centered rows.

    Each component is signed so that its largest-magnitude loading is
    positive. A one-column input gets a zero second component.
    """
    x = _rows(X)
    if x.shape[0] < 3:
        raise ValueError("PCA needs at least 3 rows")
    centered = x - x.mean(axis=0)
    _, sigma, vt = np.linalg.svd(centered, full_matrices=False)
    total = np.sum(sigma**2)
    if total == 0:
        raise NumericError("rank-0 input")
    components = np.zeros((2, x.shape[1]))
    explained = np.zeros(2)
    for i in range(min(2, vt.shape[0])):
        component = vt[i]
        if component[np.argmax(np.abs(component))] < 0:
            component = -component
        components[i] = component
        explained[i] = sigma[i] ** 2 / total
    return Pca2(centered @ components.T, explained, components)


def layer_outputs(model, batch):
    """Eval-mode output of every encoder layer"""
    return list(forward(model, batch, mode="eval").outputs)


@dataclass(frozen=True)
class LayerSimilarity:
    """Mean canonical correlation of one layer, flagged when the ridge path was used"""

    similarity: float
    ridge: bool = False


def layer_cca_profile(before, after, probe):
    """CCA similarity of each layer's outputs between two models on a probe set"""
    if not before.same_architecture(after):
        raise ValueError("models differ in architecture")
    features = probe.features if hasattr(probe, "features") else probe
    profile = []
    pairs = zip(layer_outputs(before, features), layer_outputs(after, features))
    for layer, (a, b) in enumerate(pairs):
        rho, ridge = canonical_correlations(a, b)
        if ridge:
            logger.info(
                "layer %d: %d probe rows for %d columns, CCA is ridge-regularized",
                layer,
                a.shape[0],
                a.shape[1],
            )
        profile.append(LayerSimilarity(float(np.mean(rho)), ridge))
    return profile


def encode(model, dataset, layer=None, label=None):
    """Representation set of a dataset: encoder output, or one layer's output"""
    trace = forward(model, dataset.features, mode="eval")
    matrix = trace.encoding if layer is None else trace.outputs[layer]
    return RepresentationSet(
        label=label or dataset.name,
        matrix=matrix,
        ids=tuple(e.id for e in dataset.examples),
        languages=tuple(e.language for e in dataset.examples),
    )


def stack(sets, label):
    """Concatenation of several representation sets"""
    sets = list(sets)
    return RepresentationSet(
        label=label,
        matrix=np.vstack([s.matrix for s in sets]),
        ids=tuple(i for s in sets for i in s.ids),
        languages=tuple(lang for s in sets for lang in s.languages),
    )


def _csv(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def pca_csv(representations, projection):
    """pca.csv text for a representation set and its projection"""
    rows = [
        (ident, language, repr(float(x)), repr(float(y)))
        for ident, language, (x, y) in zip(
            representations.ids, representations.languages, projection.coordinates
        )
    ]
    return _csv(("id", "language", "x", "y"), rows)


def cca_csv(profile):
    """cca.csv text for a list of LayerSimilarity"""
    return _csv(
        ("layer", "similarity", "ridge"),
        [(i, repr(float(p.similarity)), int(p.ridge)) for i, p in enumerate(profile)],
    )


def hausdorff_csv(pairs):
    """hausdorff.csv text for (pair name, distance) items"""
    return _csv(("pair", "distance"), [(name, repr(float(v))) for name, v in pairs])
