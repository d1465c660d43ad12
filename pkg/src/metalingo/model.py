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
"""Fully connected encoder with per-task linear heads and exact backpropagation.

Flat parameter ordering (stable across save/load):

1. encoder layers 0..L-1, each as weight (fan_in x hidden_dim, row-major)
   followed by bias (hidden_dim);
2. heads in registration order, each as weight (hidden_dim x classes,
   row-major) followed by bias (classes).

Every parameter lives in one contiguous float64 vector; the per-layer
arrays handed out by :class:`Model` are reshaped views into it.
"""
import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import Rng, as_matrix, batch_cross_entropy, ensure_finite

ACTIVATIONS = ("tanh", "relu")
MODES = ("train", "eval")
ENCODER = "encoder"

# Parameter versions are unique across all models so a trace can never be
# replayed against a different parameter set by accident.
_VERSIONS = itertools.count(1)


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the encoder"""

    input_dim: int
    hidden_dim: int = 32
    num_layers: int = 4
    activation: str = "tanh"
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be at least 1")
        if self.num_layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation: {}".format(self.activation))
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    def to_dict(self):
        """Plain dict for headers and configs"""
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Inverse of to_dict"""
        return cls(**data)


@dataclass(frozen=True)
class Slot:
    """Location of one parameter array inside the flat vector"""

    name: str
    group: str
    offset: int
    shape: tuple

    @property
    def size(self):
        """Number of scalars in the slot"""
        return int(np.prod(self.shape))

    @property
    def span(self):
        """Slice of the flat vector covered by the slot"""
        return slice(self.offset, self.offset + self.size)


class Model:
    """Encoder parameters plus a registry of task heads over one flat vector"""

    def __init__(self, config, rng=None):
        self.config = config
        self.heads = {}
        self.slots = []
        self.flat = np.zeros(0)
        self.version = next(_VERSIONS)
        rng = rng or Rng(config.seed).child(ENCODER)
        fan_in = config.input_dim
        for layer in range(config.num_layers):
            bound = np.sqrt(6.0 / (fan_in + config.hidden_dim))
            weight = rng.uniform(-bound, bound, (fan_in, config.hidden_dim))
            self._append("layer%d.weight" % layer, ENCODER, weight)
            self._append(
                "layer%d.bias" % layer, ENCODER, np.zeros(config.hidden_dim)
            )
            fan_in = config.hidden_dim

    def _append(self, name, group, values):
        slot = Slot(name, group, self.flat.size, tuple(values.shape))
        self.slots.append(slot)
        self.flat = np.concatenate([self.flat, np.ravel(values)])
        self.version = next(_VERSIONS)

    def slot(self, name):
        """Slot metadata for a parameter array name"""
        for slot in self.slots:
            if slot.name == name:
                return slot
        raise KeyError(name)

    def _view(self, name):
        slot = self.slot(name)
        return self.flat[slot.span].reshape(slot.shape)

    @property
    def parameter_count(self):
        """Length of the flat parameter vector"""
        return self.flat.size

    def weight(self, layer):
        """Weight matrix of an encoder layer (view)"""
        return self._view("layer%d.weight" % layer)

    def bias(self, layer):
        """Bias of an encoder layer (view)"""
        return self._view("layer%d.bias" % layer)

    def head_weight(self, tag):
        """Weight matrix of a task head (view)"""
        return self._view("head:%s.weight" % tag)

    def head_bias(self, tag):
        """Bias of a task head (view)"""
        return self._view("head:%s.bias" % tag)

    def has_head(self, tag):
        """Whether a head is registered for the task tag"""
        return tag in self.heads

    def register_head(self, tag, num_classes, rng=None):
        """Adds a linear head initialised from U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
        if tag in self.heads:
            raise ValueError("head already registered: {}".format(tag))
        if num_classes < 1:
            raise ValueError("a head needs at least one class")
        rng = rng or Rng(self.config.seed).child("head:" + tag)
        bound = 1.0 / np.sqrt(self.config.hidden_dim)
        weight = rng.uniform(-bound, bound, (self.config.hidden_dim, num_classes))
        bias = rng.uniform(-bound, bound, num_classes)
        self._append("head:%s.weight" % tag, tag, weight)
        self._append("head:%s.bias" % tag, tag, bias)
        self.heads[tag] = num_classes
        return self

    def parameter_indices(self, head=None):
        """Flat indices of the encoder plus, optionally, one head"""
        groups = {ENCODER} if head is None else {ENCODER, head}
        if head is not None and head not in self.heads:
            raise ValueError("unknown head: {}".format(head))
        spans = [
            np.arange(s.offset, s.offset + s.size)
            for s in self.slots
            if s.group in groups
        ]
        return np.concatenate(spans)

    def flatten(self):
        """Copy of the flat parameter vector"""
        return self.flat.copy()

    def load_flat(self, vector):
        """Overwrites all parameters in place"""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != self.flat.shape:
            raise ValueError(
                "expected {} parameters, got {}".format(self.flat.size, vector.size)
            )
        ensure_finite(vector, "parameters")
        self.flat = vector.copy()
        self.version = next(_VERSIONS)
        return self

    def unflatten(self, vector):
        """New model with this architecture and the given parameters"""
        return self.copy().load_flat(vector)

    def copy(self):
        """Independent deep copy"""
        clone = Model.__new__(Model)
        clone.config = self.config
        clone.heads = dict(self.heads)
        clone.slots = list(self.slots)
        clone.flat = self.flat.copy()
        clone.version = self.version
        return clone

    def same_architecture(self, other):
        """True if both models share encoder config and head layout"""
        return (
            self.config.input_dim == other.config.input_dim
            and self.config.hidden_dim == other.config.hidden_dim
            and self.config.num_layers == other.config.num_layers
            and self.config.activation == other.config.activation
            and self.heads == other.heads
        )


@dataclass(frozen=True)
class ForwardTrace:
    """Everything backward needs, captured by one forward pass"""

    inputs: np.ndarray
    pre_activations: tuple
    activations: tuple
    outputs: tuple
    masks: tuple
    logits: dict
    mode: str
    model_version: int
    parameter_count: int

    @property
    def encoding(self):
        """Final encoder output f_theta(x)"""
        return self.outputs[-1]

    @property
    def num_layers(self):
        """Number of captured layers"""
        return len(self.activations)


def batch_features(batch):
    """Feature matrix of a batch given as an array or a sequence of examples"""
    if isinstance(batch, np.ndarray):
        return as_matrix(batch, "batch")
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    return as_matrix(np.stack([example.features for example in batch]), "batch")


def _requested_heads(model, head):
    if head is None:
        return ()
    tags = (head,) if isinstance(head, str) else tuple(head)
    for tag in tags:
        if tag not in model.heads:
            raise ValueError("unknown head: {}".format(tag))
    return tags


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def forward(model, batch, head=None, mode="eval", rng=None, masks=None):
    """Runs the encoder (and the requested heads) on a batch.

    Train mode applies inverted dropout after every layer, drawing masks
    from ``rng`` unless ``masks`` from an earlier trace are replayed. Eval
    mode applies no dropout and draws nothing.
    """
    if mode not in MODES:
        raise ValueError("unknown mode: {}".format(mode))
    inputs = batch_features(batch)
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    config = model.config
    if inputs.shape[1] != config.input_dim:
        raise ValueError(
            "feature dimension {} does not match encoder input {}".format(
                inputs.shape[1], config.input_dim
            )
        )
    tags = _requested_heads(model, head)
    dropout = mode == "train" and (config.dropout_rate > 0 or masks is not None)
    if dropout and masks is None and rng is None:
        raise ValueError("train mode with dropout needs an rng")

    keep = 1.0 - config.dropout_rate
    pre_activations, activations, outputs, used_masks = [], [], [], []
    hidden = inputs
    for layer in range(config.num_layers):
        z = hidden @ model.weight(layer) + model.bias(layer)
        a = _activate(config.activation, z)
        mask = None
        if dropout:
            if masks is not None:
                mask = masks[layer]
            else:
                mask = (rng.uniform(size=a.shape) < keep) / keep
            hidden = a * mask
        else:
            hidden = a
        pre_activations.append(z)
        activations.append(a)
        outputs.append(hidden)
        used_masks.append(mask)

    logits = {tag: hidden @ model.head_weight(tag) + model.head_bias(tag) for tag in tags}
    for tag, values in logits.items():
        ensure_finite(values, "logits of head " + tag)
    return ForwardTrace(
        inputs=inputs,
        pre_activations=tuple(pre_activations),
        activations=tuple(activations),
        outputs=tuple(outputs),
        masks=tuple(used_masks),
        logits=logits,
        mode=mode,
        model_version=model.version,
        parameter_count=model.parameter_count,
    )


def backward(model, trace, logits_grad=None, encoding_grad=None):
    """Gradient of a loss w.r.t. the flat parameter vector.

    ``logits_grad`` maps head tags to dL/dlogits; ``encoding_grad`` is
    dL/d(encoding). Either or both may be given.
    """
    if (
        trace.model_version != model.version
        or trace.parameter_count != model.parameter_count
    ):
        raise ValueError("trace was produced by a different parameter version")
    grad = np.zeros(model.parameter_count)
    encoding = trace.encoding
    upstream = np.zeros_like(encoding)
    if encoding_grad is not None:
        encoding_grad = np.asarray(encoding_grad, dtype=np.float64)
        if encoding_grad.shape != encoding.shape:
            raise ValueError("encoding gradient has the wrong shape")
        upstream = upstream + encoding_grad
    for tag, g in (logits_grad or {}).items():
        if tag not in trace.logits:
            raise ValueError("no logits recorded for head {}".format(tag))
        g = np.asarray(g, dtype=np.float64)
        grad[model.slot("head:%s.weight" % tag).span] = (encoding.T @ g).ravel()
        grad[model.slot("head:%s.bias" % tag).span] = g.sum(axis=0)
        upstream = upstream + g @ model.head_weight(tag).T

    activation = model.config.activation
    for layer in reversed(range(trace.num_layers)):
        mask = trace.masks[layer]
        d_act = upstream if mask is None else upstream * mask
        if activation == "tanh":
            d_z = d_act * (1.0 - trace.activations[layer] ** 2)
        else:
            d_z = d_act * (trace.pre_activations[layer] > 0)
        below = trace.inputs if layer == 0 else trace.outputs[layer - 1]
        grad[model.slot("layer%d.weight" % layer).span] = (below.T @ d_z).ravel()
        grad[model.slot("layer%d.bias" % layer).span] = d_z.sum(axis=0)
        if layer > 0:
            upstream = d_z @ model.weight(layer).T
    return ensure_finite(grad, "gradient")


def register_head(model, tag, num_classes, rng=None):
    """Registers a task head on the model and returns it"""
    return model.register_head(tag, num_classes, rng)


def head_loss(model, batch, labels, tag, mode="eval", rng=None):
    """Mean cross-entropy of one head on a batch, with its flat gradient"""
    trace = forward(model, batch, head=tag, mode=mode, rng=rng)
    loss, g = batch_cross_entropy(trace.logits[tag], labels)
    return loss, backward(model, trace, logits_grad={tag: g})


def encode(model, batch):
    """Eval-mode encodings of a batch"""
    return forward(model, batch, mode="eval").encoding
