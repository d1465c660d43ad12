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
"""Checkpoint container.

Byte layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"MLCK"
    4       1     format version (1)
    5       4     header length H (u32)
    9       H     header JSON, UTF-8, sorted keys:
                  {"encoder": {...}, "heads": [[tag, classes], ...],
                   "parameters": count}
    9+H     8*P   parameters as float64 in flat order
    end-32  32    SHA-256 of every preceding byte
"""
import hashlib
import json
import struct

import numpy as np

from .model import EncoderConfig, Model

MAGIC = b"MLCK"
VERSION = 1
DIGEST_SIZE = 32
PREFIX = struct.Struct("<4sBI")


class CheckpointError(ValueError):
    """Raised for unreadable, corrupted or mismatched checkpoints"""


def header(model):
    """Header dict describing the model's architecture"""
    return {
        "encoder": model.config.to_dict(),
        "heads": [[tag, classes] for tag, classes in model.heads.items()],
        "parameters": model.parameter_count,
    }


def dumps(model):
    """Serializes a model to bytes"""
    head = json.dumps(header(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = (
        PREFIX.pack(MAGIC, VERSION, len(head))
        + head
        + model.flat.astype("<f8").tobytes()
    )
    return body + hashlib.sha256(body).digest()


def loads(data):
    """Restores a model from bytes, verifying every field"""
    data = bytes(data)
    if len(data) < PREFIX.size + DIGEST_SIZE:
        raise CheckpointError("checkpoint truncated")
    magic, version, head_length = PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version {}".format(version))
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint digest mismatch")
    start = PREFIX.size
    try:
        head = json.loads(body[start : start + head_length].decode("utf-8"))
        config = EncoderConfig.from_dict(head["encoder"])
        heads = [(str(tag), int(classes)) for tag, classes in head["heads"]]
        count = int(head["parameters"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError("bad checkpoint header: {}".format(e)) from e
    payload = body[start + head_length :]
    if len(payload) != 8 * count:
        raise CheckpointError(
            "expected {} parameters, found {} bytes".format(count, len(payload))
        )
    model = Model(config)
    for tag, classes in heads:
        model.register_head(tag, classes)
    if model.parameter_count != count:
        raise CheckpointError("header does not match the architecture")
    return model.load_flat(np.frombuffer(payload, dtype="<f8").astype(np.float64))


def save_checkpoint(model, path):
    """Writes a checkpoint file"""
    with open(path, "wb") as file:
        file.write(dumps(model))


def load_checkpoint(path):
    """Reads a checkpoint file"""
    try:
        with open(path, "rb") as file:
            data = file.read()
    except OSError as e:
        raise CheckpointError("cannot read {}: {}".format(path, e)) from e
    return loads(data)


def check_compatible(model, encoder_config, heads=()):
    """Raises CheckpointError if a loaded model does not match a configuration"""
    ours = model.config
    for name in ("input_dim", "hidden_dim", "num_layers", "activation"):
        if getattr(ours, name) != getattr(encoder_config, name):
            raise CheckpointError(
                "architecture mismatch: {} is {} in the checkpoint, {} in the config".format(
                    name, getattr(ours, name), getattr(encoder_config, name)
                )
            )
    for tag, classes in heads:
        if model.has_head(tag) and model.heads[tag] != classes:
            raise CheckpointError(
                "head {} has {} classes, configuration needs {}".format(
                    tag, model.heads[tag], classes
                )
            )
    return model
