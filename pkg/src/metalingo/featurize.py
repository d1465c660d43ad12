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
"""Bag of signed hashed tokens for text pairs.

Tokens are Unicode word runs (``\\w+``), lower-cased. A token lands in
bucket ``crc32(token) mod dim`` with sign +1 when bit 31 of the CRC is
clear and -1 otherwise; the bag is the mean over tokens. A pair is the
concatenation of both bags, so its width is ``2 * dim``.
"""
import binascii
import re

import numpy as np

DEFAULT_DIM = 256
SIGN_BIT = 1 << 31

TOKEN_PATTERN = re.compile(r"\w+", re.UNICODE)


def tokenize(text):
    """Lower-cased word tokens of a text"""
    return [token.lower() for token in TOKEN_PATTERN.findall(text)]


def bag_of_tokens(text, dim=DEFAULT_DIM):
    """Mean-pooled signed hash vector of a text; all zeros if it has no tokens"""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    bag = np.zeros(dim)
    tokens = tokenize(text)
    for token in tokens:
        crc = binascii.crc32(token.encode("utf-8"))
        bag[crc % dim] += -1.0 if crc & SIGN_BIT else 1.0
    if tokens:
        bag /= len(tokens)
    return bag


def featurize_pair(premise, hypothesis, dim=DEFAULT_DIM):
    """Feature vector of a premise/hypothesis pair, width 2 * dim"""
    return np.concatenate([bag_of_tokens(premise, dim), bag_of_tokens(hypothesis, dim)])
