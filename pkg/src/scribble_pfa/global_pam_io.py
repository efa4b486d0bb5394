"""Externally produced class-probability maps ("PAM1" files).

Layout, little-endian::

    b"PAM1" | u32 H | u32 W | u32 C | H*W*C f32, row-major pixels, class innermost
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import UNLABELED, ClassSet, LabelMap, PixelGrid, ProbabilityMap, validate_probability_map
from .errors import ClassSetMismatch, FormatError, GridMismatch, UnlabeledPixel

PAM_MAGIC = b"PAM1"
_HEADER = struct.Struct("<4sIII")


def read_prob_file(path) -> np.ndarray:
    """Raw H x W x C float32 payload, without normalization."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, h, w, c = _HEADER.unpack_from(data)
    if magic != PAM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * h * w * c
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data) - _HEADER.size} bytes, expected {expected - _HEADER.size}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, c).astype(np.float32)


def write_prob_file(path, probs) -> None:
    arr = np.ascontiguousarray(np.asarray(probs), dtype="<f4")
    if arr.ndim != 3:
        raise FormatError(f"expected an HxWxC array, got shape {arr.shape}")
    h, w, c = arr.shape
    Path(path).write_bytes(_HEADER.pack(PAM_MAGIC, h, w, c) + arr.tobytes())


def save_probability_map(path, p: ProbabilityMap) -> None:
    write_prob_file(path, p.probs)


def load_global_probs(path, grid: PixelGrid, classes: ClassSet, source: str = "global") -> ProbabilityMap:
    raw = read_prob_file(path)
    h, w, c = raw.shape
    if (h, w) != grid.shape:
        raise GridMismatch(f"{path}: map is {h}x{w}, image is {grid.height}x{grid.width}")
    if c != classes.num_classes:
        raise ClassSetMismatch(f"{path}: map has {c} classes, expected {classes.num_classes}")
    return validate_probability_map(ProbabilityMap(raw.astype(np.float64), classes, source))


def labelmap_to_onehot(lm: LabelMap, smoothing: float = 0.0) -> ProbabilityMap:
    """Turn a hard labeling into a (label-smoothed) probability map.

    A pixel labeled c gets 1 - smoothing on c and smoothing / (C - 1) on every
    other class. UNLABELED pixels become uniform, which requires smoothing > 0.
    """
    if not 0.0 <= smoothing <= 1.0:
        raise ValueError("smoothing must lie in [0, 1]")
    C = lm.classes.num_classes
    labels = lm.labels
    unlabeled = labels == UNLABELED
    if smoothing == 0.0 and unlabeled.any():
        raise UnlabeledPixel("UNLABELED pixels need smoothing > 0")
    probs = np.full(labels.shape + (C,), smoothing / (C - 1))
    r, c = np.nonzero(~unlabeled)
    probs[r, c, labels[r, c]] = 1.0 - smoothing
    probs[unlabeled] = 1.0 / C
    return ProbabilityMap(probs, lm.classes, source=None)
