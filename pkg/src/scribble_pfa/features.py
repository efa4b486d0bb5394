"""First-layer filter-bank features for the per-image random forest.

A bank is a list of k x k x 3 kernels (k odd, k may differ between filters)
with a scalar bias each. Responses are cross-correlations of the image with
each kernel (the CNN convention), stride 1, mirror padding, no nonlinearity,
followed by per-channel standardization over the image.

Filter-bank files ("FBK1") are little-endian::

    b"FBK1" | u32 D | D x ( u32 k | f32 bias | k*k*3 f32 weights, (row, col, channel) order )
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import gaussian_filter

from .core import PixelGrid, RgbImage, _frozen
from .errors import FormatError, ShapeMismatch

FBK_MAGIC = b"FBK1"
_FFT_CHUNK = 16

# luminance, red-green and blue-yellow opponent projections of RGB
COLOR_PROJECTIONS = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [1 / 2, -1 / 2, 0.0],
        [1 / 4, 1 / 4, -1 / 2],
    ]
)


@dataclass(frozen=True, eq=False)
class Filter:
    kernel: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float32)
        if k.ndim != 3 or k.shape[2] != 3 or k.shape[0] != k.shape[1]:
            raise ShapeMismatch(f"kernel must be k x k x 3, got {k.shape}")
        if k.shape[0] % 2 == 0:
            raise ShapeMismatch(f"kernel side must be odd, got {k.shape[0]}")
        if not np.all(np.isfinite(k)) or not np.isfinite(self.bias):
            raise FormatError("filter weights must be finite")
        object.__setattr__(self, "kernel", _frozen(k))
        object.__setattr__(self, "bias", float(np.float32(self.bias)))

    @property
    def size(self) -> int:
        return self.kernel.shape[0]


@dataclass(frozen=True, eq=False)
class FilterBank:
    filters: tuple

    def __post_init__(self):
        filters = tuple(self.filters)
        if not filters:
            raise FormatError("a filter bank needs at least one filter")
        object.__setattr__(self, "filters", filters)

    def __len__(self):
        return len(self.filters)

    def __eq__(self, other):
        if not isinstance(other, FilterBank) or len(self) != len(other):
            return NotImplemented if not isinstance(other, FilterBank) else False
        return all(
            a.bias == b.bias and np.array_equal(a.kernel, b.kernel)
            for a, b in zip(self.filters, other.filters)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """H x W x D standardized responses."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeMismatch(f"feature stack must be HxWxD, got {v.shape}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def grid(self) -> PixelGrid:
        return PixelGrid(*self.values.shape[:2])

    @property
    def depth(self) -> int:
        return self.values.shape[2]

    def pixel_matrix(self) -> np.ndarray:
        """(H*W) x D matrix, rows in row-major pixel order."""
        return self.values.reshape(-1, self.depth)


def save_filter_bank(path, bank: FilterBank) -> None:
    parts = [FBK_MAGIC, struct.pack("<I", len(bank))]
    for f in bank.filters:
        parts.append(struct.pack("<If", f.size, f.bias))
        parts.append(np.ascontiguousarray(f.kernel, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_filter_bank(path) -> FilterBank:
    data = Path(path).read_bytes()
    if data[:4] != FBK_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", data, 4)
    if count == 0:
        raise FormatError(f"{path}: filter count is zero")
    off = 8
    filters = []
    for i in range(count):
        if off + 8 > len(data):
            raise FormatError(f"{path}: truncated at filter {i}")
        k, bias = struct.unpack_from("<If", data, off)
        off += 8
        if k == 0 or k % 2 == 0:
            raise ShapeMismatch(f"{path}: filter {i} has invalid side {k}")
        n = k * k * 3
        if off + 4 * n > len(data):
            raise FormatError(f"{path}: truncated weights for filter {i}")
        w = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(k, k, 3)
        off += 4 * n
        filters.append(Filter(w.astype(np.float32), bias))
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return FilterBank(tuple(filters))


def _grid(k: int) -> tuple[np.ndarray, np.ndarray]:
    r = k // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    return x, y


def _gaussian(k: int, sigma: float) -> np.ndarray:
    x, y = _grid(k)
    g = np.exp(-(x**2 + y**2) / (2 * sigma**2))
    return g / g.sum()


def _oriented_derivative(k: int, sigma: float, theta: float, order: int) -> np.ndarray:
    x, y = _grid(k)
    u = x * np.cos(theta) + y * np.sin(theta)
    g = np.exp(-(x**2 + y**2) / (2 * sigma**2))
    if order == 1:
        f = -u / sigma**2 * g
    else:
        f = (u**2 / sigma**4 - 1 / sigma**2) * g
    f -= f.mean()
    return f / np.abs(f).sum()


def _center_surround(k: int, s_center: float, s_surround: float) -> np.ndarray:
    f = _gaussian(k, s_center) - _gaussian(k, s_surround)
    f -= f.mean()
    return f / np.abs(f).sum()


def _structured(k: int, spatial: list[np.ndarray]) -> list[Filter]:
    out = []
    for proj in COLOR_PROJECTIONS:
        for s in spatial:
            out.append(Filter(s[:, :, None] * proj[None, None, :]))
    return out


def synthetic_filter_bank(seed: int = 0) -> FilterBank:
    """Deterministic 160-filter stand-in for pretrained first-layer weights.

    64 filters of side 3 and 96 of side 11, mirroring the VGG-16 / AlexNet
    split. Each group holds oriented first and second Gaussian derivatives
    (8 orientations) and blob / center-surround kernels applied to luminance
    and two colour-opponent channels; the seed only drives a handful of
    smooth random colour filters that pad each group to size.
    """
    rng = np.random.default_rng(seed)
    thetas = [np.pi * i / 8 for i in range(8)]

    small = [_oriented_derivative(3, 0.8, t, 1) for t in thetas]
    small += [_oriented_derivative(3, 0.8, t, 2) for t in thetas]
    small += [_gaussian(3, 1.0), _center_surround(3, 0.5, 1.0)]
    group3 = _structured(3, small)
    while len(group3) < 64:
        w = rng.standard_normal((3, 3, 3))
        group3.append(Filter(w / np.abs(w).sum()))

    large = [_oriented_derivative(11, 1.5, t, 1) for t in thetas]
    large += [_oriented_derivative(11, 1.5, t, 2) for t in thetas]
    large += [_oriented_derivative(11, 3.0, t, 1) for t in thetas]
    large += [_gaussian(11, 2.0), _center_surround(11, 1.0, 3.0), _center_surround(11, 2.0, 5.0)]
    group11 = _structured(11, large)
    while len(group11) < 96:
        w = gaussian_filter(rng.standard_normal((11, 11, 3)), sigma=(1.5, 1.5, 0))
        group11.append(Filter(w / np.abs(w).sum()))

    return FilterBank(tuple(group3 + group11))


def filter_responses(img: RgbImage, bank: FilterBank) -> np.ndarray:
    """Raw H x W x D responses (correlation + bias), mirror-padded, unstandardized."""
    pixels = img.pixels
    h, w = pixels.shape[:2]
    out = np.empty((h, w, len(bank)), dtype=np.float64)
    by_size: dict[int, list[int]] = {}
    for i, f in enumerate(bank.filters):
        by_size.setdefault(f.size, []).append(i)

    for k, idxs in sorted(by_size.items()):
        r = k // 2
        # scipy's "mirror" mode: d c b | a b c d | c b a, repeated as needed
        padded = np.pad(pixels, ((r, r), (r, r), (0, 0)), mode="reflect") if r else pixels
        shape = padded.shape[:2]
        img_f = sfft.rfft2(padded, axes=(0, 1))
        for start in range(0, len(idxs), _FFT_CHUNK):
            chunk = idxs[start:start + _FFT_CHUNK]
            kern = np.stack([bank.filters[i].kernel for i in chunk], axis=-1).astype(np.float64)
            kern_f = sfft.rfft2(kern[::-1, ::-1], s=shape, axes=(0, 1))
            prod = np.einsum("abc,abcd->abd", img_f, kern_f)
            full = sfft.irfft2(prod, s=shape, axes=(0, 1))
            resp = full[k - 1:k - 1 + h, k - 1:k - 1 + w, :]
            bias = np.array([bank.filters[i].bias for i in chunk])
            out[:, :, chunk] = resp + bias
    return out


def standardize(responses: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance per channel; constant channels become zeros."""
    flat = responses.reshape(-1, responses.shape[-1])
    mean = flat.mean(axis=0)
    centered = flat - mean
    std = np.sqrt((centered**2).mean(axis=0))
    scale = np.maximum(np.abs(flat).max(axis=0), 1.0)
    degenerate = std <= 1e-9 * scale
    safe = np.where(degenerate, 1.0, std)
    out = centered / safe
    out[:, degenerate] = 0.0
    return out.reshape(responses.shape)


def extract_features(img: RgbImage, bank: FilterBank) -> FeatureStack:
    return FeatureStack(standardize(filter_responses(img, bank)))
