"""Fully connected CRF with Potts label compatibility, mean-field inference.

Pairwise weight between pixels i != j:

    k_ij = w1 * exp(-d_ij^2 / 2 sa^2 - delta_ij^2 / 2 sb^2) + w2 * exp(-d_ij^2 / 2 sg^2)

with d the pixel distance and delta the RGB distance on the 0..255 scale.
Images up to ``exact_max_pixels`` use the dense N x N kernel. Larger ones use
a truncated separable Gaussian for the smoothness part and a sparse
bilateral grid (cells of one standard deviation, 3^5 neighbourhood blur)
for the appearance part; that path is an approximation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.ndimage import correlate1d

from ..core import ProbabilityMap, RgbImage, SoftMask
from ..errors import InstanceTooLarge
from .common import UNARY_FLOOR, EnergyReport, onehot, unary

EXACT_MAX_PIXELS = 64 * 64


@dataclass(frozen=True)
class DenseCrfParams:
    w1: float = 3.0
    sigma_alpha: float = 30.0
    sigma_beta: float = 5.0
    w2: float = 5.0
    sigma_gamma: float = 2.0
    n_iters: int = 10
    tol: float = 0.0
    exact_max_pixels: int = EXACT_MAX_PIXELS
    eps: float = UNARY_FLOOR

    def __post_init__(self):
        for name in ("w1", "w2", "sigma_alpha", "sigma_beta", "sigma_gamma"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite")
        if min(self.sigma_alpha, self.sigma_beta, self.sigma_gamma) <= 0:
            raise ValueError("kernel standard deviations must be positive")
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")


def _positions_colors(img: RgbImage):
    h, w = img.grid.shape
    rows, cols = np.mgrid[0:h, 0:w]
    pos = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    rgb = img.pixels.reshape(-1, 3) * 255.0
    return pos, rgb


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def dense_kernel(img: RgbImage, params: DenseCrfParams, block: int = 256) -> np.ndarray:
    """Full N x N pairwise weight matrix with a zero diagonal."""
    pos, rgb = _positions_colors(img)
    n = pos.shape[0]
    k = np.empty((n, n))
    for s in range(0, n, block):
        e = min(n, s + block)
        d2 = _sq_dists(pos[s:e], pos)
        c2 = _sq_dists(rgb[s:e], rgb)
        rows = params.w1 * np.exp(-d2 / (2 * params.sigma_alpha**2) - c2 / (2 * params.sigma_beta**2))
        rows += params.w2 * np.exp(-d2 / (2 * params.sigma_gamma**2))
        k[s:e] = rows
    np.fill_diagonal(k, 0.0)
    return k


class _ExactMessages:
    def __init__(self, img, params):
        self.kernel = dense_kernel(img, params)

    def __call__(self, q_flat):
        return self.kernel @ q_flat


class _ApproxMessages:
    def __init__(self, img: RgbImage, params: DenseCrfParams):
        self.shape = img.grid.shape
        self.params = params
        r = int(math.ceil(3 * params.sigma_gamma))
        x = np.arange(-r, r + 1, dtype=np.float64)
        self.taps = np.exp(-(x**2) / (2 * params.sigma_gamma**2))

        pos, rgb = _positions_colors(img)
        coords = np.hstack([pos / params.sigma_alpha, rgb / params.sigma_beta])
        cells = np.rint(coords).astype(np.int64)
        keys, inverse = np.unique(cells, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        n, m = cells.shape[0], keys.shape[0]
        self.splat = sparse.csr_matrix((np.ones(n), (inverse, np.arange(n))), shape=(m, n))

        lo = keys.min(axis=0) - 1
        span = keys.max(axis=0) - lo + 2
        strides = np.cumprod(np.concatenate([[1], span[:-1]]))
        codes = (keys - lo) @ strides
        order = np.argsort(codes)
        sorted_codes = codes[order]
        rows, cols, vals = [], [], []
        for off in itertools.product((-1, 0, 1), repeat=5):
            off = np.array(off)
            target = (keys + off - lo) @ strides
            pos_ = np.searchsorted(sorted_codes, target)
            pos_ = np.minimum(pos_, m - 1)
            hit = sorted_codes[pos_] == target
            rows.append(np.flatnonzero(hit))
            cols.append(order[pos_[hit]])
            vals.append(np.full(hit.sum(), math.exp(-0.5 * float(off @ off))))
        self.blur = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
        )

    def __call__(self, q_flat):
        p = self.params
        h, w = self.shape
        q = q_flat.reshape(h, w, -1)
        smooth = correlate1d(q, self.taps, axis=0, mode="constant")
        smooth = correlate1d(smooth, self.taps, axis=1, mode="constant")
        smooth = smooth.reshape(q_flat.shape) - q_flat
        grid = self.blur @ (self.splat @ q_flat)
        appearance = self.splat.T @ grid - q_flat
        return p.w1 * appearance + p.w2 * smooth


def _message_operator(img: RgbImage, params: DenseCrfParams):
    if img.grid.size <= params.exact_max_pixels:
        return _ExactMessages(img, params)
    return _ApproxMessages(img, params)


def mean_field_update(q_flat: np.ndarray, u_flat: np.ndarray, messages) -> np.ndarray:
    """One synchronous update: Q_i(c) ~ exp(-u_i(c) - sum_{c' != c} m_i(c'))."""
    m = messages(q_flat)
    logits = -u_flat - (m.sum(axis=1, keepdims=True) - m)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _pairwise_of_labels(labels_flat, num_classes, messages) -> float:
    lab = onehot(labels_flat, num_classes)
    m = messages(lab)
    # each unordered pair with differing labels appears twice in the double sum
    return 0.5 * float(np.sum(lab * (m.sum(axis=1, keepdims=True) - m)))


def crf_mean_field(
    p: ProbabilityMap,
    img: RgbImage,
    params: DenseCrfParams = DenseCrfParams(),
    init: Optional[SoftMask] = None,
):
    """Run mean-field from Q = P (or ``init``). Returns (SoftMask, EnergyReport).

    Stops after ``n_iters`` updates, or earlier once the largest change
    between successive iterates falls below ``tol`` (when tol > 0). The
    report holds the energy of the rounded labeling.
    """
    p.grid.check_same(img.grid, "image")
    C = p.classes.num_classes
    h, w = p.grid.shape
    u = unary(p, params.eps).reshape(-1, C)
    messages = _message_operator(img, params)

    if init is not None:
        p.grid.check_same(init.grid, "initial mask")
        q = np.array(init.mask, dtype=np.float64).reshape(-1, C)
    else:
        q = np.array(p.probs, dtype=np.float64).reshape(-1, C)

    it = 0
    converged = False
    if params.w1 == 0 and params.w2 == 0 and init is None:
        # no pairwise term: P itself is the fixed point
        it, converged = params.n_iters, True
    else:
        for _ in range(params.n_iters):
            q_new = mean_field_update(q, u, messages)
            it += 1
            change = float(np.max(np.abs(q_new - q)))
            q = q_new
            if params.tol > 0 and change < params.tol:
                converged = True
                break

    labels = np.argmax(q, axis=1)
    data = float(np.sum(u[np.arange(labels.size), labels]))
    reg = _pairwise_of_labels(labels, C, messages)
    report = EnergyReport(data, reg, data + reg, it, converged)
    return SoftMask(q.reshape(h, w, C), p.classes), report


def crf_energy(
    q: SoftMask,
    p: ProbabilityMap,
    img: RgbImage,
    params: DenseCrfParams = DenseCrfParams(),
    max_pixels: int = 4096,
) -> float:
    """Exact energy of the rounded labeling of ``q``: data term plus the kernel
    weight of every unordered pixel pair whose labels differ. O(N^2)."""
    n = q.grid.size
    if n > max_pixels:
        raise InstanceTooLarge(f"{n} pixels exceeds the exact evaluation cap of {max_pixels}")
    p.grid.check_same(q.grid, "soft mask")
    p.grid.check_same(img.grid, "image")
    C = p.classes.num_classes
    labels = np.argmax(q.mask, axis=-1).ravel()
    u = unary(p, params.eps).reshape(-1, C)
    data = float(np.sum(u[np.arange(n), labels]))
    k = dense_kernel(img, params)
    differ = labels[:, None] != labels[None, :]
    return data + 0.5 * float(np.sum(k[differ]))
