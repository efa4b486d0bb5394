"""Potts MAP labeling as a convex relaxation with edge-weighted total variation.

Minimizes, over soft masks M with every pixel on the simplex,

    sum_i <u_i, M_i> + lam * sum_c sum_i g_i |grad M_c|_i

with u = -log max(P, eps), by the first-order primal-dual iteration of
Chambolle and Pock: dual ascent on per-class gradient fields projected onto
balls of radius lam * g_i, primal descent with a per-pixel simplex
projection, extrapolation theta = 1.

The relaxed minimizer can be fractional, and its per-pixel argmax is then
not necessarily a good labeling. By default the solver therefore rounds:
besides the argmax it draws a few seeded coarea-style threshold roundings
(pick a class k and a level t, give every still unassigned pixel with
M_k > t the label k, repeat) and returns the one-hot mask of the candidate
with the lowest energy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import ProbabilityMap, RgbImage, SoftMask
from .common import UNARY_FLOOR, EnergyReport, project_simplex, unary

LUMA = np.array([0.299, 0.587, 0.114])
GRAD_NORM_SQ = 8.0
_STEP = 1.0 / math.sqrt(GRAD_NORM_SQ)
DEFAULT_LAMBDA = {"global": 50.0, "local": 10.0, "combined": 10.0}


@dataclass(frozen=True)
class PottsParams:
    """``lam=None`` picks 50 for global-only maps and 10 otherwise."""

    lam: Optional[float] = None
    eta: float = 0.01
    max_iters: int = 500
    tol: float = 1e-4
    step_primal: float = _STEP
    step_dual: float = _STEP
    check_every: int = 10
    eps: float = UNARY_FLOOR
    rounding: str = "threshold"  # or "none": return the relaxed mask itself
    n_roundings: int = 16
    rounding_seed: int = 0

    def __post_init__(self):
        if self.lam is not None and not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be finite and >= 0")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError("eta must be finite and >= 0")
        if self.step_primal <= 0 or self.step_dual <= 0:
            raise ValueError("step sizes must be positive")
        if self.step_primal * self.step_dual * GRAD_NORM_SQ > 1.0 + 1e-12:
            raise ValueError("step sizes violate tau * sigma * 8 <= 1")
        if self.max_iters < 0 or self.check_every < 1:
            raise ValueError("max_iters must be >= 0 and check_every >= 1")
        if self.rounding not in ("threshold", "none"):
            raise ValueError("rounding must be 'threshold' or 'none'")
        if self.n_roundings < 0:
            raise ValueError("n_roundings must be >= 0")

    def resolve_lambda(self, source: Optional[str]) -> float:
        if self.lam is not None:
            return float(self.lam)
        return DEFAULT_LAMBDA.get(source, 10.0)


def grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along rows and columns, zero on the far border."""
    gy = np.zeros_like(u)
    gx = np.zeros_like(u)
    gy[:-1] = u[1:] - u[:-1]
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    return gy, gx


def div(py: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad`."""
    d = np.zeros_like(py)
    d[:-1] += py[:-1]
    d[1:] -= py[:-1]
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    return d


def edge_weights(img: RgbImage, eta: float) -> np.ndarray:
    """g_i = exp(-eta |grad I|_i) on luminance scaled to [0, 255]."""
    lum = 255.0 * (img.pixels @ LUMA)
    gy, gx = grad(lum)
    return np.exp(-eta * np.sqrt(gy**2 + gx**2))


def tv_energy(mask: np.ndarray, g: np.ndarray, lam: float) -> float:
    gy, gx = grad(mask)
    return float(lam * np.sum(g[..., None] * np.sqrt(gy**2 + gx**2)))


def _project_balls(py, px, radius):
    norm = np.sqrt(py**2 + px**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > radius, radius / norm, 1.0)
    scale = np.nan_to_num(scale, nan=0.0)
    return py * scale, px * scale


def threshold_round(mask: np.ndarray, rng: np.random.Generator, max_rounds: Optional[int] = None) -> np.ndarray:
    """One coarea-style rounding of a soft mask to labels.

    Repeatedly draws a class k and a level t in [0, 1) and labels every still
    unassigned pixel with mask_k > t as k. Pixels left after ``max_rounds``
    draws (default 100 * C) fall back to their argmax.
    """
    C = mask.shape[-1]
    labels = np.full(mask.shape[:-1], -1, dtype=np.int64)
    for _ in range(max_rounds if max_rounds is not None else 100 * C):
        free = labels < 0
        if not free.any():
            break
        k = int(rng.integers(C))
        labels[free & (mask[..., k] > rng.random())] = k
    left = labels < 0
    labels[left] = np.argmax(mask, axis=-1)[left]
    return labels


def potts_map(p: ProbabilityMap, img: RgbImage, params: PottsParams = PottsParams()):
    """Relaxed Potts MAP. Returns (SoftMask, EnergyReport).

    The solver starts from the one-hot argmax of P and keeps the mask with
    the lowest primal energy among those checked (every ``check_every``
    iterations). It stops early once the primal-dual gap divided by
    max(1, |primal|) drops below ``tol``; hitting ``max_iters`` is not an
    error. With ``rounding="threshold"`` the returned mask is the one-hot
    labeling of lowest energy among the argmax of the relaxed mask, the
    initial labeling and ``n_roundings`` threshold roundings. The report's
    ``lower_bound`` is the best dual value seen.
    """
    p.grid.check_same(img.grid, "image")
    lam = params.resolve_lambda(p.source)
    g = edge_weights(img, params.eta)
    u = unary(p, params.eps)
    C = p.classes.num_classes
    radius = (lam * g)[..., None]

    m = np.eye(C)[np.argmax(p.probs, axis=-1)]
    m_bar = m.copy()
    py = np.zeros_like(m)
    px = np.zeros_like(m)
    tau, sigma = params.step_primal, params.step_dual

    def primal(mask):
        return float(np.sum(u * mask)), tv_energy(mask, g, lam)

    best = m
    best_data, best_reg = primal(m)
    init = m
    lower = -np.inf
    converged = False
    it = 0
    while it < params.max_iters:
        it += 1
        gy, gx = grad(m_bar)
        py, px = _project_balls(py + sigma * gy, px + sigma * gx, radius)
        m_new = project_simplex(m + tau * (div(py, px) - u))
        m_bar = 2.0 * m_new - m
        m = m_new
        if it % params.check_every == 0 or it == params.max_iters:
            d, r = primal(m)
            if d + r < best_data + best_reg:
                best, best_data, best_reg = m, d, r
            dual = float(np.sum(np.min(u - div(py, px), axis=-1)))
            lower = max(lower, dual)
            gap = (d + r) - dual
            if gap / max(1.0, abs(d + r)) < params.tol:
                converged = True
                break

    bound = float(lower) if np.isfinite(lower) else None
    if params.rounding == "threshold":
        rng = np.random.default_rng(params.rounding_seed)
        eye = np.eye(C)
        candidates = [eye[np.argmax(best, axis=-1)], init]
        candidates += [eye[threshold_round(best, rng)] for _ in range(params.n_roundings)]
        scored = [primal(c) for c in candidates]
        i = min(range(len(candidates)), key=lambda j: sum(scored[j]))  # first of equals wins
        best, (best_data, best_reg) = candidates[i], scored[i]

    report = EnergyReport(best_data, best_reg, best_data + best_reg, it, converged, bound)
    return SoftMask(best, p.classes), report
