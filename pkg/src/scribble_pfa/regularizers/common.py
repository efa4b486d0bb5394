from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from ..core import ProbabilityMap, SoftMask
from ..errors import ClassSetMismatch

UNARY_FLOOR = 1e-9


@dataclass(frozen=True)
class EnergyReport:
    data_term: float
    reg_term: float
    total: float
    iterations_run: int
    converged: bool = False
    lower_bound: Optional[float] = None  # certified bound on the relaxed optimum, when known

    def to_dict(self) -> dict:
        return asdict(self)


def unary(p: ProbabilityMap, eps: float = UNARY_FLOOR) -> np.ndarray:
    """-log of the floored probabilities, H x W x C."""
    return -np.log(np.maximum(p.probs, eps))


def data_energy(p: ProbabilityMap, m: SoftMask, eps: float = UNARY_FLOOR) -> float:
    """Sum over pixels of <-log max(P_i, eps), M_i>."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    p.grid.check_same(m.grid, "soft mask")
    if p.classes.num_classes != m.classes.num_classes:
        raise ClassSetMismatch("probability map and mask disagree on the class count")
    return float(np.sum(unary(p, eps) * m.mask))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row (last axis) onto the probability simplex.

    Sorting-based algorithm of Duchi et al. (2008), vectorized over rows.
    """
    shape = v.shape
    flat = v.reshape(-1, shape[-1])
    n = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = cond.sum(axis=1) - 1
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    return np.maximum(flat - theta[:, None], 0.0).reshape(shape)


def onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[labels]
