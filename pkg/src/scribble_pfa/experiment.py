"""End-to-end PFA experiments on in-memory scenes.

Used by the acceptance checks and handy for quick parameter studies: train
the local forest per scene once, then score any (variant, regularizer)
combination by dataset-level mIoU against the ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .core import ProbabilityMap
from .evaluation import ConfusionMatrix, accumulate_confusion, miou
from .features import FilterBank, extract_features, synthetic_filter_bank
from .fusion import run_variant
from .local_pam import ForestConfig, predict_local, select_and_retrain
from .regularizers import PottsParams
from .synthetic import Scene


@dataclass(frozen=True)
class PreparedScene:
    scene: Scene
    p_local: ProbabilityMap


def prepare(scenes: Iterable[Scene], cfg: ForestConfig, bank: Optional[FilterBank] = None) -> list[PreparedScene]:
    bank = bank if bank is not None else synthetic_filter_bank(0)
    out = []
    for sc in scenes:
        fs = extract_features(sc.image, bank)
        n_sel = min(cfg.n_selected_features, fs.depth)
        forest = select_and_retrain(fs, sc.scribbles, _with_selected(cfg, n_sel))
        out.append(PreparedScene(sc, predict_local(forest, fs)))
    return out


def _with_selected(cfg: ForestConfig, n: int) -> ForestConfig:
    if n == cfg.n_selected_features:
        return cfg
    return ForestConfig(cfg.n_trees, n, cfg.max_features_per_split, cfg.min_leaf, cfg.seed)


def score(
    prepared: Sequence[PreparedScene],
    variant: str,
    regularizer: str = "none",
    params=None,
    w_local: float = 0.5,
) -> float:
    """Dataset-level PFA mIoU of one variant."""
    acc: Optional[ConfusionMatrix] = None
    for ps in prepared:
        sc = ps.scene
        res = run_variant(ps.p_local, sc.global_probs, variant, regularizer, sc.image, params, w_local)
        acc = accumulate_confusion(res.labels, sc.ground_truth, acc)
    return miou(acc).miou


def grid_search_lambda(
    prepared: Sequence[PreparedScene],
    grid: Sequence[float],
    variant: str = "combined",
    eta: float = 0.01,
) -> tuple[float, dict]:
    """Pick the Potts weight with the highest PFA mIoU; ties go to the smaller weight."""
    scores = {lam: score(prepared, variant, "potts", PottsParams(lam=lam, eta=eta)) for lam in grid}
    best = max(sorted(grid), key=lambda lam: (scores[lam], -lam))
    return best, scores
