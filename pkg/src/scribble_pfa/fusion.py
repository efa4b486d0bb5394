"""Averaging local and global predictions and turning soft maps into labelings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import LabelMap, ProbabilityMap, RgbImage, SoftMask, validate_probability_map
from .errors import ClassSetMismatch

VARIANTS = ("local", "global", "combined")
REGULARIZERS = ("none", "potts", "crf")


def combine(p_local: ProbabilityMap, p_global: ProbabilityMap, w_local: float = 0.5) -> ProbabilityMap:
    """Pixelwise convex combination ``w_local * local + (1 - w_local) * global``."""
    if not 0.0 <= w_local <= 1.0:
        raise ValueError("w_local must lie in [0, 1]")
    p_local.grid.check_same(p_global.grid, "global probability map")
    if p_local.classes.num_classes != p_global.classes.num_classes:
        raise ClassSetMismatch(
            f"{p_local.classes.num_classes} local vs {p_global.classes.num_classes} global classes"
        )
    # boundary weights pass the input through bit for bit
    if w_local == 0.0:
        return ProbabilityMap(p_global.probs, p_global.classes, source="combined")
    if w_local == 1.0:
        return ProbabilityMap(p_local.probs, p_local.classes, source="combined")
    probs = w_local * p_local.probs + (1.0 - w_local) * p_global.probs
    return validate_probability_map(ProbabilityMap(probs, p_local.classes, source="combined"))


def extract_pfa(s: Union[SoftMask, ProbabilityMap]) -> LabelMap:
    """Per-pixel argmax; ties go to the smallest class index."""
    arr = s.mask if isinstance(s, SoftMask) else s.probs
    # np.argmax returns the first maximal index
    return LabelMap(np.argmax(arr, axis=-1).astype(np.uint8), s.classes)


@dataclass(frozen=True)
class VariantResult:
    labels: LabelMap
    probs: ProbabilityMap
    soft: Optional[SoftMask] = None
    report: Optional[object] = None


def select_input(
    variant: str,
    p_local: Optional[ProbabilityMap],
    p_global: Optional[ProbabilityMap],
    w_local: float = 0.5,
) -> ProbabilityMap:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant in ("local", "combined") and p_local is None:
        raise ValueError(f"variant {variant!r} needs a local probability map")
    if variant in ("global", "combined") and p_global is None:
        raise ValueError(f"variant {variant!r} needs a global probability map")
    if variant == "local":
        return p_local.with_source("local")
    if variant == "global":
        return p_global.with_source("global")
    return combine(p_local, p_global, w_local)


def run_variant(
    p_local: Optional[ProbabilityMap],
    p_global: Optional[ProbabilityMap],
    variant: str = "combined",
    regularizer: str = "none",
    image: Optional[RgbImage] = None,
    params=None,
    w_local: float = 0.5,
) -> VariantResult:
    """Build the requested PFA and keep the intermediate soft output and energy."""
    from .regularizers import DenseCrfParams, PottsParams, crf_mean_field, potts_map

    p = select_input(variant, p_local, p_global, w_local)
    if regularizer == "none":
        return VariantResult(extract_pfa(p), p)
    if regularizer not in REGULARIZERS:
        raise ValueError(f"unknown regularizer {regularizer!r}; expected one of {REGULARIZERS}")
    if image is None:
        raise ValueError(f"regularizer {regularizer!r} needs the image")
    if regularizer == "potts":
        soft, report = potts_map(p, image, params if params is not None else PottsParams())
    else:
        soft, report = crf_mean_field(p, image, params if params is not None else DenseCrfParams())
    return VariantResult(extract_pfa(soft), p, soft, report)


def pfa_variants(
    p_local: Optional[ProbabilityMap],
    p_global: Optional[ProbabilityMap],
    variant: str = "combined",
    regularizer: str = "none",
    image: Optional[RgbImage] = None,
    params=None,
    w_local: float = 0.5,
) -> LabelMap:
    """PFA for one of local / global / combined, optionally regularized.

    ``variant`` picks the probability map (combined averages local and
    global with weight ``w_local``); ``regularizer`` is "none", "potts" or
    "crf". Regularized variants need ``image``.
    """
    return run_variant(p_local, p_global, variant, regularizer, image, params, w_local).labels
