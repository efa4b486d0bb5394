"""Promote sparse scribble annotations to dense predicted full annotations (PFAs).

A per-image random forest over filter-bank features gives a local class
probability map, an externally supplied network softmax gives a global one;
the two are averaged, optionally regularized (edge-weighted Potts or a dense
CRF) and rounded to a labeling that can stand in for human annotation.
"""
from .core import (
    UNLABELED,
    ClassSet,
    LabelMap,
    PixelGrid,
    ProbabilityMap,
    Rejected,
    RgbImage,
    ScribbleSet,
    SoftMask,
    curate_scribbles,
    validate_probability_map,
)
from .evaluation import ConfusionMatrix, EvalReport, GapReport, accumulate_confusion, gap_report, miou
from .features import FeatureStack, Filter, FilterBank, extract_features, synthetic_filter_bank
from .fusion import combine, extract_pfa, pfa_variants, run_variant
from .global_pam_io import load_global_probs, labelmap_to_onehot
from .local_pam import ForestConfig, TrainedForest, gini_importance, predict_local, select_and_retrain, train_forest
from .regularizers import DenseCrfParams, EnergyReport, PottsParams, crf_mean_field, potts_map

__version__ = "0.1.0"
