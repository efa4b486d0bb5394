"""MAP solvers sharing the -log P data term: edge-weighted Potts and dense CRF."""
from .common import EnergyReport, data_energy, onehot, project_simplex, unary
from .crf import DenseCrfParams, crf_energy, crf_mean_field, dense_kernel, mean_field_update
from .potts import PottsParams, edge_weights, potts_map, threshold_round, tv_energy

__all__ = [
    "EnergyReport",
    "DenseCrfParams",
    "PottsParams",
    "crf_energy",
    "crf_mean_field",
    "data_energy",
    "dense_kernel",
    "edge_weights",
    "mean_field_update",
    "onehot",
    "potts_map",
    "project_simplex",
    "threshold_round",
    "tv_energy",
    "unary",
]
