"""Compress transformer classifiers by learning linear maps from a frozen
teacher's weights, with truncated-SVD and tensor-train baselines at matched
parameter budgets."""

from .model import ModelConfig, TransformerModel, count_from_config, count_parameters, forward
from .objectives import HiddenMaps, ObjectiveSpec
from .reparam import (
    GatedWSMapping,
    ReparamSpec,
    SVDFactors,
    TTFactors,
    WSMapping,
    gated_ws_init,
    match_rank_to_budget,
    svd_factorize,
    tt_factorize,
    ws_init,
)
from .tensor import Tensor
from .trainer import RunReport, TrainConfig, TrainingDiverged, rng_stream, train

__version__ = "0.1.0"

__all__ = [
    "GatedWSMapping",
    "HiddenMaps",
    "ModelConfig",
    "ObjectiveSpec",
    "ReparamSpec",
    "RunReport",
    "SVDFactors",
    "TTFactors",
    "Tensor",
    "TrainConfig",
    "TrainingDiverged",
    "TransformerModel",
    "WSMapping",
    "count_from_config",
    "count_parameters",
    "forward",
    "gated_ws_init",
    "match_rank_to_budget",
    "rng_stream",
    "svd_factorize",
    "train",
    "tt_factorize",
    "ws_init",
]
