from .architecture import discriminator_spec, generator_spec
from .config import GanConfig
from .losses import bce, loss_d, loss_dcl, loss_g, loss_gdl, loss_lp, weighted_g
from .trainer import (
    DivergenceError,
    GanModel,
    TrainingError,
    build_model,
    predict_next,
    predict_series,
    read_log,
    train,
)

__all__ = [
    "DivergenceError", "GanConfig", "GanModel", "TrainingError", "bce", "build_model",
    "discriminator_spec", "generator_spec", "loss_d", "loss_dcl", "loss_g", "loss_gdl",
    "loss_lp", "predict_next", "predict_series", "read_log", "train", "weighted_g",
]
