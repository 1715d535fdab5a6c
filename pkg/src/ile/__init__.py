"""Invertible linear embeddings: a flow encoder whose latent sequences follow LTI dynamics."""
from .errors import ConfigError, DimensionError, FormatError, IleError, NumericError, ShapeError, SingularityError
from .model import IleConfig, IleModel, predict_frames, sequence_loss, train_step

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "IleConfig",
    "IleError",
    "IleModel",
    "NumericError",
    "ShapeError",
    "SingularityError",
    "predict_frames",
    "sequence_loss",
    "train_step",
]
