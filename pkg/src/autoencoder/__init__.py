"""
Autoencoder Module

Self-supervised convolutional autoencoder; the trained encoder is a frozen
feature extractor producing one 256-dimensional vector per slice.
"""

from .model import (
    AutoencoderWeights,
    ConvAutoencoder,
    EncoderConfig,
    FeatureVector,
    decode,
    encode,
    extract_feature,
    extract_features,
    prepare_slice,
    reconstruction_loss,
)
from .trainer import (
    CheckpointError,
    LossHistory,
    TrainConfig,
    TrainingError,
    evaluate_loss,
    load_checkpoint,
    save_checkpoint,
    select_best_epoch,
    train_autoencoder,
)

__all__ = [
    "AutoencoderWeights",
    "ConvAutoencoder",
    "EncoderConfig",
    "FeatureVector",
    "decode",
    "encode",
    "extract_feature",
    "extract_features",
    "prepare_slice",
    "reconstruction_loss",
    "CheckpointError",
    "LossHistory",
    "TrainConfig",
    "TrainingError",
    "evaluate_loss",
    "load_checkpoint",
    "save_checkpoint",
    "select_best_epoch",
    "train_autoencoder",
]
