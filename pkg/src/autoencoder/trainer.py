"""
Autoencoder training with validation-loss checkpointing.

The loop is one deterministic sequence of Adam updates: weight init, batch
order and the optional slice subsample all derive from ``TrainConfig.seed``.
The weights returned are the snapshot from the epoch with the lowest
validation MSE.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import copy
import logging

import numpy as np
import torch

from src.artifacts import read_npz, write_npz
from src.autoencoder.model import (
    AutoencoderWeights,
    ConvAutoencoder,
    EncoderConfig,
    SliceDataset,
    reconstruction_loss,
)
from src.dataset import SliceImage

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Training cannot continue (empty inputs, diverged loss)."""


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or incompatible with the expected geometry."""


@dataclass
class TrainConfig:
    """
    Optimizer and loop settings.

    Attributes:
        learning_rate: Adam step size
        batch_size: slices per update
        max_epochs: upper bound on passes over the training slices
        seed: drives init, shuffling and subsampling
        patience: stop after this many epochs without validation improvement (None = never)
        max_slices: seeded subsample of training slices per run (None = all)
    """
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 20
    seed: int = 0
    patience: Optional[int] = None
    max_slices: Optional[int] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience is not None and self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_slices is not None and self.max_slices < 1:
            raise ValueError(f"max_slices must be >= 1, got {self.max_slices}")


@dataclass
class LossHistory:
    """Per-epoch mean training and validation MSE (epoch 1 first)."""
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return select_best_epoch(self.val_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_rows(self) -> List[Dict[str, float]]:
        return [
            {"epoch": epoch, "train_mse": train, "val_mse": val}
            for epoch, (train, val) in enumerate(zip(self.train_loss, self.val_loss), start=1)
        ]


def select_best_epoch(val_losses: Sequence[float]) -> int:
    """1-based epoch with the lowest validation loss; earliest on ties."""
    if len(val_losses) == 0:
        raise ValueError("no validation losses recorded")
    return int(np.argmin(np.asarray(val_losses, dtype=np.float64))) + 1


SliceInput = Union[SliceImage, np.ndarray]


def _subsample(slices: Sequence[SliceInput], limit: Optional[int], seed: int) -> List[SliceInput]:
    if limit is None or len(slices) <= limit:
        return list(slices)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(slices), size=limit, replace=False))
    return [slices[i] for i in chosen]


def _mean_loss(model: ConvAutoencoder, loader: torch.utils.data.DataLoader) -> float:
    total, count = 0.0, 0
    model.eval()
    with torch.no_grad():
        for batch in loader:
            loss = reconstruction_loss(batch, model(batch))
            total += float(loss) * batch.shape[0]
            count += batch.shape[0]
    return total / count


def evaluate_loss(
    weights: AutoencoderWeights,
    slices: Sequence[SliceInput],
    batch_size: int = 32,
) -> float:
    """Mean reconstruction MSE of ``weights`` over raw slices."""
    dataset = SliceDataset(slices, weights.config.input_size)
    loader = torch.utils.data.DataLoader(dataset, batch_size=batch_size, shuffle=False)
    return _mean_loss(weights.module(), loader)


def train_autoencoder(
    train_slices: Sequence[SliceInput],
    val_slices: Sequence[SliceInput],
    config: Optional[TrainConfig] = None,
    encoder_config: Optional[EncoderConfig] = None,
) -> Tuple[AutoencoderWeights, LossHistory]:
    """
    Train the autoencoder on reconstruction MSE.

    Args:
        train_slices: slices used for gradient updates
        val_slices: held-out slices that select the checkpoint
        config: optimizer settings (documented defaults if None)
        encoder_config: network geometry (256x256 input if None)

    Returns:
        (weights at the minimum-validation epoch, loss history)

    Raises:
        TrainingError: empty slice sets or a non-finite loss
    """
    config = config or TrainConfig()
    encoder_config = encoder_config or EncoderConfig()
    if len(train_slices) == 0 or len(val_slices) == 0:
        raise TrainingError(
            f"need non-empty training and validation slices (got {len(train_slices)} and {len(val_slices)})"
        )

    torch.use_deterministic_algorithms(True, warn_only=True)
    train_set = SliceDataset(_subsample(train_slices, config.max_slices, config.seed), encoder_config.input_size)
    val_set = SliceDataset(val_slices, encoder_config.input_size)
    shuffle = torch.Generator().manual_seed(int(config.seed))
    train_loader = torch.utils.data.DataLoader(
        train_set, batch_size=config.batch_size, shuffle=True, generator=shuffle
    )
    val_loader = torch.utils.data.DataLoader(val_set, batch_size=config.batch_size, shuffle=False)

    model = ConvAutoencoder(encoder_config, seed=config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = LossHistory()
    best_state = None
    best_val = float("inf")
    stale_epochs = 0

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        total, count = 0.0, 0
        for step, batch in enumerate(train_loader):
            optimizer.zero_grad()
            loss = reconstruction_loss(batch, model(batch))
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite training loss {float(loss)} at epoch {epoch}, batch {step}")
            loss.backward()
            optimizer.step()
            total += float(loss) * batch.shape[0]
            count += batch.shape[0]

        train_mse = total / count
        val_mse = _mean_loss(model, val_loader)
        if not np.isfinite(val_mse):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(train_mse)
        history.val_loss.append(val_mse)

        if val_mse < best_val:
            best_val = val_mse
            best_state = copy.deepcopy(model.state_dict())
            stale_epochs = 0
        else:
            stale_epochs += 1

        logger.info(
            "autoencoder epoch",
            extra={"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "best_epoch": history.best_epoch},
        )
        if config.patience is not None and stale_epochs >= config.patience:
            logger.info("early stop", extra={"epoch": epoch, "patience": config.patience})
            break

    model.load_state_dict(best_state)
    return AutoencoderWeights.from_module(model, seed=config.seed), history


def save_checkpoint(weights: AutoencoderWeights, path: Path, train_config: Optional[TrainConfig] = None) -> Path:
    """Write geometry, seed and parameter tensors to a reproducible .npz archive."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder_config": weights.config.to_dict(),
        "seed": weights.seed,
    }
    if train_config is not None:
        meta["train_config"] = {
            "learning_rate": train_config.learning_rate,
            "batch_size": train_config.batch_size,
            "max_epochs": train_config.max_epochs,
            "seed": train_config.seed,
        }
    arrays = {name: tensor.cpu().numpy() for name, tensor in weights.state_dict.items()}
    return write_npz(path, arrays, meta=meta)


def load_checkpoint(path: Path, expected: Optional[EncoderConfig] = None) -> AutoencoderWeights:
    """Read a checkpoint, rejecting one whose geometry differs from ``expected``."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        arrays, meta = read_npz(path)
    except Exception as exc:  # zipfile/numpy raise a variety of errors on corrupt files
        raise CheckpointError(f"unreadable checkpoint {path.name}: {exc}") from exc
    if not meta or meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path.name}: unsupported checkpoint format")

    stored = meta["encoder_config"]
    try:
        config = EncoderConfig(**stored)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path.name}: invalid encoder config: {exc}") from exc
    if expected is not None and config != expected:
        raise CheckpointError(f"{path.name}: encoder config {stored} disagrees with expected {expected.to_dict()}")

    weights = AutoencoderWeights(
        config=config,
        state_dict={name: torch.from_numpy(array.copy()) for name, array in arrays.items()},
        seed=int(meta.get("seed", 0)),
    )
    try:
        weights.module()
    except RuntimeError as exc:
        raise CheckpointError(f"{path.name}: parameter tensors do not match the encoder config: {exc}") from exc
    return weights
