"""
Convolutional autoencoder for slice feature learning.

Five stride-2 3×3 convolutions take a 3×S×S slice to a 256×(S/32)×(S/32)
latent grid; five mirrored transposed convolutions reconstruct it. After
training only the encoder is used: its latent grid is average-pooled to a
256-dimensional feature vector per slice.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from src.dataset import SliceImage

ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder geometry.

    Attributes:
        input_size: square side of the encoder input (multiple of 32)
        channel_progression: channels before and after each of the five layers
        kernel_size, stride, padding: shared by every layer
    """
    input_size: int = 256
    channel_progression: Tuple[int, ...] = (3, 16, 32, 64, 128, 256)
    kernel_size: int = 3
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channel_progression", tuple(int(c) for c in self.channel_progression))
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> List[str]:
        errors = []
        channels = self.channel_progression
        if len(channels) != 6:
            errors.append(f"expected 5 convolutional layers (6 channel counts), got {len(channels)}")
        elif channels[0] != 3 or channels[-1] != 256:
            errors.append(f"channel progression must run from 3 to 256, got {channels}")
        if self.stride != 2 or self.kernel_size != 3 or self.padding != 1:
            errors.append("layers must be 3x3, stride 2, padding 1")
        if self.input_size <= 0 or self.input_size % (2 ** 5) != 0:
            errors.append(f"input_size must be a positive multiple of 32, got {self.input_size}")
        return errors

    @property
    def n_layers(self) -> int:
        return len(self.channel_progression) - 1

    @property
    def latent_size(self) -> int:
        return self.input_size // (self.stride ** self.n_layers)

    @property
    def latent_channels(self) -> int:
        return self.channel_progression[-1]

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.channel_progression[0], self.input_size, self.input_size)

    @property
    def latent_shape(self) -> Tuple[int, int, int]:
        return (self.latent_channels, self.latent_size, self.latent_size)

    def to_dict(self) -> Dict:
        return {
            "input_size": self.input_size,
            "channel_progression": list(self.channel_progression),
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }


def encoder_block(in_channels: int, out_channels: int, config: EncoderConfig) -> nn.Sequential:
    """Strided convolution followed by a rectifier; halves the spatial size."""
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, config.kernel_size, stride=config.stride, padding=config.padding),
        nn.ReLU(),
    )


def decoder_block(in_channels: int, out_channels: int, config: EncoderConfig, final: bool = False) -> nn.Sequential:
    """Transposed convolution that doubles the spatial size exactly.

    The final block has no activation so a zero latent decodes to zero.
    """
    layers: List[nn.Module] = [
        nn.ConvTranspose2d(
            in_channels,
            out_channels,
            config.kernel_size,
            stride=config.stride,
            padding=config.padding,
            output_padding=config.stride - 1,
        )
    ]
    if not final:
        layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def init_weights(module: nn.Module, seed: int) -> None:
    """Uniform fan-in scaled weights, zero biases, drawn from a seeded generator."""
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for layer in module.modules():
            if isinstance(layer, (nn.Conv2d, nn.ConvTranspose2d)):
                k_h, k_w = layer.kernel_size
                fan_in = layer.in_channels * k_h * k_w
                bound = float(np.sqrt(6.0 / fan_in))
                layer.weight.uniform_(-bound, bound, generator=generator)
                if layer.bias is not None:
                    layer.bias.zero_()


class ConvAutoencoder(nn.Module):
    """Mirrored five-layer convolutional autoencoder."""

    def __init__(self, config: Optional[EncoderConfig] = None, seed: int = 0):
        super().__init__()
        self.config = config or EncoderConfig()
        channels = self.config.channel_progression
        self.encoder = nn.Sequential(
            *[encoder_block(channels[i], channels[i + 1], self.config) for i in range(self.config.n_layers)]
        )
        reversed_channels = channels[::-1]
        self.decoder = nn.Sequential(
            *[
                decoder_block(
                    reversed_channels[i],
                    reversed_channels[i + 1],
                    self.config,
                    final=(i == self.config.n_layers - 1),
                )
                for i in range(self.config.n_layers)
            ]
        )
        init_weights(self, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


@dataclass(eq=False)
class AutoencoderWeights:
    """Trained parameters plus the geometry and seed that produced them."""
    config: EncoderConfig
    state_dict: Dict[str, torch.Tensor]
    seed: int = 0
    _module: Optional[ConvAutoencoder] = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def from_module(cls, module: ConvAutoencoder, seed: int = 0) -> "AutoencoderWeights":
        state = {name: tensor.detach().clone() for name, tensor in module.state_dict().items()}
        return cls(config=module.config, state_dict=state, seed=seed)

    @classmethod
    def initial(cls, config: Optional[EncoderConfig] = None, seed: int = 0) -> "AutoencoderWeights":
        """Untrained weights as initialized for ``seed``."""
        return cls.from_module(ConvAutoencoder(config, seed=seed), seed=seed)

    def module(self) -> ConvAutoencoder:
        """Frozen eval-mode network, built once and reused."""
        if self._module is None:
            network = ConvAutoencoder(self.config, seed=self.seed)
            network.load_state_dict(self.state_dict)
            network.eval()
            for parameter in network.parameters():
                parameter.requires_grad_(False)
            self._module = network
        return self._module


@dataclass
class FeatureVector:
    """Pooled slice embedding."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if values.shape[0] != 256:
            raise ValueError(f"feature vector must have 256 values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vector has non-finite values")
        self.values = values

    def __len__(self) -> int:
        return len(self.values)


def _as_batch(x: ArrayLike, expected: Tuple[int, int, int], what: str) -> Tuple[torch.Tensor, bool]:
    tensor = torch.as_tensor(x, dtype=torch.float32)
    single = tensor.dim() == 3
    if single:
        tensor = tensor.unsqueeze(0)
    if tensor.dim() != 4 or tuple(tensor.shape[1:]) != expected:
        raise ValueError(f"{what} shape mismatch: expected {expected} (or batch thereof), got {tuple(tensor.shape)}")
    return tensor, single


def encode(image: ArrayLike, weights: AutoencoderWeights) -> torch.Tensor:
    """Latent grid for one image (C×S×S) or a batch (N×C×S×S)."""
    batch, single = _as_batch(image, weights.config.input_shape, "encoder input")
    with torch.no_grad():
        latent = weights.module().encoder(batch)
    return latent[0] if single else latent


def decode(latent: ArrayLike, weights: AutoencoderWeights) -> torch.Tensor:
    """Reconstruction for one latent grid or a batch."""
    batch, single = _as_batch(latent, weights.config.latent_shape, "latent")
    with torch.no_grad():
        output = weights.module().decoder(batch)
    return output[0] if single else output


def reconstruction_loss(x: ArrayLike, x_hat: ArrayLike) -> torch.Tensor:
    """Mean squared error over all elements."""
    x = torch.as_tensor(x, dtype=torch.float32)
    x_hat = torch.as_tensor(x_hat, dtype=torch.float32)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return F.mse_loss(x_hat, x, reduction="mean")


def pool_latent(latent: torch.Tensor) -> torch.Tensor:
    """Per-channel spatial mean: (N, C, h, w) -> (N, C)."""
    return F.adaptive_avg_pool2d(latent, 1).flatten(1)


def extract_feature(image: ArrayLike, weights: AutoencoderWeights) -> FeatureVector:
    """256-dimensional embedding of a single prepared image."""
    latent = encode(image, weights)
    if latent.dim() != 3:
        raise ValueError("extract_feature takes one image; use extract_features for batches")
    return FeatureVector(pool_latent(latent.unsqueeze(0))[0].numpy())


def prepare_slice(image: Union[SliceImage, np.ndarray], input_size: int) -> torch.Tensor:
    """Grayscale slice -> 3×S×S float tensor (bilinear resize, channel replication)."""
    if isinstance(image, SliceImage):
        pixels = image.intensities
    else:
        pixels = np.asarray(image, dtype=np.float32)
    tensor = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32))[None, None]
    if tensor.shape[-2:] != (input_size, input_size):
        tensor = F.interpolate(tensor, size=(input_size, input_size), mode="bilinear", align_corners=False)
    return tensor[0].expand(3, input_size, input_size).contiguous()


class SliceDataset(torch.utils.data.Dataset):
    """Lazily prepared slices so a full sweep never sits in memory at input size."""

    def __init__(self, slices: Sequence[Union[SliceImage, np.ndarray]], input_size: int):
        self.slices = list(slices)
        self.input_size = input_size

    def __len__(self) -> int:
        return len(self.slices)

    def __getitem__(self, index: int) -> torch.Tensor:
        return prepare_slice(self.slices[index], self.input_size)


def extract_features(
    slices: Iterable[Union[SliceImage, np.ndarray]],
    weights: AutoencoderWeights,
    batch_size: int = 64,
) -> np.ndarray:
    """Feature matrix (n × 256) for raw slices, in input order."""
    dataset = SliceDataset(list(slices), weights.config.input_size)
    if len(dataset) == 0:
        return np.zeros((0, weights.config.latent_channels), dtype=np.float32)
    loader = torch.utils.data.DataLoader(dataset, batch_size=batch_size, shuffle=False)
    encoder = weights.module().encoder
    chunks = []
    with torch.no_grad():
        for batch in loader:
            chunks.append(pool_latent(encoder(batch)).numpy())
    return np.concatenate(chunks).astype(np.float32)
