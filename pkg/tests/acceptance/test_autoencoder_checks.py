"""Acceptance: autoencoder shape chain, gradients and training progress."""

import pytest
import torch
from torch.func import functional_call

from src.autoencoder import AutoencoderWeights, EncoderConfig, TrainConfig, decode, encode, train_autoencoder
from src.autoencoder.model import ConvAutoencoder, decoder_block, encoder_block
from src.synthesis import PhantomConfig, iter_studies

pytestmark = pytest.mark.acceptance


class TestShapeChain:
    """Full-size geometry.

    Acceptance Metrics:
    - 256 -> 8 -> 256 spatial chain
    - channels follow 3, 16, 32, 64, 128, 256 and back
    """

    def test_layer_by_layer(self):
        config = EncoderConfig()
        model = ConvAutoencoder(config)
        x = torch.zeros(1, 3, 256, 256)
        sizes = [256, 128, 64, 32, 16, 8]
        for block, channels, size in zip(model.encoder, config.channel_progression[1:], sizes[1:]):
            x = block(x)
            assert tuple(x.shape) == (1, channels, size, size)
        for block, channels, size in zip(
            model.decoder, reversed(config.channel_progression[:-1]), reversed(sizes[:-1])
        ):
            x = block(x)
            assert tuple(x.shape) == (1, channels, size, size)

    def test_public_functions(self):
        weights = AutoencoderWeights.initial(EncoderConfig(), seed=0)
        latent = encode(torch.rand(3, 256, 256), weights)
        assert tuple(latent.shape) == (256, 8, 8)
        assert tuple(decode(latent, weights).shape) == (3, 256, 256)


class TestGradients:
    """Analytic gradients of a one-layer miniature against finite differences."""

    def test_gradcheck(self):
        config = EncoderConfig()
        network = torch.nn.Sequential(
            encoder_block(3, 4, config),
            decoder_block(4, 3, config, final=True),
        ).double()
        names = [name for name, _ in network.named_parameters()]
        params = tuple(p.detach().clone().requires_grad_(True) for _, p in network.named_parameters())
        generator = torch.Generator().manual_seed(0)
        x = torch.rand(1, 3, 8, 8, dtype=torch.float64, generator=generator)

        def loss(*tensors):
            output = functional_call(network, dict(zip(names, tensors)), (x,))
            return ((output - x) ** 2).mean()

        assert torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-8, rtol=1e-4)


@pytest.mark.slow
class TestTrainingProgress:
    """Reconstruction improves on phantom slices.

    Acceptance Metrics:
    - 500 phantom slices at 256 px (seed 42), default encoder, 20 epochs
    - last-epoch training MSE <= 0.5 x first-epoch MSE
    - returned checkpoint is the minimum-validation epoch
    """

    def test_loss_halves(self):
        phantom = PhantomConfig(n_positive=3, n_negative=3, slices_min=100, slices_max=120, seed=42)
        slices = [image for study in iter_studies(phantom) for image in study.slices]
        train, val = slices[:500], slices[500:600]
        config = TrainConfig(batch_size=32, max_epochs=20, seed=42)
        _, history = train_autoencoder(train, val, config, EncoderConfig())
        assert len(history) == 20
        assert history.train_loss[-1] <= 0.5 * history.train_loss[0]
        assert history.best_epoch == 1 + history.val_loss.index(min(history.val_loss))
