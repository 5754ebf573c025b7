"""Pytest fixtures for the microus-screen tests."""

import numpy as np
import pytest

from src.audit_log import AuditLog
from src.autoencoder import EncoderConfig
from src.dataset import Cohort, PatientRecord, SliceImage, SliceLabel, Study
from src.synthesis import PhantomConfig, generate_cohort


def make_study(
    patient_id: str,
    labels,
    cspca: bool = None,
    size: int = 8,
    age=65,
    psa=6.0,
    dre=0,
    volume=40.0,
    fill: float = 0.5,
) -> Study:
    """Study with constant-intensity slices; ground truth follows the labels unless given."""
    labels = [SliceLabel(label) for label in labels]
    if cspca is None:
        cspca = SliceLabel.POSITIVE in labels
    record = PatientRecord(patient_id, age=age, psa=psa, dre=dre, cspca=cspca, prostate_volume=volume)
    slices = [SliceImage(patient_id, i, np.full((size, size), fill)) for i in range(len(labels))]
    return Study(record=record, slices=slices, labels=labels)


@pytest.fixture
def audit_log():
    """Create audit log fixture."""
    return AuditLog("test", seed=0)


@pytest.fixture
def small_encoder():
    """Five-layer encoder at 32x32 input (1x1 latent grid)."""
    return EncoderConfig(input_size=32)


@pytest.fixture
def tiny_phantom_config():
    """Six short 32x32 phantom sweeps with a strong lesion signal."""
    return PhantomConfig(
        n_positive=3,
        n_negative=3,
        slices_min=16,
        slices_max=20,
        image_size=32,
        lesion_contrast=0.6,
        lesion_radius=0.2,
        speckle_noise=0.1,
        seed=7,
    )


@pytest.fixture
def tiny_cohort(tiny_phantom_config):
    return generate_cohort(tiny_phantom_config)


@pytest.fixture
def mixed_cohort():
    """Hand-built cohort: two positives (one with EXCLUDED margins) and two negatives."""
    return Cohort([
        make_study("P2", ["neg", "excl", "pos", "pos", "excl"]),
        make_study("P1", ["neg", "pos", "excl"]),
        make_study("N1", ["neg"] * 4),
        make_study("N2", ["neg"] * 3),
    ])


@pytest.fixture
def separable_toy():
    """One informative feature: x < 0 is class 0, x >= 0 is class 1."""
    rng = np.random.default_rng(0)
    x = np.r_[rng.uniform(-3.0, -0.1, 50), rng.uniform(0.1, 3.0, 50)]
    noise = rng.normal(size=(100, 3))
    X = np.column_stack([x, noise])
    y = np.r_[np.zeros(50, dtype=int), np.ones(50, dtype=int)]
    return X, y
