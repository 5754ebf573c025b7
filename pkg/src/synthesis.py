"""
Synthetic cohort generator.

Phantom sweeps: a smooth elliptical gland over a dark background, multiplied by
spatially correlated speckle. Positive patients get one contiguous run of
slices carrying a bright, finely textured patch; that run is labeled POSITIVE
with an EXCLUDED margin on either side. Clinical records are sampled per class
so their median and quartiles match the cohort table the generator is
parameterized with.

Every study draws from its own seed stream (derived from the run seed and the
patient id), so a study's bytes do not depend on generation order.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple
import logging

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import norm

from src.artifacts import write_json
from src.dataset import (
    MANIFEST_NAME,
    Cohort,
    PatientRecord,
    SliceImage,
    SliceLabel,
    Study,
    study_manifest_entry,
    write_study_images,
)
from src.seeding import stage_rng

logger = logging.getLogger(__name__)

# Standard normal upper quartile
Z_QUARTILE = float(norm.ppf(0.75))
AGE_CLAMP = (45, 90)


class SynthesisError(ValueError):
    """Study carries no planted ground truth."""


@dataclass
class PhantomConfig:
    """
    Phantom cohort geometry.

    Attributes:
        n_positive, n_negative: patients per class
        slices_min, slices_max: sweep length drawn uniformly from this range
        image_size: square slice side in pixels
        lesion_run_base: shortest lesion run
        lesion_run_extra_mean: Poisson mean added to the base (median stays at the base)
        exclusion_margin: EXCLUDED slices on each side of the run
        lesion_contrast: additive lesion intensity (0 disables the lesion signal)
        lesion_radius: patch radius as a fraction of image_size
        speckle_noise: std of the multiplicative speckle field
        speckle_correlation: gaussian sigma (pixels) of the speckle grain
        seed: run seed
    """
    n_positive: int = 79
    n_negative: int = 66
    slices_min: int = 200
    slices_max: int = 300
    image_size: int = 256
    lesion_run_base: int = 8
    lesion_run_extra_mean: float = 0.5
    exclusion_margin: int = 2
    lesion_contrast: float = 0.35
    lesion_radius: float = 0.12
    speckle_noise: float = 0.25
    speckle_correlation: float = 1.0
    seed: int = 42

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> List[str]:
        errors = []
        if self.n_positive < 1 or self.n_negative < 1:
            errors.append(f"need at least one patient per class, got {self.n_positive}/{self.n_negative}")
        shortest = self.lesion_run_base + 2 * self.exclusion_margin + 2
        if self.slices_min < shortest:
            errors.append(f"slices_min must be >= {shortest} to hold a lesion run, got {self.slices_min}")
        if self.slices_max < self.slices_min:
            errors.append(f"slices_max {self.slices_max} < slices_min {self.slices_min}")
        if self.image_size < 16:
            errors.append(f"image_size must be >= 16, got {self.image_size}")
        if self.lesion_run_base < 1 or self.lesion_run_extra_mean < 0 or self.exclusion_margin < 0:
            errors.append("lesion run parameters must be nonnegative (base >= 1)")
        if not 0.0 <= self.lesion_contrast < 1.0:
            errors.append(f"lesion_contrast must be in [0, 1), got {self.lesion_contrast}")
        if not 0.0 < self.lesion_radius < 0.5:
            errors.append(f"lesion_radius must be in (0, 0.5), got {self.lesion_radius}")
        if self.speckle_noise < 0 or self.speckle_correlation < 0:
            errors.append("speckle parameters must be nonnegative")
        return errors

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Quantiles:
    """Median with lower and upper quartiles."""
    q1: float
    median: float
    q3: float

    def __post_init__(self):
        if not self.q1 < self.median < self.q3:
            raise ValueError(f"quartiles must be ordered q1 < median < q3, got {self.q1}, {self.median}, {self.q3}")


@dataclass
class ClassDistribution:
    age: Quantiles
    psa: Quantiles
    volume: Quantiles
    dre_rate: float

    def __post_init__(self):
        for name in ("age", "psa", "volume"):
            value = getattr(self, name)
            if isinstance(value, dict):
                setattr(self, name, Quantiles(**value))
        if not 0.0 <= self.dre_rate <= 1.0:
            raise ValueError(f"dre_rate must be in [0, 1], got {self.dre_rate}")
        if self.psa.q1 <= 0 or self.volume.q1 <= 0:
            raise ValueError("psa and volume quartiles must be positive")


@dataclass
class ClinicalDistributions:
    """Per-class clinical summary statistics (median and IQR, DRE rate)."""
    positive: ClassDistribution = field(
        default_factory=lambda: ClassDistribution(
            age=Quantiles(66, 70, 74),
            psa=Quantiles(5.8, 8.2, 13.1),
            volume=Quantiles(31.5, 37.5, 49.4),
            dre_rate=39 / 79,
        )
    )
    negative: ClassDistribution = field(
        default_factory=lambda: ClassDistribution(
            age=Quantiles(63, 69, 71),
            psa=Quantiles(3.3, 5.7, 7.5),
            volume=Quantiles(39.0, 47.1, 55.4),
            dre_rate=6 / 66,
        )
    )

    def __post_init__(self):
        for name in ("positive", "negative"):
            value = getattr(self, name)
            if isinstance(value, dict):
                setattr(self, name, ClassDistribution(**value))

    def for_class(self, positive: bool) -> ClassDistribution:
        return self.positive if positive else self.negative

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _split(z: np.ndarray, center: float, low: float, high: float) -> np.ndarray:
    """Two-piece transform: each half of z scaled so the quartiles land on q1 / q3."""
    sigma_low = (center - low) / Z_QUARTILE
    sigma_high = (high - center) / Z_QUARTILE
    return center + z * np.where(z < 0, sigma_low, sigma_high)


def sample_clinical_batch(
    positive: bool,
    dists: ClinicalDistributions,
    rng: np.random.Generator,
    n: int,
) -> Dict[str, np.ndarray]:
    """
    ``n`` independent clinical draws for one class.

    psa and volume are two-piece log-normal (median and both quartiles exact in
    log space); age is a two-piece normal, rounded and clamped to [45, 90];
    dre is Bernoulli at the class rate.
    """
    d = dists.for_class(positive)
    z = rng.standard_normal((3, n))
    age = _split(z[0], d.age.median, d.age.q1, d.age.q3)
    log_psa = _split(z[1], np.log(d.psa.median), np.log(d.psa.q1), np.log(d.psa.q3))
    log_volume = _split(z[2], np.log(d.volume.median), np.log(d.volume.q1), np.log(d.volume.q3))
    dre = (rng.random(n) < d.dre_rate).astype(np.int64)
    return {
        "age": np.clip(np.rint(age), *AGE_CLAMP).astype(np.int64),
        "psa": np.exp(log_psa),
        "volume": np.exp(log_volume),
        "dre": dre,
    }


def sample_clinical(positive: bool, dists: ClinicalDistributions, rng: np.random.Generator) -> Dict[str, Any]:
    """One record's clinical fields (age, psa, dre, volume)."""
    batch = sample_clinical_batch(positive, dists, rng, 1)
    return {
        "age": int(batch["age"][0]),
        "psa": float(batch["psa"][0]),
        "dre": int(batch["dre"][0]),
        "volume": float(batch["volume"][0]),
    }


@dataclass
class LesionTruth:
    """Planted ground truth; run_extent is the half-open frame interval [start, stop)."""
    has_lesion: bool
    run_extent: Optional[Tuple[int, int]] = None

    @property
    def length(self) -> int:
        return 0 if self.run_extent is None else self.run_extent[1] - self.run_extent[0]

    def frames(self) -> range:
        return range(0) if self.run_extent is None else range(*self.run_extent)


def lesion_oracle(study: Study) -> LesionTruth:
    phantom = study.metadata.get("phantom")
    if phantom is None:
        raise SynthesisError(f"study '{study.patient_id}' was not produced by the phantom generator")
    lesion = phantom.get("lesion")
    if lesion is None:
        return LesionTruth(False)
    return LesionTruth(True, (int(lesion["start"]), int(lesion["stop"])))


class _Geometry:
    """Per-study gland ellipse and lesion placement in normalized coordinates."""

    def __init__(self, config: PhantomConfig, rng: np.random.Generator):
        self.center = rng.uniform(-0.1, 0.1, size=2)
        self.axes = rng.uniform(0.55, 0.75, size=2)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        offset = rng.uniform(0.0, 0.35)
        self.lesion_center = self.center + offset * self.axes * np.array([np.cos(angle), np.sin(angle)])
        self.lesion_period = rng.uniform(3.0, 5.0)
        axis = np.linspace(-1.0, 1.0, config.image_size)
        self.yy, self.xx = np.meshgrid(axis, axis, indexing="ij")

    def background(self, frame: int, n_frames: int) -> np.ndarray:
        # gland cross-section grows then shrinks across the sweep
        scale = 0.75 + 0.25 * np.sin(np.pi * (frame + 0.5) / n_frames)
        ry, rx = self.axes * scale
        r2 = ((self.yy - self.center[0]) / ry) ** 2 + ((self.xx - self.center[1]) / rx) ** 2
        return 0.18 + 0.32 * np.clip(1.0 - r2, 0.0, 1.0) ** 0.5

    def lesion(self, config: PhantomConfig) -> np.ndarray:
        size = config.image_size
        d = np.hypot(self.yy - self.lesion_center[0], self.xx - self.lesion_center[1]) * size / 2.0
        radius = config.lesion_radius * size
        mask = np.clip(radius - d + 0.5, 0.0, 1.0)
        row, col = np.indices((size, size))
        texture = 0.5 + 0.5 * np.cos(2 * np.pi * row / self.lesion_period) * np.cos(2 * np.pi * col / self.lesion_period)
        return mask * (0.6 + 0.4 * texture)


def render_slice(
    config: PhantomConfig,
    geometry: _Geometry,
    frame: int,
    n_frames: int,
    with_lesion: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    """One 8-bit phantom frame."""
    image = geometry.background(frame, n_frames)
    if with_lesion and config.lesion_contrast > 0:
        image = image + config.lesion_contrast * geometry.lesion(config)
    grain = rng.standard_normal(image.shape)
    if config.speckle_correlation > 0:
        grain = gaussian_filter(grain, sigma=config.speckle_correlation)
        grain /= max(float(grain.std()), 1e-12)
    image = image * (1.0 + config.speckle_noise * grain)
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def _lesion_run(config: PhantomConfig, n_frames: int, rng: np.random.Generator) -> Tuple[int, int]:
    margin = config.exclusion_margin
    longest = n_frames - 2 * margin - 2
    length = min(config.lesion_run_base + int(rng.poisson(config.lesion_run_extra_mean)), longest)
    start = int(rng.integers(margin + 1, n_frames - margin - length))
    return start, start + length


def _slice_labels(n_frames: int, run: Optional[Tuple[int, int]], margin: int) -> List[SliceLabel]:
    labels = [SliceLabel.NEGATIVE] * n_frames
    if run is not None:
        start, stop = run
        for frame in range(max(0, start - margin), min(n_frames, stop + margin)):
            labels[frame] = SliceLabel.POSITIVE if start <= frame < stop else SliceLabel.EXCLUDED
    return labels


def patient_labels(config: PhantomConfig) -> List[Tuple[str, bool]]:
    """(patient_id, cspca) in generation order; classes shuffled so ids carry no label."""
    truth = np.array([True] * config.n_positive + [False] * config.n_negative)
    order = stage_rng(config.seed, "patient-labels").permutation(len(truth))
    return [(f"MUS{i + 1:04d}", bool(truth[j])) for i, j in enumerate(order)]


def generate_study(
    patient_id: str,
    positive: bool,
    config: PhantomConfig,
    dists: ClinicalDistributions,
) -> Study:
    """One phantom study; a pure function of (config, dists, patient_id, class)."""
    rng = stage_rng(config.seed, f"study/{patient_id}")
    n_frames = int(rng.integers(config.slices_min, config.slices_max + 1))
    geometry = _Geometry(config, rng)
    run = _lesion_run(config, n_frames, rng) if positive else None

    clinical = sample_clinical(positive, dists, stage_rng(config.seed, f"clinical/{patient_id}"))
    record = PatientRecord(
        patient_id=patient_id,
        age=clinical["age"],
        psa=clinical["psa"],
        dre=clinical["dre"],
        cspca=positive,
        prostate_volume=clinical["volume"],
    )

    slices = []
    for frame in range(n_frames):
        lesion_on = run is not None and run[0] <= frame < run[1]
        pixels = render_slice(config, geometry, frame, n_frames, lesion_on, rng)
        slices.append(SliceImage(patient_id, frame, pixels))

    lesion = None if run is None else {"start": run[0], "stop": run[1]}
    return Study(
        record=record,
        slices=slices,
        labels=_slice_labels(n_frames, run, config.exclusion_margin),
        metadata={"phantom": {"lesion": lesion}},
    )


def iter_studies(
    config: Optional[PhantomConfig] = None,
    dists: Optional[ClinicalDistributions] = None,
) -> Iterator[Study]:
    config = config or PhantomConfig()
    dists = dists or ClinicalDistributions()
    for patient_id, positive in patient_labels(config):
        yield generate_study(patient_id, positive, config, dists)


def generate_cohort(
    config: Optional[PhantomConfig] = None,
    dists: Optional[ClinicalDistributions] = None,
) -> Cohort:
    """Whole phantom cohort in memory; prefer write_cohort for full-size sweeps."""
    return Cohort(list(iter_studies(config, dists)))


def write_cohort(
    directory: Path,
    config: Optional[PhantomConfig] = None,
    dists: Optional[ClinicalDistributions] = None,
) -> Path:
    """Stream studies to PNG files and write the manifest last."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for study in iter_studies(config, dists):
        write_study_images(study, directory)
        entries.append(study_manifest_entry(study))
        logger.debug("study written", extra={"patient_id": study.patient_id, "slices": len(study)})
    return write_json(directory / MANIFEST_NAME, {"patients": entries})
