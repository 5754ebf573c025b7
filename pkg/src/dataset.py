"""
Dataset: cohort contract for micro-ultrasound screening.

A cohort is a list of studies. Each study is one patient's ordered slice sweep,
their clinical record, one three-state training label per slice and the biopsy
ground truth. This module implements the domain types, manifest I/O, cohort
validation, prostate volume from segmentation masks and the training-slice view.

Reference: docs/CONTRACTS.md
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple
import json
import logging

import imageio.v3 as iio
import numpy as np

from src.artifacts import write_json

logger = logging.getLogger(__name__)

AGE_RANGE = (18, 120)
MANIFEST_NAME = "manifest.json"


class ManifestError(ValueError):
    """Manifest or study contract violation, located by patient and field."""

    def __init__(self, message: str, patient_id: Optional[str] = None, field_name: Optional[str] = None):
        self.patient_id = patient_id
        self.field_name = field_name
        where = []
        if patient_id is not None:
            where.append(f"patient '{patient_id}'")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SliceLabel(str, Enum):
    """Per-slice training label; values are the manifest codes."""
    POSITIVE = "pos"
    NEGATIVE = "neg"
    EXCLUDED = "excl"


class ExclusionReason(str, Enum):
    """Why validate_cohort dropped a study."""
    DUPLICATE = "DUPLICATE"
    MISSING_CLINICAL = "MISSING_CLINICAL"


@dataclass
class SliceImage:
    """One 2D micro-US frame.

    Pixels are stored as 8-bit codes; ``intensities`` gives the [0, 1] view.
    Float input in [0, 1] is quantized to the nearest code.
    """
    patient_id: str
    frame_index: int
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise ValueError(f"slice {self.patient_id}/{self.frame_index}: expected non-empty 2D grid, got shape {pixels.shape}")
        if pixels.dtype != np.uint8:
            values = pixels.astype(np.float64)
            if not np.all(np.isfinite(values)):
                raise ValueError(f"slice {self.patient_id}/{self.frame_index}: non-finite pixels")
            if values.min() < 0.0 or values.max() > 1.0:
                raise ValueError(
                    f"slice {self.patient_id}/{self.frame_index}: intensities must be in [0, 1], "
                    f"got [{values.min():.3f}, {values.max():.3f}]"
                )
            pixels = np.rint(values * 255.0).astype(np.uint8)
        pixels = np.array(pixels, dtype=np.uint8, copy=True)
        pixels.flags.writeable = False
        self.pixels = pixels
        self.frame_index = int(self.frame_index)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    @property
    def intensities(self) -> np.ndarray:
        """Grayscale intensities in [0, 1] as float32."""
        return self.pixels.astype(np.float32) / np.float32(255.0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SliceImage):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.frame_index == other.frame_index
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass
class PatientRecord:
    """Clinical biomarkers and biopsy ground truth for one patient.

    Clinical fields may be absent (None) on ingestion; validate_cohort removes
    such records before any model sees them.
    """
    patient_id: str
    age: Optional[int]
    psa: Optional[float]
    dre: Optional[int]
    cspca: bool
    prostate_volume: Optional[float] = None

    def __post_init__(self):
        if self.age is not None:
            self.age = int(self.age)
            if not (AGE_RANGE[0] <= self.age <= AGE_RANGE[1]):
                raise ValueError(f"age must be in [{AGE_RANGE[0]}, {AGE_RANGE[1]}], got {self.age}")
        if self.psa is not None:
            self.psa = float(self.psa)
            if not np.isfinite(self.psa) or self.psa < 0.0:
                raise ValueError(f"psa must be a nonnegative real, got {self.psa}")
        if self.dre is not None:
            if self.dre not in (0, 1):
                raise ValueError(f"dre must be 0 or 1, got {self.dre}")
            self.dre = int(self.dre)
        if self.prostate_volume is not None:
            self.prostate_volume = float(self.prostate_volume)
            if not np.isfinite(self.prostate_volume) or self.prostate_volume <= 0.0:
                raise ValueError(f"prostate_volume must be positive, got {self.prostate_volume}")
        self.cspca = bool(self.cspca)

    def missing_fields(self, require_volume: bool = True) -> List[str]:
        """Names of clinical fields that are absent."""
        names = ["age", "psa", "dre"] + (["prostate_volume"] if require_volume else [])
        return [name for name in names if getattr(self, name) is None]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.patient_id,
            "age": self.age,
            "psa": self.psa,
            "dre": self.dre,
            "volume": self.prostate_volume,
            "cspca": self.cspca,
        }


@dataclass
class Study:
    """One patient's scan: record, ordered slices and aligned labels."""
    record: PatientRecord
    slices: List[SliceImage]
    labels: List[SliceLabel]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pid = self.record.patient_id
        self.labels = [SliceLabel(label) for label in self.labels]
        if len(self.slices) != len(self.labels):
            raise ManifestError(
                f"{len(self.slices)} slices but {len(self.labels)} labels", patient_id=pid, field_name="labels"
            )
        for offset, image in enumerate(self.slices):
            if image.patient_id != pid:
                raise ManifestError(f"slice belongs to '{image.patient_id}'", patient_id=pid, field_name="slices")
            if image.frame_index != self.slices[0].frame_index + offset:
                raise ManifestError(
                    "frame indices must be consecutive and sorted", patient_id=pid, field_name="frame_index"
                )
        if not self.record.cspca and SliceLabel.EXCLUDED in self.labels:
            raise ManifestError(
                "EXCLUDED labels require a csPCa-positive patient", patient_id=pid, field_name="labels"
            )

    @property
    def patient_id(self) -> str:
        return self.record.patient_id

    def __len__(self) -> int:
        return len(self.slices)


@dataclass
class Cohort:
    """Study population. Treated as read-only once built."""
    studies: List[Study] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.studies)

    def __iter__(self) -> Iterator[Study]:
        return iter(self.studies)

    @property
    def patient_ids(self) -> List[str]:
        return [study.patient_id for study in self.studies]

    def labels(self) -> Dict[str, bool]:
        """Patient-level ground truth keyed by patient id."""
        return {study.patient_id: study.record.cspca for study in self.studies}

    def by_id(self, patient_id: str) -> Study:
        for study in self.studies:
            if study.patient_id == patient_id:
                return study
        raise KeyError(patient_id)

    def subset(self, patient_ids: Sequence[str]) -> "Cohort":
        """Studies whose id is in ``patient_ids``, in cohort order."""
        wanted = set(patient_ids)
        return Cohort([study for study in self.studies if study.patient_id in wanted])


@dataclass
class ExclusionReport:
    """One study removed by validate_cohort."""
    patient_id: str
    reason: ExclusionReason
    detail: str = ""

    def to_dict(self) -> Dict[str, str]:
        return {"patient_id": self.patient_id, "reason": self.reason.value, "detail": self.detail}


@dataclass
class SegmentationStack:
    """Per-slice binary capsule masks with voxel spacing in mm."""
    masks: np.ndarray
    spacing: Tuple[float, float, float]

    def __post_init__(self):
        masks = [np.asarray(mask, dtype=bool) for mask in self.masks]
        if masks:
            shape = masks[0].shape
            if len(shape) != 2:
                raise ValueError(f"masks must be 2D, got shape {shape}")
            for mask in masks:
                if mask.shape != shape:
                    raise ValueError(f"all masks must share shape {shape}, got {mask.shape}")
            self.masks = np.stack(masks)
        else:
            self.masks = np.zeros((0, 0, 0), dtype=bool)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0.0 for s in spacing):
            raise ValueError(f"spacing must be three positive lengths, got {self.spacing}")
        self.spacing = spacing


def compute_prostate_volume(stack: SegmentationStack) -> float:
    """Gland volume in mL: true voxels × voxel volume (mm³) / 1000."""
    if len(stack.masks) == 0:
        raise ValueError("segmentation stack is empty")
    sx, sy, sz = stack.spacing
    voxels = int(np.count_nonzero(stack.masks))
    return voxels * sx * sy * sz / 1000.0


def training_slices(cohort: Cohort) -> List[Tuple[SliceImage, int]]:
    """Labeled slices for the slice classifier, EXCLUDED slices dropped.

    Ordered by patient id, then frame index.
    """
    pairs = []
    for study in sorted(cohort.studies, key=lambda s: s.patient_id):
        for image, label in zip(study.slices, study.labels):
            if label == SliceLabel.EXCLUDED:
                continue
            pairs.append((image, 1 if label == SliceLabel.POSITIVE else 0))
    return pairs


def validate_cohort(cohort: Cohort, require_volume: bool = True) -> Tuple[Cohort, List[ExclusionReport]]:
    """Drop duplicate patients (first occurrence wins) and incomplete records."""
    seen = set()
    kept: List[Study] = []
    reports: List[ExclusionReport] = []

    for study in cohort.studies:
        pid = study.patient_id
        if pid in seen:
            reports.append(ExclusionReport(pid, ExclusionReason.DUPLICATE, "repeated patient id"))
            continue
        seen.add(pid)

        missing = study.record.missing_fields(require_volume=require_volume)
        if missing:
            reports.append(ExclusionReport(pid, ExclusionReason.MISSING_CLINICAL, ",".join(missing)))
            continue
        kept.append(study)

    for report in reports:
        logger.warning(
            "study excluded",
            extra={"patient_id": report.patient_id, "reason": report.reason.value, "detail": report.detail},
        )
    return Cohort(kept), reports


# Manifest I/O

def _require(entry: Dict[str, Any], name: str, pid: Optional[str]) -> Any:
    if name not in entry:
        raise ManifestError("missing required field", patient_id=pid, field_name=name)
    return entry[name]


def _read_png(path: Path, pid: str) -> np.ndarray:
    try:
        image = iio.imread(path)
    except Exception as exc:  # imageio raises plugin-specific errors
        raise ManifestError(f"unreadable image {path.name}: {exc}", patient_id=pid, field_name="slices") from exc
    if image.ndim == 3:
        image = image[..., 0]
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ManifestError(
            f"{path.name} is not an 8-bit grayscale image (dtype {image.dtype}, shape {image.shape})",
            patient_id=pid,
            field_name="slices",
        )
    return image


def _parse_study(entry: Dict[str, Any], root: Path) -> Study:
    pid = str(_require(entry, "id", None))
    slice_entries = _require(entry, "slices", pid)
    if not isinstance(slice_entries, list):
        raise ManifestError("must be a list", patient_id=pid, field_name="slices")

    labels_given = [s["label"] for s in slice_entries if isinstance(s, dict) and "label" in s]
    if len(labels_given) != len(slice_entries):
        raise ManifestError(
            f"{len(slice_entries)} slices but {len(labels_given)} labels", patient_id=pid, field_name="labels"
        )
    try:
        labels = [SliceLabel(code) for code in labels_given]
    except ValueError as exc:
        raise ManifestError(str(exc), patient_id=pid, field_name="label") from exc

    slices = []
    for frame_index, slice_entry in enumerate(slice_entries):
        if not isinstance(slice_entry.get("file"), str):
            raise ManifestError(f"slice {frame_index} needs a file path string", patient_id=pid, field_name="file")
        pixels = _read_png(root / slice_entry["file"], pid)
        slices.append(SliceImage(pid, frame_index, pixels))

    volume = _clinical_value(entry, "volume", pid)
    segmentation = entry.get("segmentation")
    if volume is None and segmentation is not None:
        volume = _volume_from_segmentation(segmentation, root, pid)

    clinical = {name: _clinical_value(entry, name, pid) for name in ("age", "psa", "dre")}
    cspca = _parse_cspca(_require(entry, "cspca", pid), pid)
    try:
        record = PatientRecord(patient_id=pid, cspca=cspca, prostate_volume=volume, **clinical)
    except (TypeError, ValueError) as exc:
        raise ManifestError(str(exc), patient_id=pid, field_name="record") from exc

    metadata = {"phantom": entry["phantom"]} if "phantom" in entry else {}
    return Study(record=record, slices=slices, labels=labels, metadata=metadata)


def _clinical_value(entry: Dict[str, Any], name: str, pid: str) -> Optional[float]:
    value = entry.get(name)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ManifestError(f"must be a number, got {value!r}", patient_id=pid, field_name=name)
    return value


def _parse_cspca(value: Any, pid: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    raise ManifestError(f"must be a boolean or 0/1, got {value!r}", patient_id=pid, field_name="cspca")


def _volume_from_segmentation(segmentation: Dict[str, Any], root: Path, pid: str) -> Optional[float]:
    if not isinstance(segmentation, dict):
        raise ManifestError("must be an object", patient_id=pid, field_name="segmentation")
    names = _require(segmentation, "masks", pid)
    if not isinstance(names, list) or not all(isinstance(name, str) for name in names):
        raise ManifestError("must be a list of file paths", patient_id=pid, field_name="masks")
    spacing = _require(segmentation, "spacing", pid)
    if (
        not isinstance(spacing, list)
        or len(spacing) != 3
        or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in spacing)
    ):
        raise ManifestError(
            f"must be three numbers (sx, sy, sz), got {spacing!r}", patient_id=pid, field_name="spacing"
        )
    masks = [_read_png(root / name, pid) > 0 for name in names]
    try:
        stack = SegmentationStack(masks=masks, spacing=tuple(spacing))
        volume = compute_prostate_volume(stack)
    except ValueError as exc:
        raise ManifestError(str(exc), patient_id=pid, field_name="segmentation") from exc
    if volume == 0.0:
        logger.warning("segmentation has no gland voxels", extra={"patient_id": pid})
        return None
    return volume


def load_manifest(path: Path, max_workers: int = 4) -> Cohort:
    """Read a cohort manifest and decode its PNG slices to [0, 1] grayscale.

    Studies are decoded in parallel; the result keeps manifest order.

    Raises:
        ManifestError: missing file, malformed manifest, label count mismatch,
            unreadable image
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path.name}: {exc}") from exc
    if not isinstance(document, dict) or not isinstance(document.get("patients", None), list):
        raise ManifestError("manifest must be an object with a 'patients' list")

    root = path.parent
    entries = document["patients"]
    for entry in entries:
        if not isinstance(entry, dict):
            raise ManifestError("patient entries must be objects")

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        studies = list(pool.map(lambda entry: _parse_study(entry, root), entries))

    logger.info("manifest loaded", extra={"manifest": str(path), "studies": len(studies)})
    return Cohort(studies)


def study_manifest_entry(study: Study) -> Dict[str, Any]:
    """Manifest entry for a study whose PNGs live under ``<patient_id>/``."""
    entry = study.record.to_dict()
    if entry["volume"] is None:
        del entry["volume"]
    entry["slices"] = [
        {"file": f"{study.patient_id}/frame_{image.frame_index:04d}.png", "label": label.value}
        for image, label in zip(study.slices, study.labels)
    ]
    if "phantom" in study.metadata:
        entry["phantom"] = study.metadata["phantom"]
    return entry


def write_study_images(study: Study, directory: Path) -> None:
    folder = Path(directory) / study.patient_id
    folder.mkdir(parents=True, exist_ok=True)
    for image in study.slices:
        iio.imwrite(folder / f"frame_{image.frame_index:04d}.png", image.pixels)


def save_manifest(cohort: Cohort, directory: Path) -> Path:
    """Write PNG slices and ``manifest.json`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for study in cohort.studies:
        write_study_images(study, directory)
        entries.append(study_manifest_entry(study))
    return write_json(directory / MANIFEST_NAME, {"patients": entries})
