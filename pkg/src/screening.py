"""
Screening: the two patient-level pipelines.

Imaging: slice -> 256-d encoder feature -> slice forest probability ->
consecutive-run aggregation. Clinical: (age, psa, volume, dre) -> forest
probability. Both end in a PatientScore thresholded at the same tau.

The imaging patient score is the largest value s such that some run of L
consecutive slices all have probability >= s (max over windows of the window
minimum). Thresholding it at tau is exactly the rule "at least L consecutive
slices predicted positive at tau".
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from src.artifacts import write_csv
from src.autoencoder import (
    AutoencoderWeights,
    EncoderConfig,
    LossHistory,
    TrainConfig,
    extract_features,
    train_autoencoder,
)
from src.dataset import Cohort, ManifestError, PatientRecord, Study, training_slices
from src.forest import ForestConfig, ForestModel, fit_forest, oob_proba

logger = logging.getLogger(__name__)

CLINICAL_FEATURES = ("age", "psa", "volume", "dre")


@dataclass
class SlicePrediction:
    patient_id: str
    frame_index: int
    probability: float

    def __post_init__(self):
        self.probability = float(self.probability)
        if not np.isfinite(self.probability) or not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"slice probability must be in [0, 1], got {self.probability}")


@dataclass
class AggregationConfig:
    """
    Patient decision rule.

    Attributes:
        run_length: L, consecutive slices required
        slice_threshold: tau, probability at which a slice counts as positive
    """
    run_length: int = 8
    slice_threshold: float = 0.15

    def __post_init__(self):
        if int(self.run_length) < 1:
            raise ValueError(f"run_length must be >= 1, got {self.run_length}")
        self.run_length = int(self.run_length)
        if not 0.0 < self.slice_threshold < 1.0:
            raise ValueError(f"slice_threshold must be in (0, 1), got {self.slice_threshold}")

    def to_dict(self) -> Dict[str, float]:
        return {"run_length": self.run_length, "slice_threshold": self.slice_threshold}


@dataclass
class PatientScore:
    """Continuous patient score and the decision taken at a threshold."""
    patient_id: str
    score: float
    decision: bool
    ground_truth: Optional[bool] = None

    @classmethod
    def at_threshold(
        cls, patient_id: str, score: float, threshold: float, ground_truth: Optional[bool] = None
    ) -> "PatientScore":
        return cls(patient_id, float(score), classify_patient(score, threshold), ground_truth)

    def to_dict(self) -> Dict:
        return {
            "patient_id": self.patient_id,
            "score": self.score,
            "decision": int(self.decision),
            "ground_truth": None if self.ground_truth is None else int(self.ground_truth),
        }


@dataclass
class ClinicalFeatures:
    """Clinical model input; vector order is (age, psa, volume, dre)."""
    age: float
    psa: float
    volume: float
    dre: int

    @classmethod
    def from_record(cls, record: PatientRecord) -> "ClinicalFeatures":
        missing = record.missing_fields(require_volume=True)
        if missing:
            raise ManifestError(
                "clinical features incomplete", patient_id=record.patient_id, field_name=",".join(missing)
            )
        return cls(age=record.age, psa=record.psa, volume=record.prostate_volume, dre=record.dre)

    def as_vector(self) -> np.ndarray:
        return np.array([self.age, self.psa, self.volume, self.dre], dtype=np.float64)


def predict_slices(
    study: Study,
    ae_weights: AutoencoderWeights,
    slice_model: ForestModel,
    batch_size: int = 64,
) -> List[SlicePrediction]:
    """One prediction per slice in frame order; EXCLUDED slices are scored too."""
    if len(study) == 0:
        raise ValueError(f"study '{study.patient_id}' has no slices")
    features = extract_features(study.slices, ae_weights, batch_size=batch_size)
    probabilities = slice_model.predict_proba(features)
    return [
        SlicePrediction(study.patient_id, image.frame_index, p)
        for image, p in zip(study.slices, probabilities)
    ]


def patient_score(probs: Sequence[float], run_length: int) -> float:
    """Max over all ``run_length`` windows of the window minimum; 0 if too short."""
    if run_length < 1:
        raise ValueError(f"run_length must be >= 1, got {run_length}")
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[0] < run_length:
        return 0.0
    return float(sliding_window_view(p, run_length).min(axis=1).max())


def classify_patient(score: float, threshold: float) -> bool:
    return bool(score >= threshold)


def clinical_matrix(records: Sequence[PatientRecord]) -> Tuple[np.ndarray, np.ndarray]:
    """(n x 4 feature matrix, n labels); incomplete records raise ManifestError."""
    X = np.array([ClinicalFeatures.from_record(r).as_vector() for r in records], dtype=np.float64)
    y = np.array([int(r.cspca) for r in records], dtype=np.int64)
    return X.reshape(len(records), len(CLINICAL_FEATURES)), y


def fit_clinical(records: Sequence[PatientRecord], config: Optional[ForestConfig] = None) -> ForestModel:
    """Forest over (age, psa, volume, dre); validated by OOB rather than a held-out set."""
    X, y = clinical_matrix(records)
    return fit_forest(X, y, config or ForestConfig())


def predict_clinical(model: ForestModel, record: PatientRecord) -> float:
    x = ClinicalFeatures.from_record(record).as_vector()
    return float(model.predict_proba(x[None, :])[0])


@dataclass
class ImagingScreener:
    """Frozen encoder + slice forest + run-length aggregation."""
    weights: AutoencoderWeights
    slice_model: ForestModel
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    history: Optional[LossHistory] = None

    @classmethod
    def fit(
        cls,
        train: Cohort,
        validation: Cohort,
        train_config: Optional[TrainConfig] = None,
        encoder_config: Optional[EncoderConfig] = None,
        forest_config: Optional[ForestConfig] = None,
        aggregation: Optional[AggregationConfig] = None,
    ) -> "ImagingScreener":
        """
        Train the autoencoder on every slice of ``train`` (checkpoint chosen on
        ``validation`` slices), then the slice forest on the labeled training slices.
        """
        train_images = [image for study in train for image in study.slices]
        val_images = [image for study in validation for image in study.slices]
        weights, history = train_autoencoder(train_images, val_images, train_config, encoder_config)

        pairs = training_slices(train)
        features = extract_features([image for image, _ in pairs], weights)
        labels = np.array([label for _, label in pairs], dtype=np.int64)
        slice_model = fit_forest(features, labels, forest_config or ForestConfig())
        logger.info(
            "imaging screener fit",
            extra={
                "train_patients": len(train),
                "train_slices": len(pairs),
                "positive_slices": int(labels.sum()),
                "best_epoch": history.best_epoch,
            },
        )
        return cls(weights, slice_model, aggregation or AggregationConfig(), history)

    def slice_probabilities(self, study: Study) -> np.ndarray:
        return np.array([p.probability for p in predict_slices(study, self.weights, self.slice_model)])

    def score(self, study: Study, threshold: Optional[float] = None) -> PatientScore:
        tau = self.aggregation.slice_threshold if threshold is None else threshold
        value = patient_score(self.slice_probabilities(study), self.aggregation.run_length)
        return PatientScore.at_threshold(study.patient_id, value, tau, study.record.cspca)


@dataclass
class ClinicalScreener:
    """Clinical-biomarker forest with the same decision interface."""
    model: ForestModel
    records: List[PatientRecord]
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)

    @classmethod
    def fit(
        cls,
        train: Cohort,
        forest_config: Optional[ForestConfig] = None,
        aggregation: Optional[AggregationConfig] = None,
    ) -> "ClinicalScreener":
        records = [study.record for study in train]
        model = fit_clinical(records, forest_config)
        return cls(model, records, aggregation or AggregationConfig())

    def oob_scores(self) -> Tuple[np.ndarray, np.ndarray]:
        """OOB class-1 probability per training record (NaN where never out of bag), labels."""
        X, y = clinical_matrix(self.records)
        return oob_proba(self.model, X), y

    def score(self, study: Study, threshold: Optional[float] = None) -> PatientScore:
        tau = self.aggregation.slice_threshold if threshold is None else threshold
        value = predict_clinical(self.model, study.record)
        return PatientScore.at_threshold(study.patient_id, value, tau, study.record.cspca)


def run_length_sweep(
    slice_probs: Mapping[str, Sequence[float]],
    labels: Mapping[str, bool],
    lengths: Sequence[int],
    threshold: float = 0.15,
) -> pd.DataFrame:
    """Patient-level metrics for each candidate run length, one row per length."""
    # metrics lives in the evaluation package, which imports this module
    from src.evaluation.metrics import auroc, confusion_metrics

    patient_ids = sorted(slice_probs)
    truth = np.array([int(labels[pid]) for pid in patient_ids])
    rows = []
    for length in lengths:
        scores = np.array([patient_score(slice_probs[pid], length) for pid in patient_ids])
        decisions = (scores >= threshold).astype(int)
        metrics = confusion_metrics(decisions, truth)
        both_classes = 0 < truth.sum() < len(truth)
        row = {"run_length": int(length), **metrics.to_dict()}
        row["auroc"] = auroc(scores, truth) if both_classes else None
        rows.append(row)
    return pd.DataFrame(
        rows, columns=["run_length", "auroc", "sensitivity", "specificity", "accuracy", "precision", "f1"]
    )


def write_slice_predictions(predictions: Sequence[SlicePrediction], path: Path) -> Path:
    frame = pd.DataFrame(
        [(p.patient_id, p.frame_index, p.probability) for p in predictions],
        columns=["patient_id", "frame_index", "probability"],
    )
    return write_csv(path, frame)


def write_patient_scores(scores: Sequence[PatientScore], path: Path) -> Path:
    frame = pd.DataFrame(
        [s.to_dict() for s in scores], columns=["patient_id", "score", "decision", "ground_truth"]
    )
    return write_csv(path, frame)
