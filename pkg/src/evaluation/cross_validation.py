"""
Cross-validation driver.

Each round moves through a fixed phase sequence and records a trace entry per
phase:

  ASSIGNED -> TRAINING -> THRESHOLD -> SCORING -> COMPLETE

Imaging rounds train the autoencoder and slice forest on the training folds
and select the checkpoint on the validation fold. Clinical rounds train on the
same training folds and leave the validation fold unused (OOB replaces it),
so both pipelines are tested on identical patients for a given seed.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Union
import logging

import numpy as np
from joblib import Parallel, delayed

from src.autoencoder import EncoderConfig, LossHistory, TrainConfig
from src.dataset import Cohort
from src.evaluation.folds import FoldAssignment, make_folds
from src.evaluation.metrics import (
    FoldMetrics,
    MetricsReport,
    ROCCurve,
    auroc,
    confusion_metrics,
    roc_curve,
    youden_threshold,
)
from src.forest import ForestConfig
from src.screening import AggregationConfig, ClinicalScreener, ImagingScreener, PatientScore
from src.seeding import derive_seed

logger = logging.getLogger(__name__)


class PipelineKind(str, Enum):
    IMAGING = "imaging"
    CLINICAL = "clinical"


class ThresholdPolicy(str, Enum):
    """How each round picks its decision threshold."""
    FIXED = "fixed"      # the configured tau
    YOUDEN = "youden"    # maximize J on held-out training-side scores


class RoundPhase(str, Enum):
    ASSIGNED = "ASSIGNED"
    TRAINING = "TRAINING"
    THRESHOLD = "THRESHOLD"
    SCORING = "SCORING"
    COMPLETE = "COMPLETE"


@dataclass
class RoundState:
    """
    Phase tracker for one round.

    Tracks the current phase and an ordered trace of what each phase did.
    """
    round_index: int
    pipeline: PipelineKind
    current_phase: RoundPhase = RoundPhase.ASSIGNED
    trace: List[Dict[str, Any]] = field(default_factory=list)

    def advance_phase(self, new_phase: RoundPhase, **details: Any) -> None:
        self.current_phase = new_phase
        entry = {"phase": new_phase.value, **details}
        self.trace.append(entry)
        logger.info(
            "cross-validation round",
            extra={"round": self.round_index, "pipeline": self.pipeline.value, **entry},
        )


@dataclass
class CrossValidationConfig:
    """
    Settings shared by every round.

    Attributes:
        k: number of folds
        train: autoencoder optimizer settings (seed replaced per round)
        encoder: autoencoder geometry
        slice_forest: imaging slice classifier (seed replaced per round)
        clinical_forest: clinical classifier (seed replaced per round)
        aggregation: run length and fixed tau
        threshold_policy: FIXED uses tau; YOUDEN picks a per-round threshold
        n_jobs: rounds evaluated concurrently
    """
    k: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    slice_forest: ForestConfig = field(default_factory=ForestConfig)
    clinical_forest: ForestConfig = field(default_factory=ForestConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    threshold_policy: ThresholdPolicy = ThresholdPolicy.FIXED
    n_jobs: int = 1

    def __post_init__(self):
        self.threshold_policy = ThresholdPolicy(self.threshold_policy)
        if self.k < 3:
            raise ValueError(f"k must be >= 3, got {self.k}")


@dataclass
class RoundResult:
    round_index: int
    training_ids: List[str]
    validation_ids: List[str]
    test_ids: List[str]
    threshold: float
    scores: List[PatientScore]
    metrics: FoldMetrics
    trace: List[Dict[str, Any]]
    slice_probabilities: Dict[str, List[float]] = field(default_factory=dict)
    history: Optional[LossHistory] = None

    def roc(self) -> Optional[ROCCurve]:
        labels = [int(s.ground_truth) for s in self.scores]
        if 0 < sum(labels) < len(labels):
            return roc_curve([s.score for s in self.scores], labels)
        return None


@dataclass
class CrossValidationResult:
    pipeline: PipelineKind
    folds: FoldAssignment
    rounds: List[RoundResult]
    report: MetricsReport

    def all_scores(self) -> List[PatientScore]:
        return [score for r in self.rounds for score in r.scores]

    def pooled_roc(self) -> ROCCurve:
        """ROC over the test predictions of every round (each patient once)."""
        scores = self.all_scores()
        return roc_curve([s.score for s in scores], [int(s.ground_truth) for s in scores])


def _round_seeds(seed: int, round_index: int) -> Dict[str, int]:
    return {
        stage: derive_seed(seed, f"{stage}/round-{round_index}")
        for stage in ("autoencoder", "slice-forest", "clinical-forest")
    }


def _fallback(state: RoundState, config: CrossValidationConfig, reason: str) -> float:
    logger.warning(
        "threshold selection fell back to fixed tau",
        extra={"round": state.round_index, "reason": reason},
    )
    return config.aggregation.slice_threshold


def _fit_imaging(cohort, training, validation, config, seeds, state):
    state.advance_phase(RoundPhase.TRAINING, n_train=len(training), n_validation=len(validation))
    screener = ImagingScreener.fit(
        cohort.subset(training),
        cohort.subset(validation),
        train_config=replace(config.train, seed=seeds["autoencoder"]),
        encoder_config=config.encoder,
        forest_config=replace(config.slice_forest, seed=seeds["slice-forest"]),
        aggregation=config.aggregation,
    )
    threshold = config.aggregation.slice_threshold
    if config.threshold_policy == ThresholdPolicy.YOUDEN:
        held_out = [screener.score(study) for study in cohort.subset(validation)]
        labels = [int(s.ground_truth) for s in held_out]
        if 0 < sum(labels) < len(labels):
            threshold = youden_threshold([s.score for s in held_out], labels)
        else:
            threshold = _fallback(state, config, "single-class validation fold")
    return screener, threshold


def _fit_clinical(cohort, training, config, seeds, state):
    state.advance_phase(RoundPhase.TRAINING, n_train=len(training), n_validation=0)
    screener = ClinicalScreener.fit(
        cohort.subset(training),
        forest_config=replace(config.clinical_forest, seed=seeds["clinical-forest"]),
        aggregation=config.aggregation,
    )
    threshold = config.aggregation.slice_threshold
    if config.threshold_policy == ThresholdPolicy.YOUDEN:
        proba, labels = screener.oob_scores()
        covered = ~np.isnan(proba)
        if covered.any() and 0 < labels[covered].sum() < covered.sum():
            threshold = youden_threshold(proba[covered], labels[covered])
        else:
            threshold = _fallback(state, config, "no two-class OOB predictions")
    return screener, threshold


def run_round(
    cohort: Cohort,
    folds: FoldAssignment,
    round_index: int,
    pipeline: Union[PipelineKind, str],
    config: CrossValidationConfig,
    seed: int,
) -> RoundResult:
    """Train on the round's training folds and score its test fold."""
    pipeline = PipelineKind(pipeline)
    training, validation, test = folds.roles(round_index)
    state = RoundState(round_index, pipeline)
    state.advance_phase(RoundPhase.ASSIGNED, n_test=len(test))
    seeds = _round_seeds(seed, round_index)

    if pipeline == PipelineKind.IMAGING:
        screener, threshold = _fit_imaging(cohort, training, validation, config, seeds, state)
    else:
        screener, threshold = _fit_clinical(cohort, training, config, seeds, state)
    state.advance_phase(RoundPhase.THRESHOLD, threshold=threshold, policy=config.threshold_policy.value)

    test_cohort = cohort.subset(test)
    slice_probabilities: Dict[str, List[float]] = {}
    scores = []
    for study in test_cohort:
        if pipeline == PipelineKind.IMAGING:
            slice_probabilities[study.patient_id] = screener.slice_probabilities(study).tolist()
        scores.append(screener.score(study, threshold=threshold))
    state.advance_phase(RoundPhase.SCORING, n_scored=len(scores))

    labels = [int(s.ground_truth) for s in scores]
    confusion = confusion_metrics([int(s.decision) for s in scores], labels)
    if 0 < sum(labels) < len(labels):
        fold_auroc = auroc([s.score for s in scores], labels)
    else:
        fold_auroc = None
        logger.warning(
            "single-class test fold; AUROC undefined",
            extra={"round": round_index, "pipeline": pipeline.value},
        )
    metrics = FoldMetrics(
        fold=round_index,
        threshold=threshold,
        n_test=len(scores),
        n_positive=sum(labels),
        auroc=fold_auroc,
        **confusion.to_dict(),
    )
    state.advance_phase(RoundPhase.COMPLETE, auroc=fold_auroc)

    return RoundResult(
        round_index=round_index,
        training_ids=training,
        validation_ids=validation,
        test_ids=test,
        threshold=threshold,
        scores=scores,
        metrics=metrics,
        trace=state.trace,
        slice_probabilities=slice_probabilities,
        history=getattr(screener, "history", None),
    )


def run_cross_validation(
    cohort: Cohort,
    pipeline: Union[PipelineKind, str],
    config: Optional[CrossValidationConfig] = None,
    seed: int = 0,
    folds: Optional[FoldAssignment] = None,
) -> CrossValidationResult:
    """
    k-fold patient-level cross-validation of one pipeline.

    Folds come from ``make_folds(cohort, k, derive_seed(seed, "folds"))`` unless
    given, so the imaging and clinical pipelines share an assignment per seed.
    Rounds may run concurrently; results are merged in fold order.
    """
    pipeline = PipelineKind(pipeline)
    config = config or CrossValidationConfig()
    if folds is None:
        folds = make_folds(cohort, config.k, derive_seed(seed, "folds"))

    rounds = Parallel(n_jobs=config.n_jobs)(
        delayed(run_round)(cohort, folds, r, pipeline, config, seed) for r in range(folds.k)
    )
    rounds = sorted(rounds, key=lambda result: result.round_index)
    report = MetricsReport(
        model=pipeline.value,
        threshold=config.aggregation.slice_threshold,
        threshold_policy=config.threshold_policy.value,
        folds=[r.metrics for r in rounds],
    )
    logger.info(
        "cross-validation complete",
        extra={"pipeline": pipeline.value, "mean": report.mean()},
    )
    return CrossValidationResult(pipeline=pipeline, folds=folds, rounds=rounds, report=report)
