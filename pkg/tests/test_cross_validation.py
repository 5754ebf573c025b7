"""
Unit tests for the cross-validation driver.

Validates:
- Round phase tracing
- Every patient scored exactly once per pipeline
- Threshold policies
- A small imaging round end to end
"""

import numpy as np
import pytest

from src.autoencoder import TrainConfig
from src.dataset import Cohort
from src.evaluation import (
    CrossValidationConfig,
    PipelineKind,
    RoundPhase,
    RoundState,
    ThresholdPolicy,
    make_folds,
    run_cross_validation,
    run_round,
)
from src.forest import ForestConfig
from src.screening import AggregationConfig
from tests.conftest import make_study

pytestmark = pytest.mark.unit


@pytest.fixture
def clinical_cohort():
    """Ten positives with high PSA, ten negatives with low PSA."""
    rng = np.random.default_rng(0)
    studies = [make_study(f"P{i:02d}", ["pos"], psa=float(rng.uniform(10, 20))) for i in range(10)]
    studies += [make_study(f"N{i:02d}", ["neg"], psa=float(rng.uniform(1, 5))) for i in range(10)]
    return Cohort(studies)


@pytest.fixture
def clinical_config():
    return CrossValidationConfig(k=5, clinical_forest=ForestConfig(n_trees=20))


class TestRoundState:
    """Test the phase tracker."""

    def test_trace_records_phases(self):
        state = RoundState(0, PipelineKind.CLINICAL)
        state.advance_phase(RoundPhase.ASSIGNED, n_test=4)
        state.advance_phase(RoundPhase.TRAINING)
        assert state.current_phase == RoundPhase.TRAINING
        assert [entry["phase"] for entry in state.trace] == ["ASSIGNED", "TRAINING"]
        assert state.trace[0]["n_test"] == 4


class TestConfig:
    """Test driver settings."""

    def test_policy_coerced(self):
        assert CrossValidationConfig(threshold_policy="youden").threshold_policy == ThresholdPolicy.YOUDEN

    def test_k_validated(self):
        with pytest.raises(ValueError):
            CrossValidationConfig(k=2)


class TestClinicalCrossValidation:
    """Test the clinical pipeline across folds."""

    def test_each_patient_scored_once(self, clinical_cohort, clinical_config):
        result = run_cross_validation(clinical_cohort, "clinical", clinical_config, seed=3)
        scored = [s.patient_id for s in result.all_scores()]
        assert sorted(scored) == sorted(clinical_cohort.patient_ids)
        assert [r.round_index for r in result.rounds] == list(range(5))
        assert len(result.report.folds) == 5

    def test_separable_auroc(self, clinical_cohort, clinical_config):
        result = run_cross_validation(clinical_cohort, "clinical", clinical_config, seed=3)
        assert result.report.mean()["auroc"] >= 0.9
        assert result.pooled_roc().validate() == []

    def test_phase_sequence(self, clinical_cohort, clinical_config):
        folds = make_folds(clinical_cohort, k=5, seed=0)
        result = run_round(clinical_cohort, folds, 2, PipelineKind.CLINICAL, clinical_config, seed=0)
        assert [entry["phase"] for entry in result.trace] == [
            "ASSIGNED", "TRAINING", "THRESHOLD", "SCORING", "COMPLETE"
        ]
        assert result.test_ids == folds.test_ids(2)
        assert result.slice_probabilities == {}

    def test_deterministic(self, clinical_cohort, clinical_config):
        first = run_cross_validation(clinical_cohort, "clinical", clinical_config, seed=8)
        second = run_cross_validation(clinical_cohort, "clinical", clinical_config, seed=8)
        assert [s.score for s in first.all_scores()] == [s.score for s in second.all_scores()]

    def test_parallel_rounds_match_serial(self, clinical_cohort):
        serial = CrossValidationConfig(k=5, clinical_forest=ForestConfig(n_trees=10), n_jobs=1)
        parallel = CrossValidationConfig(k=5, clinical_forest=ForestConfig(n_trees=10), n_jobs=2)
        a = run_cross_validation(clinical_cohort, "clinical", serial, seed=1)
        b = run_cross_validation(clinical_cohort, "clinical", parallel, seed=1)
        assert a.report.to_dict() == b.report.to_dict()

    def test_youden_policy(self, clinical_cohort):
        config = CrossValidationConfig(
            k=5, clinical_forest=ForestConfig(n_trees=20), threshold_policy=ThresholdPolicy.YOUDEN
        )
        result = run_cross_validation(clinical_cohort, "clinical", config, seed=2)
        assert result.report.threshold_policy == "youden"
        assert all(0.0 <= r.threshold <= 1.0 for r in result.rounds)

    def test_fixed_policy_uses_tau(self, clinical_cohort):
        config = CrossValidationConfig(
            k=5, clinical_forest=ForestConfig(n_trees=10), aggregation=AggregationConfig(slice_threshold=0.3)
        )
        result = run_cross_validation(clinical_cohort, "clinical", config, seed=2)
        assert all(r.threshold == 0.3 for r in result.rounds)
        assert all(s.decision == (s.score >= 0.3) for s in result.all_scores())


class TestImagingRound:
    """Test one imaging round on a tiny phantom cohort."""

    def test_round_outputs(self, tiny_cohort, small_encoder):
        config = CrossValidationConfig(
            k=3,
            train=TrainConfig(batch_size=8, max_epochs=1),
            encoder=small_encoder,
            slice_forest=ForestConfig(n_trees=10),
            aggregation=AggregationConfig(run_length=4),
        )
        folds = make_folds(tiny_cohort, k=3, seed=0)
        result = run_round(tiny_cohort, folds, 0, "imaging", config, seed=0)
        assert sorted(s.patient_id for s in result.scores) == folds.test_ids(0)
        for pid, probs in result.slice_probabilities.items():
            assert len(probs) == len(tiny_cohort.by_id(pid))
        assert len(result.history) == 1
        assert result.metrics.n_test == 2
        assert result.metrics.auroc is not None
