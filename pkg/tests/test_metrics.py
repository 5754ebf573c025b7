"""
Unit tests for the metric suite.

Validates:
- AUROC pairwise semantics and degenerate inputs
- Confusion-derived threshold metrics
- ROC point emission and the Youden threshold
- Fold reports: mean, serialization, consistency checks
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.evaluation import (
    FoldMetrics,
    MetricsReport,
    ReportError,
    auroc,
    comparison_frame,
    confusion_metrics,
    emit_roc,
    roc_curve,
    write_report_csv,
    youden_threshold,
)

pytestmark = pytest.mark.unit


def fold(index, **metrics):
    values = dict(auroc=0.8, sensitivity=0.9, specificity=0.7, accuracy=0.8, precision=0.75, f1=0.82)
    values.update(metrics)
    return FoldMetrics(fold=index, threshold=0.15, n_test=29, n_positive=16, **values)


class TestAuroc:
    """Test the rank statistic."""

    def test_perfect(self):
        assert auroc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_reversed(self):
        assert auroc([0.1, 0.2, 0.9], [1, 1, 0]) == 0.0

    def test_all_tied(self):
        assert auroc([0.5] * 4, [1, 0, 1, 0]) == 0.5

    def test_mixed(self):
        assert auroc([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75

    def test_tie_across_classes(self):
        assert auroc([0.5, 0.5, 0.1], [1, 0, 0]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            auroc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            auroc([0.1, 0.2], [1])

    def test_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(0)
        scores = rng.random(30)
        labels = rng.integers(0, 2, 30)
        labels[:2] = [0, 1]
        assert auroc(scores, labels) == auroc(np.exp(3 * scores), labels)


class TestConfusion:
    """Test threshold metrics."""

    def test_toy_case(self):
        metrics = confusion_metrics([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert (metrics.tp, metrics.fp, metrics.tn, metrics.fn) == (2, 1, 1, 1)
        assert metrics.sensitivity == pytest.approx(2 / 3)
        assert metrics.specificity == 0.5
        assert metrics.accuracy == 0.6
        assert metrics.precision == pytest.approx(2 / 3)
        assert metrics.f1 == pytest.approx(2 / 3)

    def test_no_predicted_positives(self):
        metrics = confusion_metrics([0, 0], [1, 0])
        assert metrics.precision is None
        assert metrics.f1 is None
        assert metrics.sensitivity == 0.0

    def test_single_class_specificity_undefined(self):
        metrics = confusion_metrics([1, 0], [1, 1])
        assert metrics.specificity is None
        assert metrics.sensitivity == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            confusion_metrics([], [])


class TestRoc:
    """Test ROC emission."""

    def test_two_distinct_scores(self):
        curve = roc_curve([0.8, 0.8, 0.2, 0.2], [1, 0, 1, 0])
        assert len(curve) == 4
        assert curve.validate() == []
        assert curve.fpr.tolist() == [0.0, 0.5, 1.0, 1.0]
        assert curve.tpr.tolist() == [0.0, 0.5, 1.0, 1.0]

    def test_area_matches_auroc(self):
        rng = np.random.default_rng(4)
        scores = np.round(rng.random(40), 1)
        labels = np.r_[np.ones(20, dtype=int), np.zeros(20, dtype=int)]
        assert roc_curve(scores, labels).area() == pytest.approx(auroc(scores, labels))

    def test_emit_csv(self, tmp_path):
        emit_roc([0.9, 0.1], [1, 0], tmp_path / "roc.csv")
        frame = pd.read_csv(tmp_path / "roc.csv")
        assert list(frame.columns) == ["threshold", "fpr", "tpr"]
        assert frame["fpr"].iloc[0] == 0.0
        assert frame["tpr"].iloc[-1] == 1.0

    def test_youden_threshold(self):
        assert youden_threshold([0.9, 0.7, 0.4, 0.2], [1, 1, 0, 0]) == 0.7

    def test_youden_tie_prefers_larger(self):
        # thresholds 0.8 and 0.6 both give J = 0.5
        assert youden_threshold([0.8, 0.6, 0.6, 0.3], [1, 1, 0, 0]) == 0.8


class TestFoldMetrics:
    """Test fold metric validation."""

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="auroc"):
            fold(0, auroc=1.2)

    def test_none_allowed(self):
        assert fold(0, precision=None).precision is None


class TestMetricsReport:
    """Test fold aggregation and serialization."""

    def test_mean(self):
        report = MetricsReport("imaging", 0.15, folds=[fold(0, auroc=0.8), fold(1, auroc=0.9)])
        assert report.mean()["auroc"] == pytest.approx(0.85)
        assert report.mean()["specificity"] == pytest.approx(0.7)

    def test_mean_skips_undefined(self):
        report = MetricsReport("clinical", 0.15, folds=[fold(0, precision=None), fold(1, precision=0.6)])
        assert report.mean()["precision"] == pytest.approx(0.6)

    def test_json_round_trip(self, tmp_path):
        report = MetricsReport("imaging", 0.15, "youden", folds=[fold(i) for i in range(5)])
        loaded = MetricsReport.from_json(report.to_json(tmp_path / "report.json"))
        assert loaded.to_dict() == report.to_dict()

    def test_inconsistent_mean_rejected(self):
        document = MetricsReport("imaging", 0.15, folds=[fold(0), fold(1)]).to_dict()
        document["mean"]["auroc"] = 0.99
        with pytest.raises(ReportError, match="disagrees"):
            MetricsReport.from_dict(document)

    @pytest.mark.parametrize("stored", [[], "x", {"auroc": "0.8"}, {"auroc": True}])
    def test_malformed_mean_rejected(self, stored):
        document = MetricsReport("imaging", 0.15, folds=[fold(0), fold(1)]).to_dict()
        document["mean"] = stored
        with pytest.raises(ReportError, match="malformed"):
            MetricsReport.from_dict(document)

    def test_not_a_report(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"hello": 1}))
        with pytest.raises(ReportError, match="format_version"):
            MetricsReport.from_json(path)

    def test_frame_has_mean_row(self):
        frame = MetricsReport("imaging", 0.15, folds=[fold(0), fold(1)]).to_frame()
        assert frame["fold"].tolist() == ["0", "1", "mean"]
        assert list(frame.columns)[:2] == ["model", "fold"]

    def test_report_csv_and_comparison(self, tmp_path):
        reports = [
            MetricsReport("imaging", 0.15, folds=[fold(0, auroc=0.9)]),
            MetricsReport("clinical", 0.15, folds=[fold(0, auroc=0.7)]),
        ]
        frame = pd.read_csv(write_report_csv(reports, tmp_path / "folds.csv"))
        assert len(frame) == 4
        comparison = comparison_frame(reports)
        assert comparison["model"].tolist() == ["imaging", "clinical"]
        assert comparison["auroc"].tolist() == [0.9, 0.7]
