"""
Metric suite: AUROC, threshold metrics, ROC curves and fold reports.

AUROC is the Mann-Whitney statistic with ties credited 0.5. It is computed
from average ranks as an integer numerator over 2 * n_pos * n_neg, so it is
the exactly rounded value of the pairwise count.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import json
import logging

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from src.artifacts import write_csv, write_json

logger = logging.getLogger(__name__)

METRIC_NAMES = ("auroc", "sensitivity", "specificity", "accuracy", "precision", "f1")
REPORT_FORMAT_VERSION = 1


class ReportError(ValueError):
    """Malformed or inconsistent metrics report."""


def _scores_and_labels(scores: Sequence[float], labels: Sequence[int]):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores and labels must be equal-length vectors, got {scores.shape} and {labels.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = int(np.count_nonzero(labels == 0))
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be binary 0/1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"both classes required, got {n_pos} positive and {n_neg} negative")
    return scores, labels, n_pos, n_neg


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outscores a random negative, ties 0.5."""
    scores, labels, n_pos, n_neg = _scores_and_labels(scores, labels)
    ranks = rankdata(scores, method="average")
    # twice the rank sum is an integer because average ranks are multiples of 1/2
    u_doubled = round(2.0 * ranks[labels == 1].sum()) - n_pos * (n_pos + 1)
    return u_doubled / (2 * n_pos * n_neg)


@dataclass
class ConfusionMetrics:
    """Threshold metrics; a ratio with a zero denominator is None."""
    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(numerator: float, denominator: float) -> Optional[float]:
        return numerator / denominator if denominator else None

    @property
    def sensitivity(self) -> Optional[float]:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> Optional[float]:
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / (self.tp + self.tn + self.fp + self.fn)

    @property
    def precision(self) -> Optional[float]:
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def f1(self) -> Optional[float]:
        precision, sensitivity = self.precision, self.sensitivity
        if precision is None or sensitivity is None:
            return None
        return self._ratio(2.0 * precision * sensitivity, precision + sensitivity)

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "f1": self.f1,
        }


def confusion_metrics(decisions: Sequence[int], labels: Sequence[int]) -> ConfusionMetrics:
    decisions = np.asarray(decisions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if decisions.shape != labels.shape or decisions.ndim != 1:
        raise ValueError(f"decisions and labels differ in length: {decisions.shape} vs {labels.shape}")
    if len(labels) == 0:
        raise ValueError("need at least one decision")
    return ConfusionMetrics(
        tp=int(np.count_nonzero(decisions & labels)),
        fp=int(np.count_nonzero(decisions & ~labels)),
        tn=int(np.count_nonzero(~decisions & ~labels)),
        fn=int(np.count_nonzero(~decisions & labels)),
    )


@dataclass
class ROCCurve:
    """
    Threshold sweep, highest threshold first.

    Point i predicts positive when score >= thresholds[i]; the first point
    (+inf) is (0, 0) and the last (-inf) is (1, 1).
    """
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def validate(self) -> List[str]:
        errors = []
        if not (len(self.thresholds) == len(self.fpr) == len(self.tpr)) or len(self.fpr) < 2:
            return ["curve arrays must share a length of at least 2"]
        if (self.fpr[0], self.tpr[0]) != (0.0, 0.0) or (self.fpr[-1], self.tpr[-1]) != (1.0, 1.0):
            errors.append("curve must run from (0, 0) to (1, 1)")
        if np.any(np.diff(self.fpr) < 0) or np.any(np.diff(self.tpr) < 0):
            errors.append("fpr and tpr must be nondecreasing")
        return errors

    def __len__(self) -> int:
        return len(self.fpr)

    def area(self) -> float:
        """Trapezoidal area under the emitted points."""
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "fpr": self.fpr, "tpr": self.tpr})


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> ROCCurve:
    scores, labels, n_pos, n_neg = _scores_and_labels(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    positive = labels[order] == 1
    tp = np.cumsum(positive)
    fp = np.cumsum(~positive)
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])
    thresholds = np.r_[np.inf, sorted_scores[last], -np.inf]
    fpr = np.r_[0.0, fp[last] / n_neg, 1.0]
    tpr = np.r_[0.0, tp[last] / n_pos, 1.0]
    return ROCCurve(thresholds=thresholds, fpr=fpr, tpr=tpr)


def emit_roc(scores: Sequence[float], labels: Sequence[int], path: Path) -> ROCCurve:
    """Write ``threshold,fpr,tpr`` points to CSV and return the curve."""
    curve = roc_curve(scores, labels)
    write_csv(path, curve.to_frame())
    return curve


def youden_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Score threshold maximizing sensitivity + specificity - 1; larger threshold on ties."""
    curve = roc_curve(scores, labels)
    finite = np.isfinite(curve.thresholds)
    j = (curve.tpr - curve.fpr)[finite]
    # thresholds are descending, so argmax keeps the largest among ties
    return float(curve.thresholds[finite][int(np.argmax(j))])


@dataclass
class FoldMetrics:
    """Test-fold metrics of one cross-validation round."""
    fold: int
    threshold: float
    n_test: int
    n_positive: int
    auroc: Optional[float] = None
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    f1: Optional[float] = None

    def __post_init__(self):
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"fold {self.fold}: {name} must be in [0, 1], got {value}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fold": self.fold,
            "threshold": self.threshold,
            "n_test": self.n_test,
            "n_positive": self.n_positive,
            **{name: getattr(self, name) for name in METRIC_NAMES},
        }


@dataclass
class MetricsReport:
    """Per-fold metrics for one model; the mean is always recomputed from the folds."""
    model: str
    threshold: float
    threshold_policy: str = "fixed"
    folds: List[FoldMetrics] = field(default_factory=list)

    def mean(self) -> Dict[str, Optional[float]]:
        """Arithmetic mean per metric over folds where it is defined."""
        result: Dict[str, Optional[float]] = {}
        for name in METRIC_NAMES:
            values = [getattr(f, name) for f in self.folds if getattr(f, name) is not None]
            skipped = len(self.folds) - len(values)
            if skipped:
                logger.warning(
                    "metric undefined in some folds",
                    extra={"model": self.model, "metric": name, "folds_skipped": skipped},
                )
            result[name] = float(np.mean(values)) if values else None
        return result

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "model": self.model,
            "threshold": self.threshold,
            "threshold_policy": self.threshold_policy,
            "folds": [f.to_dict() for f in self.folds],
            "mean": self.mean(),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MetricsReport":
        if not isinstance(d, dict) or d.get("format_version") != REPORT_FORMAT_VERSION:
            raise ReportError("not a metrics report (missing or unsupported format_version)")
        try:
            report = cls(
                model=str(d["model"]),
                threshold=float(d["threshold"]),
                threshold_policy=str(d.get("threshold_policy", "fixed")),
                folds=[FoldMetrics(**fold) for fold in d["folds"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ReportError(f"malformed metrics report: {exc}") from exc
        stored = d.get("mean")
        if stored is not None:
            if not isinstance(stored, dict):
                raise ReportError(f"malformed metrics report: mean must be an object, got {type(stored).__name__}")
            for name, value in report.mean().items():
                other = stored.get(name)
                if other is not None and (isinstance(other, bool) or not isinstance(other, (int, float))):
                    raise ReportError(f"malformed metrics report: mean {name} must be a number or null, got {other!r}")
                if (value is None) != (other is None) or (value is not None and abs(value - other) > 1e-12):
                    raise ReportError(f"stored mean {name}={other} disagrees with fold values ({value})")
        return report

    def to_json(self, path: Path) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def from_json(cls, path: Path) -> "MetricsReport":
        path = Path(path)
        try:
            document = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ReportError(f"report not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ReportError(f"{path.name} is not valid JSON: {exc}") from exc
        return cls.from_dict(document)

    def to_frame(self, include_mean: bool = True) -> pd.DataFrame:
        """Rows ``model,fold,auroc,...,f1``; the last row (fold "mean") averages the folds."""
        rows = [{"model": self.model, "fold": str(f.fold), **{n: getattr(f, n) for n in METRIC_NAMES}} for f in self.folds]
        if include_mean:
            rows.append({"model": self.model, "fold": "mean", **self.mean()})
        return pd.DataFrame(rows, columns=["model", "fold", *METRIC_NAMES])


def write_report_csv(reports: Sequence[MetricsReport], path: Path) -> Path:
    frame = pd.concat([r.to_frame() for r in reports], ignore_index=True)
    return write_csv(path, frame)


def comparison_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """One row per model with the fold-averaged metrics."""
    rows = [{"model": r.model, "threshold": r.threshold, **r.mean()} for r in reports]
    return pd.DataFrame(rows, columns=["model", "threshold", *METRIC_NAMES])
