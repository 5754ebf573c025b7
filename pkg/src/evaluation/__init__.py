"""
Evaluation Module

Patient-level k-fold cross-validation with role rotation, the metric suite,
ROC curves and fold-averaged reports.
"""

from .folds import FoldAssignment, make_folds
from .metrics import (
    METRIC_NAMES,
    ConfusionMetrics,
    FoldMetrics,
    MetricsReport,
    ReportError,
    ROCCurve,
    auroc,
    comparison_frame,
    confusion_metrics,
    emit_roc,
    roc_curve,
    write_report_csv,
    youden_threshold,
)
from .cross_validation import (
    CrossValidationConfig,
    CrossValidationResult,
    PipelineKind,
    RoundPhase,
    RoundResult,
    RoundState,
    ThresholdPolicy,
    run_cross_validation,
    run_round,
)

__all__ = [
    "FoldAssignment",
    "make_folds",
    "METRIC_NAMES",
    "ConfusionMetrics",
    "FoldMetrics",
    "MetricsReport",
    "ReportError",
    "ROCCurve",
    "auroc",
    "comparison_frame",
    "confusion_metrics",
    "emit_roc",
    "roc_curve",
    "write_report_csv",
    "youden_threshold",
    "CrossValidationConfig",
    "CrossValidationResult",
    "PipelineKind",
    "RoundPhase",
    "RoundResult",
    "RoundState",
    "ThresholdPolicy",
    "run_cross_validation",
    "run_round",
]
