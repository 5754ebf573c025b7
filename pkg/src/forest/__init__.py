"""
Forest Module

Random forest with class-balanced Gini trees, stratified bootstrap and
out-of-bag scoring. Used by both the slice classifier and the clinical model.
"""

from .ensemble import (
    ForestConfig,
    ForestError,
    ForestModel,
    balanced_class_weights,
    fit_forest,
    load_forest,
    oob_proba,
    oob_score,
    predict_proba,
    save_forest,
    stratified_bootstrap,
)
from .tree import DecisionTree, best_split, build_tree, weighted_gini

__all__ = [
    "ForestConfig",
    "ForestError",
    "ForestModel",
    "balanced_class_weights",
    "fit_forest",
    "load_forest",
    "oob_proba",
    "oob_score",
    "predict_proba",
    "save_forest",
    "stratified_bootstrap",
    "DecisionTree",
    "best_split",
    "build_tree",
    "weighted_gini",
]
