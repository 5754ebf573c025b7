"""
Random forest with class-balanced weights and stratified bootstrap.

Shared by the imaging (slice) classifier and the clinical classifier. Tree t
draws all of its randomness from ``default_rng([seed, t])``, so trees can be
fit in any order or in parallel and the ensemble is bitwise identical.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union
import logging
import math

import numpy as np
from joblib import Parallel, delayed

from src.artifacts import read_json, write_json
from src.forest.tree import DecisionTree, build_tree

logger = logging.getLogger(__name__)

FOREST_FORMAT_VERSION = 1


class ForestError(ValueError):
    """Invalid training data, query dimension or model file."""


@dataclass
class ForestConfig:
    """
    Forest hyperparameters.

    Attributes:
        n_trees: ensemble size
        max_features: features tried per split ("sqrt" = floor(sqrt(d)), or an int)
        class_weight: "balanced" (w_c = n / (2 n_c)) or None for unit weights
        bootstrap: resample rows per tree; False trains every tree on all rows
        stratified: resample each class separately, preserving class counts
        max_depth: None grows to purity
        min_samples_leaf: minimum rows per child
        seed: base of the per-tree seeds
        n_jobs: joblib workers for tree fitting
    """
    n_trees: int = 1000
    max_features: Union[str, int] = "sqrt"
    class_weight: Optional[str] = "balanced"
    bootstrap: bool = True
    stratified: bool = True
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.class_weight not in ("balanced", None):
            raise ValueError(f"class_weight must be 'balanced' or None, got {self.class_weight!r}")
        if isinstance(self.max_features, str) and self.max_features != "sqrt":
            raise ValueError(f"max_features must be 'sqrt' or an int, got {self.max_features!r}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")

    def resolve_max_features(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            resolved = max(1, int(math.floor(math.sqrt(n_features))))
        else:
            resolved = int(self.max_features)
        if not 1 <= resolved <= n_features:
            raise ForestError(f"max_features must be in [1, {n_features}], got {resolved}")
        return resolved

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_trees": self.n_trees,
            "max_features": self.max_features,
            "class_weight": self.class_weight,
            "bootstrap": self.bootstrap,
            "stratified": self.stratified,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "seed": self.seed,
            "n_jobs": self.n_jobs,
        }


@dataclass(eq=False)
class ForestModel:
    """Trained ensemble with each tree's out-of-bag rows."""
    trees: List[DecisionTree]
    oob_indices: List[np.ndarray]
    config: ForestConfig
    n_features: int
    n_samples: int
    class_weights: Dict[int, float] = field(default_factory=lambda: {0: 1.0, 1: 1.0})

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ForestError(f"expected rows of {self.n_features} features, got shape {X.shape}")
        return X

    def tree_proba(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_rows) matrix of per-tree class-1 probabilities."""
        X = self._check(X)
        return np.stack([tree.predict_proba(X) for tree in self.trees])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Mean class-1 probability over trees, one value per row."""
        X = self._check(X)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict_proba(X)
        return np.clip(total / len(self.trees), 0.0, 1.0)

    def oob_fraction(self) -> float:
        """Share of (sample, tree) pairs that are out of bag."""
        return sum(len(oob) for oob in self.oob_indices) / (len(self.trees) * self.n_samples)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FOREST_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "n_samples": self.n_samples,
            "class_weights": {str(k): v for k, v in self.class_weights.items()},
            "trees": [tree.to_dict() for tree in self.trees],
            "oob_indices": [oob.tolist() for oob in self.oob_indices],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ForestModel":
        if d.get("format_version") != FOREST_FORMAT_VERSION:
            raise ForestError(f"unsupported forest format_version {d.get('format_version')!r}")
        try:
            return cls(
                trees=[DecisionTree.from_dict(t) for t in d["trees"]],
                oob_indices=[np.asarray(o, dtype=np.int64) for o in d["oob_indices"]],
                config=ForestConfig(**d["config"]),
                n_features=int(d["n_features"]),
                n_samples=int(d["n_samples"]),
                class_weights={int(k): float(v) for k, v in d["class_weights"].items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ForestError(f"malformed forest document: {exc}") from exc


def balanced_class_weights(y: np.ndarray) -> Dict[int, float]:
    """w_c = n / (2 n_c) for the two classes."""
    y = np.asarray(y)
    n = len(y)
    return {c: n / (2.0 * np.count_nonzero(y == c)) for c in (0, 1)}


def stratified_bootstrap(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resample each class with replacement to its own size; sorted row indices."""
    picks = []
    for c in (0, 1):
        members = np.flatnonzero(y == c)
        picks.append(members[rng.integers(0, len(members), size=len(members))])
    return np.sort(np.concatenate(picks))


def _validate_training_data(X: np.ndarray, y: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ForestError(f"X must be 2D, got shape {X.shape}")
    if y.ndim != 1 or len(y) != X.shape[0]:
        raise ForestError(f"y must be 1D with {X.shape[0]} labels, got shape {y.shape}")
    if X.shape[0] < 2:
        raise ForestError(f"need at least 2 samples, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ForestError("features contain non-finite values")
    if not np.all(np.isin(y, (0, 1))):
        raise ForestError("labels must be binary 0/1")
    y = y.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise ForestError(f"both classes required, got only class {int(y[0])}")
    return X, y


def _fit_one(
    X: np.ndarray,
    y: np.ndarray,
    weight: np.ndarray,
    tree_index: int,
    config: ForestConfig,
    max_features: int,
    rows: Optional[np.ndarray],
):
    rng = np.random.default_rng([int(config.seed), int(tree_index)])
    n = X.shape[0]
    if rows is None:
        if not config.bootstrap:
            rows = np.arange(n)
        elif config.stratified:
            rows = stratified_bootstrap(y, rng)
        else:
            rows = np.sort(rng.integers(0, n, size=n))
    rows = np.asarray(rows, dtype=np.int64)
    oob = np.setdiff1d(np.arange(n), rows)
    tree = build_tree(
        X[rows],
        y[rows],
        weight[rows],
        rng,
        max_features=max_features,
        max_depth=config.max_depth,
        min_samples_leaf=config.min_samples_leaf,
    )
    return tree, oob


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    config: Optional[ForestConfig] = None,
    resample_indices: Optional[Sequence[np.ndarray]] = None,
) -> ForestModel:
    """
    Fit ``config.n_trees`` Gini trees.

    Args:
        X: n x d features
        y: n binary labels
        config: hyperparameters (documented defaults if None)
        resample_indices: optional per-tree row indices replacing the seeded
            bootstrap (one array per tree)

    Raises:
        ForestError: single-class labels, non-finite features, bad shapes
    """
    config = config or ForestConfig()
    X, y = _validate_training_data(X, y)
    max_features = config.resolve_max_features(X.shape[1])
    if resample_indices is not None and len(resample_indices) != config.n_trees:
        raise ForestError(f"expected {config.n_trees} resample index arrays, got {len(resample_indices)}")

    if config.class_weight == "balanced":
        class_weights = balanced_class_weights(y)
    else:
        class_weights = {0: 1.0, 1: 1.0}
    weight = np.where(y == 1, class_weights[1], class_weights[0])

    results = Parallel(n_jobs=config.n_jobs)(
        delayed(_fit_one)(
            X,
            y,
            weight,
            t,
            config,
            max_features,
            None if resample_indices is None else resample_indices[t],
        )
        for t in range(config.n_trees)
    )
    model = ForestModel(
        trees=[tree for tree, _ in results],
        oob_indices=[oob for _, oob in results],
        config=config,
        n_features=X.shape[1],
        n_samples=X.shape[0],
        class_weights=class_weights,
    )
    logger.info(
        "forest fit",
        extra={"n_trees": config.n_trees, "n_samples": X.shape[0], "n_features": X.shape[1], "seed": config.seed},
    )
    return model


def predict_proba(model: ForestModel, x: np.ndarray) -> float:
    """Class-1 probability for one d-vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise ForestError(f"expected a vector of {model.n_features} features, got shape {x.shape}")
    return float(model.predict_proba(x[None, :])[0])


def oob_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Mean class-1 probability from trees where each row was out of bag (NaN if none)."""
    X = model._check(X)
    if X.shape[0] != model.n_samples:
        raise ForestError(f"OOB scoring needs the {model.n_samples} training rows, got {X.shape[0]}")
    total = np.zeros(X.shape[0])
    votes = np.zeros(X.shape[0])
    for tree, oob in zip(model.trees, model.oob_indices):
        if len(oob):
            total[oob] += tree.predict_proba(X[oob])
            votes[oob] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(votes > 0, total / np.maximum(votes, 1), np.nan)


def oob_score(model: ForestModel, X: np.ndarray, y: np.ndarray) -> float:
    """Accuracy over training rows that have at least one out-of-bag tree."""
    proba = oob_proba(model, X)
    covered = ~np.isnan(proba)
    if not covered.any():
        raise ForestError("no sample has an out-of-bag tree")
    y = np.asarray(y)
    predicted = (proba[covered] > 0.5).astype(np.int64)
    return float(np.mean(predicted == y[covered]))


def save_forest(model: ForestModel, path: Path) -> Path:
    return write_json(path, model.to_dict())


def load_forest(path: Path) -> ForestModel:
    path = Path(path)
    if not path.is_file():
        raise ForestError(f"forest file not found: {path}")
    try:
        document = read_json(path)
    except ValueError as exc:
        raise ForestError(f"malformed forest file {path.name}: {exc}") from exc
    return ForestModel.from_dict(document)
