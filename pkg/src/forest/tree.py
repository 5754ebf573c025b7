"""
Weighted CART tree for binary labels.

Trees are stored as flat parallel arrays (preorder): ``feature[i] == -1``
marks a leaf, otherwise samples with ``x[feature[i]] <= threshold[i]`` go to
``left[i]`` and the rest to ``right[i]``. ``value[i]`` is the weighted
class-1 fraction of the training samples that reached node i.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

LEAF = -1

# Impurity differences below this are ties
IMPURITY_TOL = 1e-12


@dataclass(eq=False)
class DecisionTree:
    """Flattened binary tree."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int

    @classmethod
    def leaf(cls, probability: float, n_features: int) -> "DecisionTree":
        """Single-leaf tree that always predicts ``probability`` for class 1."""
        return cls(
            feature=np.array([LEAF], dtype=np.int64),
            threshold=np.zeros(1),
            left=np.array([LEAF], dtype=np.int64),
            right=np.array([LEAF], dtype=np.int64),
            value=np.array([float(probability)]),
            n_features=n_features,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature == LEAF))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of X."""
        X = np.asarray(X, dtype=np.float64)
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            internal = self.feature[nodes] != LEAF
            if not internal.any():
                return nodes
            active = rows[internal]
            current = nodes[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            nodes[active] = np.where(go_left, self.left[current], self.right[current])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Class-1 probability per row."""
        return self.value[self.apply(X)]

    def structure_equals(self, other: "DecisionTree") -> bool:
        return (
            self.n_features == other.n_features
            and np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.value, other.value)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "DecisionTree":
        tree = cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_features=int(d["n_features"]),
        )
        errors = tree.validate()
        if errors:
            raise ValueError("; ".join(errors))
        return tree

    def validate(self) -> List[str]:
        errors = []
        n = self.n_nodes
        if not (len(self.threshold) == len(self.left) == len(self.right) == len(self.value) == n):
            errors.append("tree arrays have different lengths")
            return errors
        internal = self.feature != LEAF
        if np.any((self.left[internal] < 0) | (self.left[internal] >= n)) or np.any(
            (self.right[internal] < 0) | (self.right[internal] >= n)
        ):
            errors.append("internal node with a missing child")
        if np.any(self.feature[internal] >= self.n_features):
            errors.append("split feature out of range")
        if np.any((self.value < 0.0) | (self.value > 1.0)):
            errors.append("node probability outside [0, 1]")
        return errors


def weighted_gini(total: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """Gini impurity 2p(1-p) from total and class-1 weight."""
    p = positive / total
    return 2.0 * p * (1.0 - p)


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    weight: np.ndarray,
    features: Sequence[int],
    min_samples_leaf: int = 1,
    max_features: Optional[int] = None,
) -> Optional[Tuple[float, int, float]]:
    """
    Lowest weighted-Gini split over midpoints of consecutive distinct values.

    Features are visited in the given order; the search stops once
    ``max_features`` features were tried and a valid split exists. Ties keep the
    smaller threshold within a feature and the earlier feature across features.

    Returns:
        (impurity, feature, threshold) or None if no feature can be split
    """
    n = X.shape[0]
    total = weight.sum()
    total_positive = (weight * y).sum()
    limit = len(features) if max_features is None else max_features
    best: Optional[Tuple[float, int, float]] = None

    for tried, f in enumerate(features):
        if tried >= limit and best is not None:
            break
        values = X[:, f]
        order = np.argsort(values, kind="mergesort")
        v = values[order]
        w = weight[order]
        left_w = np.cumsum(w)[:-1]
        left_pos = np.cumsum(w * y[order])[:-1]

        valid = v[1:] > v[:-1]
        if min_samples_leaf > 1:
            left_count = np.arange(1, n)
            valid &= (left_count >= min_samples_leaf) & (n - left_count >= min_samples_leaf)
        if not valid.any():
            continue

        lw, lp = left_w[valid], left_pos[valid]
        rw, rp = total - lw, total_positive - lp
        impurity = (lw * weighted_gini(lw, lp) + rw * weighted_gini(rw, rp)) / total
        lo, hi = v[:-1][valid], v[1:][valid]

        k = int(np.flatnonzero(impurity <= impurity.min() + IMPURITY_TOL)[0])
        threshold = (lo[k] + hi[k]) / 2.0
        if threshold >= hi[k]:
            threshold = lo[k]
        if best is None or impurity[k] < best[0] - IMPURITY_TOL:
            best = (float(impurity[k]), int(f), float(threshold))
    return best


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    weight: np.ndarray,
    rng: np.random.Generator,
    max_features: int,
    max_depth: Optional[int] = None,
    min_samples_leaf: int = 1,
) -> DecisionTree:
    """Grow a tree depth-first until nodes are pure or limits are hit."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n_features = X.shape[1]

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []

    # (row indices, depth, parent node, is_left_child)
    stack = [(np.arange(X.shape[0]), 0, LEAF, False)]
    while stack:
        rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent != LEAF:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node

        w = weight[rows]
        total = w.sum()
        positive = (w * y[rows]).sum()
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(positive / total))

        if positive == 0.0 or positive == total:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if len(rows) < 2 * min_samples_leaf:
            continue

        order = rng.permutation(n_features)
        split = best_split(X[rows], y[rows], w, order, min_samples_leaf, max_features)
        if split is None:
            continue
        _, f, t = split
        goes_left = X[rows, f] <= t
        feature[node] = f
        threshold[node] = t
        # right pushed first so the left subtree is numbered first
        stack.append((rows[~goes_left], depth + 1, node, False))
        stack.append((rows[goes_left], depth + 1, node, True))

    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_features=n_features,
    )
