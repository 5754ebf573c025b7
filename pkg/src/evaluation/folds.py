"""
Patient-level fold assignment with test/validation/training role rotation.

Round r tests on fold r, validates on fold (r + 1) mod k and trains on the
remaining k - 2 folds, so every patient is tested once and validated once.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from src.dataset import Cohort


@dataclass
class FoldAssignment:
    """Patient -> fold map for k-fold cross-validation."""
    k: int
    fold_of: Dict[str, int]

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> List[str]:
        errors = []
        if self.k < 3:
            errors.append(f"k must be >= 3 for disjoint test/validation/training roles, got {self.k}")
        bad = sorted(pid for pid, fold in self.fold_of.items() if not 0 <= fold < self.k)
        if bad:
            errors.append(f"fold index out of range for {bad}")
        return errors

    def fold_members(self, fold: int) -> List[str]:
        return sorted(pid for pid, f in self.fold_of.items() if f == fold)

    def validation_fold(self, round_index: int) -> int:
        return (round_index + 1) % self.k

    def test_ids(self, round_index: int) -> List[str]:
        return self.fold_members(round_index)

    def validation_ids(self, round_index: int) -> List[str]:
        return self.fold_members(self.validation_fold(round_index))

    def training_ids(self, round_index: int) -> List[str]:
        held_out = {round_index, self.validation_fold(round_index)}
        return sorted(pid for pid, f in self.fold_of.items() if f not in held_out)

    def roles(self, round_index: int) -> Tuple[List[str], List[str], List[str]]:
        """(training, validation, test) patient ids for a round."""
        if not 0 <= round_index < self.k:
            raise ValueError(f"round must be in [0, {self.k}), got {round_index}")
        return self.training_ids(round_index), self.validation_ids(round_index), self.test_ids(round_index)

    def fold_sizes(self) -> List[int]:
        return [len(self.fold_members(f)) for f in range(self.k)]

    def to_dict(self) -> Dict:
        return {"k": self.k, "fold_of": dict(sorted(self.fold_of.items()))}


def make_folds(cohort: Cohort, k: int = 5, seed: int = 0) -> FoldAssignment:
    """
    Stratified random partition into k folds.

    Each class is shuffled and dealt round-robin; negatives continue from the
    fold after the last positive so fold sizes also differ by at most one.

    Raises:
        ValueError: duplicate patient ids, or fewer than k patients of a class
    """
    labels = cohort.labels()
    if len(labels) != len(cohort):
        raise ValueError("cohort has duplicate patient ids; run validate_cohort first")
    positives = sorted(pid for pid, cspca in labels.items() if cspca)
    negatives = sorted(pid for pid, cspca in labels.items() if not cspca)
    if len(positives) < k or len(negatives) < k:
        raise ValueError(
            f"need at least {k} patients per class for {k} folds, got {len(positives)} positive "
            f"and {len(negatives)} negative"
        )

    rng = np.random.default_rng(seed)
    fold_of: Dict[str, int] = {}
    offset = 0
    for members in (positives, negatives):
        order = rng.permutation(len(members))
        for position, index in enumerate(order):
            fold_of[members[index]] = (offset + position) % k
        offset = (offset + len(members)) % k
    return FoldAssignment(k=k, fold_of=fold_of)
