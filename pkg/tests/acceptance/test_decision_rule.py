"""Acceptance: the patient decision rule against a brute-force run scan."""

import numpy as np
import pytest

from src.screening import classify_patient, patient_score

pytestmark = pytest.mark.acceptance


def longest_run_at(probs, threshold):
    best = current = 0
    for p in probs:
        current = current + 1 if p >= threshold else 0
        best = max(best, current)
    return best


class TestRunRuleOracle:
    """Run-rule decisions over random probability sequences.

    Acceptance Metrics:
    - 10,000 sequences, lengths 1-300
    - L in {1, 4, 8, 12}, tau in {0.05, 0.15, 0.5}
    - zero disagreements with a direct run scan
    """

    def test_agrees_with_brute_force(self):
        rng = np.random.default_rng(20240601)
        lengths = (1, 4, 8, 12)
        thresholds = (0.05, 0.15, 0.5)
        disagreements = 0
        for i in range(10_000):
            n = int(rng.integers(1, 301))
            # mix smooth and quantized sequences so exact ties with tau occur
            if i % 2:
                probs = rng.random(n)
            else:
                probs = rng.choice([0.0, 0.05, 0.1, 0.15, 0.2, 0.5, 0.9], size=n)
            run_length = lengths[i % 4]
            tau = thresholds[(i // 4) % 3]
            expected = longest_run_at(probs, tau) >= run_length
            if classify_patient(patient_score(probs, run_length), tau) != expected:
                disagreements += 1
        assert disagreements == 0

    def test_score_is_largest_passing_threshold(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            probs = np.round(rng.random(int(rng.integers(8, 60))), 2)
            score = patient_score(probs, 8)
            assert longest_run_at(probs, score) >= 8
            assert longest_run_at(probs, np.nextafter(score, 2.0)) < 8
