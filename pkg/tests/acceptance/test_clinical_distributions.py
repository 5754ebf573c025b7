"""Acceptance: sampled clinical records match the per-class cohort table."""

import numpy as np
import pytest

from src.synthesis import ClinicalDistributions, sample_clinical_batch

pytestmark = pytest.mark.acceptance

N_SAMPLES = 10_000


class TestClinicalDistributionFit:
    """Per-class medians, IQRs and DRE rates.

    Acceptance Metrics:
    - n = 10,000 samples per class (seed 42)
    - medians within 5% of target
    - q1 and q3 each within 10% of target
    - DRE rate within 0.01 (negatives) and 0.015 (positives, three standard errors at n = 10,000)
    """

    @pytest.mark.parametrize("positive", [True, False])
    def test_table_targets(self, positive):
        dists = ClinicalDistributions()
        target = dists.for_class(positive)
        batch = sample_clinical_batch(positive, dists, np.random.default_rng(42), N_SAMPLES)
        for name in ("age", "psa", "volume"):
            q1, median, q3 = np.percentile(batch[name], [25, 50, 75])
            expected = getattr(target, name)
            assert median == pytest.approx(expected.median, rel=0.05), name
            assert q1 == pytest.approx(expected.q1, rel=0.10), name
            assert q3 == pytest.approx(expected.q3, rel=0.10), name
        tolerance = 0.015 if positive else 0.01
        assert abs(batch["dre"].mean() - target.dre_rate) <= tolerance

    def test_classes_differ_in_expected_direction(self):
        dists = ClinicalDistributions()
        rng = np.random.default_rng(0)
        positive = sample_clinical_batch(True, dists, rng, N_SAMPLES)
        negative = sample_clinical_batch(False, dists, rng, N_SAMPLES)
        assert np.median(positive["psa"]) > np.median(negative["psa"])
        assert np.median(positive["volume"]) < np.median(negative["volume"])
        assert positive["dre"].mean() > negative["dre"].mean()
