"""Clustering metrics against closed forms and the scikit-learn implementations."""

import numpy as np
import pytest
from sklearn.metrics import (
    adjusted_mutual_info_score,
    adjusted_rand_score,
    normalized_mutual_info_score,
)

from mct import metrics


class TestNmi:
    def test_identical(self):
        labels = [0, 0, 1, 1, 2]
        assert metrics.nmi(labels, labels) == pytest.approx(1.0)

    def test_orthogonal_partitions(self):
        assert metrics.nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_relabeling_invariance(self):
        labels = [0, 0, 1, 1, 2, 2]
        preds = [1, 1, 0, 0, 2, 2]
        remap = [2, 2, 1, 1, 0, 0]
        assert metrics.nmi(labels, preds) == pytest.approx(metrics.nmi(labels, remap))

    def test_both_trivial(self):
        assert metrics.nmi([0, 0, 0], [1, 1, 1]) == 1.0

    def test_one_sided_trivial(self):
        assert metrics.nmi([0, 0, 0], [0, 1, 2]) == 0.0

    def test_matches_sklearn(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            labels = rng.integers(0, 4, size=60)
            preds = rng.integers(0, 5, size=60)
            ours = metrics.nmi(labels, preds)
            ref = normalized_mutual_info_score(labels, preds, average_method="geometric")
            assert ours == pytest.approx(ref, abs=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics.nmi([0, 1], [0, 1, 2])


class TestAri:
    def test_identical(self):
        assert metrics.ari([0, 1, 1, 2], [0, 1, 1, 2]) == pytest.approx(1.0)

    def test_four_point_orthogonal_exact(self):
        assert metrics.ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5

    def test_relabeling_invariance(self):
        labels = [0, 0, 1, 1, 2, 2]
        preds = [0, 1, 1, 2, 2, 0]
        remap = [1, 2, 2, 0, 0, 1]
        assert metrics.ari(labels, preds) == pytest.approx(metrics.ari(labels, remap))

    def test_degenerate_identical_partitions(self):
        assert metrics.ari([0, 0, 0], [1, 1, 1]) == 1.0
        assert metrics.ari([0, 1, 2], [2, 0, 1]) == 1.0

    def test_matches_sklearn(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            labels = rng.integers(0, 4, size=60)
            preds = rng.integers(0, 5, size=60)
            assert metrics.ari(labels, preds) == pytest.approx(
                adjusted_rand_score(labels, preds), abs=1e-10
            )

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 3, size=40)
        preds = rng.integers(0, 4, size=40)
        assert metrics.ari(labels, preds) == pytest.approx(metrics.ari(preds, labels))


class TestAmi:
    def test_identical(self):
        assert metrics.ami([0, 1, 1, 2], [0, 1, 1, 2]) == pytest.approx(1.0)

    def test_orthogonal_not_positive(self):
        assert metrics.ami([0, 0, 1, 1], [0, 1, 0, 1]) <= 0.0

    def test_matches_sklearn(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            labels = rng.integers(0, 4, size=50)
            preds = rng.integers(0, 5, size=50)
            ref = adjusted_mutual_info_score(labels, preds, average_method="arithmetic")
            assert metrics.ami(labels, preds) == pytest.approx(ref, abs=1e-8)

    def test_chance_level_near_zero(self):
        rng = np.random.default_rng(4)
        vals = []
        for _ in range(20):
            labels = rng.integers(0, 5, size=1000)
            preds = rng.integers(0, 5, size=1000)
            vals.append(metrics.ami(labels, preds))
        assert abs(np.mean(vals)) < 0.05

    def test_expected_mi_matches_sklearn(self):
        from sklearn.metrics.cluster import contingency_matrix, expected_mutual_information

        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, size=30)
        preds = rng.integers(0, 4, size=30)
        table = metrics.ContingencyTable.from_labels(labels, preds)
        ref = expected_mutual_information(contingency_matrix(labels, preds), 30)
        assert metrics.expected_mutual_information(table) == pytest.approx(ref, abs=1e-10)


class TestContingencyTable:
    def test_counts_sum_to_n(self):
        table = metrics.ContingencyTable.from_labels([0, 0, 1], [1, 1, 0])
        assert table.counts.sum() == 3

    def test_identical_partition_detection(self):
        t = metrics.ContingencyTable.from_labels([0, 0, 1], [5, 5, 2])
        assert t.is_identical_partition()
        t = metrics.ContingencyTable.from_labels([0, 0, 1], [0, 1, 1])
        assert not t.is_identical_partition()
