import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from cslearn.gainmat import GroupSpec
from cslearn.metrics import (CondProbTable, bayes_classify, confusion, confusion_from_csv, confusion_to_csv,
                             finite_diff_grad, memorization_target, metrics_from, optimal_scores, soft_confusion)


class TestConfusion:
    def test_counts(self):
        C = confusion([1, 1, 2, 2], [1, 2, 2, 2], 2)
        assert_allclose(C, [[0.25, 0.25], [0.0, 0.5]])

    def test_weights(self):
        C = confusion([1, 2], [2, 2], 2, weights=[0.3, 0.7])
        assert_allclose(C, [[0.0, 0.3], [0.0, 0.7]])

    @pytest.mark.parametrize("labels, preds, match", [
        ([1, 3], [1, 1], "label out of range"),
        ([1, 2], [0, 1], "prediction out of range"),
        ([1], [1, 2], "equal-length"),
        ([], [], "empty"),
    ])
    def test_errors(self, labels, preds, match):
        with pytest.raises(ValueError, match=match):
            confusion(np.array(labels, dtype=int), np.array(preds, dtype=int), 2)

    def test_soft_matches_hard_for_one_hot(self):
        rng = np.random.default_rng(0)
        y = rng.integers(1, 4, 50)
        pred = rng.integers(1, 4, 50)
        assert_allclose(soft_confusion(np.eye(3)[y - 1], pred), confusion(y, pred, 3), atol=1e-15)

    def test_csv_roundtrip(self):
        C = np.array([[0.1, 1 / 3], [1e-20, 0.5]])
        assert_array_equal(confusion_from_csv(confusion_to_csv(C)), C)


class TestMetrics:
    C = np.array([[0.3, 0.1, 0.0], [0.05, 0.25, 0.0], [0.1, 0.1, 0.1]])
    prior = C.sum(axis=1)

    def test_values(self):
        r = metrics_from(self.C, self.prior)
        assert_allclose(r.recall, [0.75, 0.25 / 0.3, 1 / 3])
        assert r.accuracy == pytest.approx(0.65)
        assert r.min_recall == pytest.approx(1 / 3)
        assert r.avg_recall == pytest.approx(np.mean([0.75, 0.25 / 0.3, 1 / 3]))
        assert_allclose(r.coverage, [0.45, 0.45, 0.1])
        assert r.precision[2] == pytest.approx(1.0)
        assert r.min_precision == pytest.approx(0.25 / 0.45)

    def test_balanced_coverage_sums_to_m(self):
        r = metrics_from(self.C, self.prior)
        assert sum(r.balanced_coverage) == pytest.approx(3.0)

    def test_undefined_precision(self):
        C = np.array([[0.5, 0.0], [0.5, 0.0]])
        r = metrics_from(C, [0.5, 0.5])
        assert r.precision[1] is None
        assert r.min_precision == pytest.approx(0.5)

    def test_gain_and_groups(self):
        r = metrics_from(self.C, self.prior, gain=np.eye(3), groups=GroupSpec(head={1, 2}, tail={3}))
        assert r.weighted_accuracy == pytest.approx(0.65)
        assert r.group_recall[1] == pytest.approx(1 / 3)
        assert r.min_group_recall == pytest.approx(1 / 3)

    def test_to_dict_is_flat_json(self):
        d = metrics_from(self.C, self.prior).to_dict()
        assert d["recall_1"] == pytest.approx(0.75)
        assert "recall" not in d
        json.dumps(d)

    def test_errors(self):
        with pytest.raises(ValueError, match="expected"):
            metrics_from(self.C, [0.5, 0.5])
        with pytest.raises(ValueError, match="strictly positive"):
            metrics_from(self.C, [0.5, 0.5, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_min_recall_bounded_by_avg(self, seed):
        rng = np.random.default_rng(seed)
        C = rng.dirichlet(np.ones(16)).reshape(4, 4)
        r = metrics_from(C, C.sum(axis=1))
        assert r.min_recall <= r.avg_recall + 1e-15
        assert 0.0 <= r.accuracy <= 1.0 + 1e-12


class TestOracles:
    def test_bayes_classify(self):
        # G^T p = (0.6, 0.7): class 2 wins
        G = np.array([[1.0, 0.5], [0.0, 1.0]])
        assert bayes_classify(G, [0.6, 0.4]) == 2

    def test_bayes_tie_goes_to_lowest(self):
        assert bayes_classify(np.eye(3), [0.4, 0.4, 0.2]) == 1

    def test_bayes_batch(self):
        assert_array_equal(bayes_classify(np.eye(2), [[0.9, 0.1], [0.2, 0.8]]), [1, 2])

    def test_optimal_scores(self):
        assert_allclose(optimal_scores(np.eye(2), [0.5, 0.25]), [np.log(0.5), np.log(0.25)])
        assert_allclose(optimal_scores(np.diag([1.0, 2.0]), [0.5, 0.25]) - np.log(0.5),
                        [0.0, 0.0], atol=1e-15)
        with pytest.raises(ValueError):
            optimal_scores(np.eye(2), [1.0, 0.0])

    def test_memorization_target(self):
        assert_allclose(memorization_target([[3.0, 1.0], [0.0, 1.0]], 1), [0.75, 0.25])
        with pytest.raises(ValueError, match="sums to zero"):
            memorization_target([[0.0, 0.0], [0.0, 1.0]], 1)

    def test_finite_diff_grad(self):
        g = finite_diff_grad(lambda t, s: float(t @ s ** 2), np.array([1.0, 2.0]), [1.0, -1.0])
        assert_allclose(g, [2.0, -4.0], atol=1e-8)
        with pytest.raises(ValueError):
            finite_diff_grad(lambda t, s: 0.0, None, [0.0], step=0.0)


class TestCondProbTable:
    def test_random_respects_floor(self):
        t = CondProbTable.random(np.random.default_rng(0), 30, 4, floor=0.05)
        assert t.p.min() >= 0.05 - 1e-15
        assert t.class_prior().sum() == pytest.approx(1.0)

    def test_population_confusion(self):
        t = CondProbTable(p=[[0.7, 0.3], [0.2, 0.8]], mu=[0.5, 0.5])
        C = t.confusion(np.array([1, 2]))
        assert_allclose(C, [[0.35, 0.1], [0.15, 0.4]])
        assert_allclose(C.sum(axis=1), t.class_prior())

    def test_validation(self):
        with pytest.raises(ValueError, match="simplex"):
            CondProbTable(p=[[0.7, 0.7]], mu=[1.0])
        with pytest.raises(ValueError, match="masses"):
            CondProbTable(p=[[0.5, 0.5]], mu=[0.5])
