import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cslearn import checks
from cslearn.losses import LossKind
from cslearn.metrics import CondProbTable, soft_confusion


def test_relative_error_floor():
    assert checks.relative_grad_error([1e-9], [2e-9]) == pytest.approx(1e-9 / checks.GRAD_FLOOR)
    assert checks.relative_grad_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)


def test_suite_result_line_and_json():
    r = checks.SuiteResult("demo", np.bool_(True), 3, np.float64(2e-8), 1e-4, {"k": 1})
    assert r.line() == "PASS demo: 3 cases, worst 2.000e-08 (tol 0.0001)"
    json.dumps(r.to_dict())


@pytest.mark.parametrize("kind", list(LossKind), ids=lambda k: k.value)
def test_random_loss_is_evaluable(kind):
    spec = checks.random_loss(kind, np.random.default_rng(0), 4)
    assert spec.kind is kind
    assert spec.m == 4


def test_simplex_grid():
    g = checks.simplex_grid(3, 0.25)
    assert g.shape[0] == checks.simplex_grid_size(3, 0.25) == 15
    assert_allclose(g.sum(axis=1), 1.0)
    assert checks.simplex_grid_size(10, 0.01) > 10**12


def test_grid_search_finds_brute_force_optimum():
    rng = np.random.default_rng(5)
    cond = CondProbTable.random(rng, 12, 2)
    prior = cond.class_prior()
    best, lam = checks.grid_search_min_recall(cond.p, cond.p, prior, weights=cond.mu, resolution=0.05)
    brute = -np.inf
    for a in np.linspace(0, 1, 21):
        l = np.array([a, 1 - a])
        preds = np.argmax(cond.p * (l / prior), axis=1) + 1
        C = soft_confusion(cond.p, preds, cond.mu)
        brute = max(brute, (np.diag(C) / C.sum(axis=1)).min())
    assert best == pytest.approx(brute, abs=1e-12)
    assert lam.sum() == pytest.approx(1.0)


def test_small_suites_pass():
    assert checks.gradient_suite(n_draws=5).passed
    assert all(r.passed for r in checks.identity_suite(n_draws=20))
    assert checks.memorization_suite(n_instances=3).passed
    assert checks.calibration_suite(n_problems=2).passed
