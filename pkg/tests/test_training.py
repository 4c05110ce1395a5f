import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from cslearn.gainmat import Factorization
from cslearn.losses import LossKind, LossSpec
from cslearn.metrics import CondProbTable
from cslearn.training import (ConvergenceWarning, Dataset, LinearModel, MlpModel, Model, TabularModel, TrainConfig,
                              Trainer, TrainingError, predict, sgd_train, tabular_fit, with_teacher)


def softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([1, 2], n // 2)
    X = rng.normal(0, 0.5, (n, 2))
    X[:, 0] += np.where(y == 1, -3.0, 3.0)
    return Dataset(X, y, 2)


class TestDataset:
    def test_priors_and_counts(self):
        d = Dataset(np.zeros((4, 1)), [1, 1, 1, 2], 3)
        assert_array_equal(d.class_counts(), [3, 1, 0])
        assert_allclose(d.priors, [0.75, 0.25, 0.0])

    def test_validation(self):
        with pytest.raises(ValueError, match="1..2"):
            Dataset(np.zeros((2, 1)), [1, 3], 2)
        with pytest.raises(ValueError, match="simplex"):
            Dataset(np.zeros((1, 1)), [1], 2, teacher=[[0.6, 0.6]])
        with pytest.raises(ValueError, match="one label"):
            Dataset(np.zeros((2, 1)), [1], 2)

    def test_with_teacher(self):
        d = with_teacher(Dataset(np.zeros((2, 1)), [1, 2], 2), np.array([[0.9, 0.1], [0.2, 0.8]]), prior=[0.5, 0.5])
        assert d.targets().shape == (2, 2)
        assert_allclose(d.priors, [0.5, 0.5])


class TestPredict:
    def test_tabular(self):
        assert_array_equal(predict(TabularModel([[0.0, 1.0]]), [0]), [2])

    def test_tie_goes_to_class_one(self):
        assert_array_equal(predict(TabularModel([[0.0, 0.0]]), [0]), [1])

    def test_linear_bias_only(self):
        m = LinearModel(np.zeros((3, 3)), [1.0, 0.0, 0.0])
        assert_array_equal(predict(m, np.random.default_rng(0).normal(size=(5, 3))), 1)

    def test_tabular_out_of_space(self):
        with pytest.raises(ValueError, match="instance space"):
            TabularModel.zeros(2, 2).scores([2])


class TestSgd:
    CFG = TrainConfig(lr=0.1, momentum=0.9, batch_size=32, steps=300, seed=4)

    def test_zero_steps_returns_initial(self):
        m0 = LinearModel.init(2, 2, seed=1)
        out = sgd_train(m0, LossSpec.standard(2), separable(), TrainConfig(steps=0))
        assert out == m0
        assert out is not m0

    def test_separable_reaches_full_accuracy(self):
        data = separable()
        out = sgd_train(LinearModel.init(2, 2), LossSpec.standard(2), data, self.CFG)
        assert np.mean(predict(out, data.X) == data.y) == 1.0

    @pytest.mark.parametrize("make", [lambda: LinearModel.init(2, 2, seed=3), lambda: MlpModel.init(2, 2, 8, seed=3)])
    def test_deterministic(self, make):
        data = separable()
        a = sgd_train(make(), LossSpec.standard(2), data, self.CFG)
        b = sgd_train(make(), LossSpec.standard(2), data, self.CFG)
        assert a == b

    def test_warm_start_continues_stream(self):
        # two runs of k steps on one trainer equal a single run of 2k steps
        data = separable()
        cfg = TrainConfig(lr=0.05, batch_size=48, steps=10, seed=2)
        t1 = Trainer(LinearModel.init(2, 2), cfg)
        t1.run(LossSpec.standard(2), data, 10)
        t1.run(LossSpec.standard(2), data, 10)
        t2 = Trainer(LinearModel.init(2, 2), cfg)
        t2.run(LossSpec.standard(2), data, 20)
        assert t1.model == t2.model

    def test_mlp_gradient(self):
        rng = np.random.default_rng(0)
        model = MlpModel.init(3, 4, 5, seed=0)
        X = rng.normal(size=(6, 3))
        y = rng.integers(1, 5, 6)
        loss = LossSpec.standard(4)

        def total(m):
            return float(loss(y, m.scores(X)).value.sum())

        S, cache = model.forward(X)
        grads = model.backward(cache, loss(y, S).grad)
        for p, g in zip(model.params(), grads):
            flat = p.ravel()
            for k in range(0, flat.size, max(1, flat.size // 7)):
                old = flat[k]
                flat[k] = old + 1e-6
                up = total(model)
                flat[k] = old - 1e-6
                down = total(model)
                flat[k] = old
                assert g.ravel()[k] == pytest.approx((up - down) / 2e-6, rel=1e-4, abs=1e-7)

    def test_divergence_reports_step(self):
        data = separable()
        data.X *= 1e200
        with np.errstate(all="ignore"), pytest.raises(TrainingError, match=r"at step \d+"):
            sgd_train(LinearModel.init(2, 2), LossSpec.standard(2), data, TrainConfig(lr=1e10, steps=5))

    def test_schedule(self):
        cfg = TrainConfig(lr=1.0, steps=1, schedule=((10, 0.1), (20, 0.5)))
        assert cfg.lr_at(5) == 1.0
        assert cfg.lr_at(15) == pytest.approx(0.1)
        assert cfg.lr_at(25) == pytest.approx(0.05)

    @pytest.mark.parametrize("kwargs", [dict(lr=0.0), dict(momentum=1.0), dict(batch_size=0),
                                        dict(schedule=((5, 0.1), (5, 0.1)))])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_total_steps(self):
        assert TrainConfig(epochs=2, batch_size=30).total_steps(100) == 8
        with pytest.raises(ValueError):
            TrainConfig().total_steps(100)


class TestCheckpoint:
    @pytest.mark.parametrize("model", [TabularModel([[0.1, -2.0]]), LinearModel.init(3, 2, seed=5),
                                       MlpModel.init(3, 2, 4, seed=5)])
    def test_roundtrip(self, model):
        text = model.to_json()
        back = Model.from_json(text)
        assert back == model
        assert back.to_json() == text

    def test_rejects_unknown_format(self):
        with pytest.raises(ValueError, match="checkpoint"):
            Model.from_dict({"format": "other", "version": 1})


class TestTabularFit:
    def test_logit_adjusted_identity(self):
        cond = CondProbTable(p=[[0.25, 0.75]], mu=[1.0])
        model = tabular_fit(LossSpec(LossKind.LOGIT_ADJUSTED, gain=np.eye(2)), cond)
        assert model.fit_info.converged
        assert_allclose(softmax(model.table[0]), [0.25, 0.75], atol=1e-3)

    def test_weighted_memorization(self):
        cond = CondProbTable(p=[[1.0, 0.0]], mu=[1.0])
        model = tabular_fit(LossSpec(LossKind.WEIGHTED_CE, gain=[[1.0, 3.0], [0.0, 1.0]]), cond)
        assert_allclose(softmax(model.table[0]), [0.25, 0.75], atol=1e-3)

    def test_hybrid_matches_transformed_posterior(self):
        M = np.array([[1.0, 0.5, 0.0], [0.2, 1.0, 0.3], [0.0, 0.4, 2.0]])
        D = np.array([0.5, 1.5, 3.0])
        p = np.array([0.5, 0.3, 0.2])
        cond = CondProbTable(p=[p], mu=[1.0])
        model = tabular_fit(LossSpec(LossKind.HYBRID, factorization=Factorization(M, D)), cond)
        q = M.T @ p
        assert_allclose(softmax(model.table[0] - np.log(D)), q / q.sum(), atol=1e-3)

    def test_non_convergence_warns(self):
        cond = CondProbTable(p=[[0.25, 0.75]], mu=[1.0])
        with pytest.warns(ConvergenceWarning, match="gradient"):
            model = tabular_fit(LossSpec.standard(2), cond, iters=2)
        assert not model.fit_info.converged
        assert model.fit_info.grad_norm > 1e-7

    def test_quiet_when_converged(self):
        cond = CondProbTable(p=[[0.5, 0.5]], mu=[1.0])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            tabular_fit(LossSpec.standard(2), cond)
