"""Score models, a momentum-SGD trainer and the population-level tabular fit."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossSpec
from .metrics import CondProbTable

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


# -- data --------------------------------------------------------------------


@dataclass
class Dataset:
    """Features, 1-based labels and optional teacher distributions.

    ``x_ids`` indexes a finite instance space (tabular models).  ``prior``
    overrides the empirical label frequencies, e.g. with teacher priors.
    """

    X: np.ndarray
    y: np.ndarray
    m: int
    teacher: np.ndarray | None = None
    x_ids: np.ndarray | None = None
    prior: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=int)
        if self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("need one label per feature row")
        if np.any(self.y < 1) or np.any(self.y > self.m):
            raise ValueError(f"labels must lie in 1..{self.m}")
        if self.teacher is not None:
            self.teacher = np.asarray(self.teacher, dtype=float)
            if self.teacher.shape != (self.n, self.m):
                raise ValueError("teacher rows must be (n, m)")
            if np.any(self.teacher < 0) or np.any(np.abs(self.teacher.sum(axis=1) - 1) > 1e-9):
                raise ValueError("teacher rows must lie on the simplex")
        if self.x_ids is not None:
            self.x_ids = np.asarray(self.x_ids, dtype=int)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y - 1, minlength=self.m)

    @property
    def priors(self) -> np.ndarray:
        if self.prior is not None:
            return np.asarray(self.prior, dtype=float)
        return self.class_counts() / self.n

    def targets(self):
        """Teacher rows if present, otherwise the hard labels."""
        return self.teacher if self.teacher is not None else self.y


# -- models --------------------------------------------------------------------


class Model:
    kind = ""
    param_names: tuple[str, ...] = ()

    def params(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in self.param_names]

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})
        return new

    def inputs(self, data: Dataset):
        return data.X

    def scores(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def forward(self, X):
        raise NotImplementedError

    def backward(self, cache, dS) -> list[np.ndarray]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": "cslearn.model",
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "params": {k: {"shape": list(getattr(self, k).shape), "data": getattr(self, k).ravel().tolist()}
                       for k in self.param_names},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> Model:
        if d.get("format") != "cslearn.model" or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a version-1 cslearn model checkpoint")
        cls = {c.kind: c for c in (TabularModel, LinearModel, MlpModel)}[d["kind"]]
        arrays = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(**arrays)

    @staticmethod
    def from_json(text: str) -> Model:
        return Model.from_dict(json.loads(text))

    def __eq__(self, other):
        return type(self) is type(other) and all(
            np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


class TabularModel(Model):
    """Free score vector per point of a finite instance space."""

    kind = "tabular"
    param_names = ("table",)

    def __init__(self, table):
        self.table = np.array(table, dtype=float)

    @classmethod
    def zeros(cls, n_points: int, m: int) -> TabularModel:
        return cls(np.zeros((n_points, m)))

    def inputs(self, data: Dataset):
        if data.x_ids is None:
            raise ValueError("tabular models need x_ids")
        return data.x_ids

    def forward(self, X):
        ids = np.asarray(X, dtype=int).ravel()
        if np.any(ids < 0) or np.any(ids >= self.table.shape[0]):
            raise ValueError("x-id outside the tabulated instance space")
        return self.table[ids], ids

    def backward(self, ids, dS):
        g = np.zeros_like(self.table)
        np.add.at(g, ids, dS)
        return [g]


class LinearModel(Model):
    kind = "linear"
    param_names = ("W", "b")

    def __init__(self, W, b):
        self.W = np.array(W, dtype=float)
        self.b = np.array(b, dtype=float)

    @classmethod
    def init(cls, d: int, m: int, seed: int = 0) -> LinearModel:
        rng = np.random.default_rng(seed)
        r = 1.0 / math.sqrt(d)
        return cls(rng.uniform(-r, r, size=(d, m)), np.zeros(m))

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        return X @ self.W + self.b, X

    def backward(self, X, dS):
        return [X.T @ dS, dS.sum(axis=0)]


class MlpModel(Model):
    """One hidden rectifier layer."""

    kind = "mlp"
    param_names = ("W1", "b1", "W2", "b2")

    def __init__(self, W1, b1, W2, b2):
        self.W1 = np.array(W1, dtype=float)
        self.b1 = np.array(b1, dtype=float)
        self.W2 = np.array(W2, dtype=float)
        self.b2 = np.array(b2, dtype=float)

    @classmethod
    def init(cls, d: int, m: int, hidden: int = 64, seed: int = 0) -> MlpModel:
        rng = np.random.default_rng(seed)
        r1, r2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(hidden)
        return cls(rng.uniform(-r1, r1, size=(d, hidden)), np.zeros(hidden),
                   rng.uniform(-r2, r2, size=(hidden, m)), np.zeros(m))

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        pre = X @ self.W1 + self.b1
        H = np.maximum(pre, 0.0)
        return H @ self.W2 + self.b2, (X, pre, H)

    def backward(self, cache, dS):
        X, pre, H = cache
        dH = (dS @ self.W2.T) * (pre > 0)
        return [X.T @ dH, dH.sum(axis=0), H.T @ dS, dS.sum(axis=0)]


def predict(model: Model, features) -> np.ndarray:
    """Argmax labels (1-based, lowest index wins ties)."""
    return np.argmax(model.scores(features), axis=1) + 1


# -- SGD -------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    steps: int | None = None
    epochs: int | None = None
    seed: int = 0
    schedule: tuple[tuple[int, float], ...] = ()
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        self.schedule = tuple((int(s), float(f)) for s, f in self.schedule)
        at = [s for s, _ in self.schedule]
        if any(b <= a for a, b in zip(at, at[1:])):
            raise ValueError("schedule steps must be strictly increasing")

    def total_steps(self, n: int) -> int:
        if self.steps is not None:
            return self.steps
        if self.epochs is not None:
            return self.epochs * math.ceil(n / self.batch_size)
        raise ValueError("set either steps or epochs")

    def lr_at(self, step: int) -> float:
        lr = self.lr
        for at, factor in self.schedule:
            if step >= at:
                lr *= factor
        return lr


class Trainer:
    """Stateful momentum SGD: owns the model, velocities and the shuffling stream.

    Successive :meth:`run` calls continue the same stream, which is how the
    reduction loops warm-start each cost-sensitive step.
    """

    def __init__(self, model: Model, cfg: TrainConfig):
        self.model = model.copy()
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.velocity = [np.zeros_like(p) for p in self.model.params()]
        self.step = 0
        self._order = np.empty(0, dtype=int)
        self._pos = 0

    def _next_batch(self, n: int) -> np.ndarray:
        bs = min(self.cfg.batch_size, n)
        if self._pos + bs > self._order.shape[0]:
            self._order = self.rng.permutation(n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + bs]
        self._pos += bs
        return idx

    def run(self, loss: LossSpec, data: Dataset, n_steps: int) -> Model:
        X = self.model.inputs(data)
        targets = data.targets()
        params = self.model.params()
        wd = self.cfg.weight_decay
        for _ in range(n_steps):
            idx = self._next_batch(data.n)
            S, cache = self.model.forward(X[idx])
            if not np.all(np.isfinite(S)):
                raise TrainingError(f"non-finite scores at step {self.step}")
            ev = loss(targets[idx], S)
            if not np.all(np.isfinite(ev.value)):
                raise TrainingError(f"non-finite loss at step {self.step}")
            grads = self.model.backward(cache, ev.grad / idx.shape[0])
            lr = self.cfg.lr_at(self.step)
            for p, g, v in zip(params, grads, self.velocity):
                if wd and p.ndim > 1:
                    g = g + wd * p
                v *= self.cfg.momentum
                v += g
                p -= lr * v
            self.step += 1
        return self.model


def sgd_train(model: Model, loss: LossSpec, data: Dataset, cfg: TrainConfig,
              warm_start: Model | None = None) -> Model:
    """Train a copy of ``warm_start`` (or ``model``) and return it."""
    start = warm_start if warm_start is not None else model
    trainer = Trainer(start, cfg)
    trainer.run(loss, data, cfg.total_steps(data.n))
    return trainer.model


# -- population-level fit --------------------------------------------------------


@dataclass
class FitInfo:
    converged: bool
    iters: int
    grad_norm: float
    history: list[float] = field(default_factory=list)


def tabular_fit(loss: LossSpec, cond: CondProbTable, lr: float = 1.0, iters: int = 5000,
                init=None, tol: float = 1e-7) -> TabularModel:
    """Minimize ``sum_x mu(x) sum_y p(y|x) loss(y, s(x))`` over a free score table.

    Full-batch gradient descent with a per-point backtracking step.  The risk
    decomposes over points, so each point is stepped along its own conditional
    risk gradient; convergence is declared when the max-norm of those
    gradients is at most ``tol``.  The returned model carries ``fit_info``.
    """
    P = cond.p
    n, m = P.shape
    start = loss.init_scores() if init is None else init
    S = np.array(np.broadcast_to(np.asarray(start, dtype=float), (n, m)))
    step = np.full(n, lr)
    info = FitInfo(False, 0, math.inf)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ev = loss(P, S)
        for it in range(iters):
            g = ev.grad
            info.grad_norm = float(np.abs(g).max())
            info.iters = it
            if info.grad_norm <= tol:
                info.converged = True
                break
            gg = (g * g).sum(axis=1)
            for _ in range(60):
                trial = S - step[:, None] * g
                ev_try = loss(P, trial)
                ok = ev_try.value <= ev.value - 0.5 * step * gg
                if ok.all():
                    break
                step = np.where(ok, step, 0.5 * step)
            S, ev = trial, ev_try
            step = np.minimum(2.0 * step, lr)
        else:
            info.grad_norm = float(np.abs(ev.grad).max())
            info.iters = iters
            info.converged = info.grad_norm <= tol
    if not info.converged:
        warnings.warn(f"tabular_fit stopped after {info.iters} iterations with gradient "
                      f"max-norm {info.grad_norm:.3e}", ConvergenceWarning, stacklevel=2)
    model = TabularModel(S)
    model.fit_info = info
    return model


def with_teacher(data: Dataset, teacher: np.ndarray, prior=None) -> Dataset:
    return replace(data, teacher=teacher, prior=prior)
