"""Long-tail Gaussian mixtures with closed-form class posteriors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import CondProbTable
from .training import Dataset


@dataclass
class SynthSpec:
    """Isotropic Gaussian classes with exponentially decaying training priors.

    ``rho`` is the ratio of the largest to the smallest training prior.
    Validation and test splits are class balanced.  ``separation`` scales the
    class means: large values give separable data, small values overlap.
    """

    m: int = 10
    d: int = 10
    rho: float = 100.0
    sigma: float = 1.0
    separation: float = 2.0
    n_train: int = 5000
    n_val: int = 1000
    n_test: int = 1000
    n_grid: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need at least two classes")
        if self.rho < 1:
            raise ValueError("imbalance ratio must be at least 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive (degenerate mixture)")
        if min(self.n_train, self.n_val, self.n_test) < self.m:
            raise ValueError("every split needs at least one point per class")

    def priors(self) -> np.ndarray:
        p = self.rho ** (-np.arange(self.m) / (self.m - 1))
        return p / p.sum()

    def means(self) -> np.ndarray:
        if self.d >= self.m:
            mu = np.zeros((self.m, self.d))
            mu[np.arange(self.m), np.arange(self.m)] = self.separation
            return mu
        if self.d < 2:
            return self.separation * np.arange(self.m, dtype=float)[:, None] * np.ones((1, self.d))
        angle = 2 * np.pi * np.arange(self.m) / self.m
        mu = np.zeros((self.m, self.d))
        mu[:, 0] = self.separation * np.cos(angle)
        mu[:, 1] = self.separation * np.sin(angle)
        return mu


def train_counts(spec: SynthSpec) -> np.ndarray:
    return np.maximum(1, np.round(spec.n_train * spec.priors()).astype(int))


def balanced_counts(n: int, m: int) -> np.ndarray:
    counts = np.full(m, n // m)
    counts[: n % m] += 1
    return counts


def true_posterior(X, means, sigma: float, prior) -> np.ndarray:
    """``p(y|x)`` by Bayes' rule over the Gaussian class densities."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sq = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    logit = np.log(prior)[None, :] - sq / (2 * sigma**2)
    logit -= logit.max(axis=1, keepdims=True)
    p = np.exp(logit)
    return p / p.sum(axis=1, keepdims=True)


@dataclass
class SynthData:
    train: Dataset
    val: Dataset
    test: Dataset
    grid: CondProbTable
    grid_X: np.ndarray
    means: np.ndarray
    prior: np.ndarray


def _sample(rng, means, sigma, counts, m):
    y = np.repeat(np.arange(1, m + 1), counts)
    X = means[y - 1] + sigma * rng.standard_normal((y.shape[0], means.shape[1]))
    perm = rng.permutation(y.shape[0])
    return Dataset(X[perm], y[perm], m)


def make_longtail(spec: SynthSpec) -> SynthData:
    """Sample train (long-tail), val and test (balanced) splits plus an evaluation grid.

    The grid is ``n_grid`` points drawn from the training mixture with uniform
    mass; its posteriors use the training priors.
    """
    rng = np.random.default_rng(spec.seed)
    means = spec.means()
    counts = train_counts(spec)
    train = _sample(rng, means, spec.sigma, counts, spec.m)
    val = _sample(rng, means, spec.sigma, balanced_counts(spec.n_val, spec.m), spec.m)
    test = _sample(rng, means, spec.sigma, balanced_counts(spec.n_test, spec.m), spec.m)
    prior = counts / counts.sum()
    gy = rng.choice(spec.m, size=spec.n_grid, p=prior)
    grid_X = means[gy] + spec.sigma * rng.standard_normal((spec.n_grid, spec.d))
    p = true_posterior(grid_X, means, spec.sigma, prior)
    grid = CondProbTable(p=p, mu=np.full(spec.n_grid, 1.0 / spec.n_grid))
    return SynthData(train, val, test, grid, grid_X, means, prior)
