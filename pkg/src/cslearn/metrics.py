"""Confusion-matrix metrics and closed-form oracles.

Labels and predictions are 1-based throughout.  Argmax ties always resolve to
the lowest class index (``numpy.argmax`` semantics).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .gainmat import GroupSpec, check_gain


def confusion(labels, preds, m: int, weights=None) -> np.ndarray:
    """Joint frequencies ``C[i, j]`` of (label ``i+1``, prediction ``j+1``).

    ``weights`` (optional, nonnegative) replaces the uniform ``1/n`` mass per pair.
    """
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if labels.shape != preds.shape or labels.ndim != 1:
        raise ValueError("labels and predictions must be equal-length 1-d sequences")
    if labels.size == 0:
        raise ValueError("empty input")
    for name, arr in (("label", labels), ("prediction", preds)):
        if np.any(arr < 1) or np.any(arr > m):
            raise ValueError(f"{name} out of range 1..{m}")
    C = np.zeros((m, m))
    if weights is None:
        # integer counts divided once keep exact fractions exact
        np.add.at(C, (labels - 1, preds - 1), 1.0)
        return C / labels.shape[0]
    np.add.at(C, (labels - 1, preds - 1), weights)
    return C


def soft_confusion(targets, preds, weights=None) -> np.ndarray:
    """Confusion matrix when each point carries a label distribution.

    ``C[i, j] = sum_x w(x) targets[x, i] 1(pred(x) = j+1)``; with one-hot
    targets and uniform weights this is :func:`confusion`.
    """
    targets = np.asarray(targets, dtype=float)
    preds = np.asarray(preds)
    n, m = targets.shape
    if weights is None:
        weights = np.full(n, 1.0 / n)
    onehot = np.zeros((n, m))
    onehot[np.arange(n), preds - 1] = 1.0
    return (targets * np.asarray(weights, dtype=float)[:, None]).T @ onehot


def _div(a, b):
    return float(a / b) if b > 0 else None


@dataclass
class MetricReport:
    recall: list[float]
    precision: list[float | None]  # None marks a class that was never predicted
    coverage: list[float]
    balanced_coverage: list[float]
    accuracy: float
    avg_recall: float
    min_recall: float
    min_precision: float | None
    weighted_accuracy: float | None = None
    group_recall: list[float] | None = None
    min_group_recall: float | None = None
    group_coverage: list[float] | None = None

    def to_dict(self) -> dict:
        """Flat JSON-ready mapping (per-class lists become ``name_k`` keys)."""
        out: dict = {}
        for key, val in asdict(self).items():
            if isinstance(val, list):
                for k, v in enumerate(val, start=1):
                    out[f"{key}_{k}"] = v
            else:
                out[key] = val
        return out


def metrics_from(C, prior, gain=None, groups: GroupSpec | None = None) -> MetricReport:
    """All per-class and aggregate metrics of a confusion matrix.

    ``prior`` is the class distribution that recalls are normalized by; for a
    confusion matrix estimated on a split, pass that split's label marginals.
    """
    C = np.asarray(C, dtype=float)
    m = C.shape[0]
    if C.shape != (m, m):
        raise ValueError("confusion matrix must be square")
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (m,):
        raise ValueError(f"prior has shape {prior.shape}, expected ({m},)")
    if np.any(prior <= 0):
        raise ValueError("prior must be strictly positive")

    diag = np.diag(C)
    recall = diag / prior
    col = C.sum(axis=0)
    precision = [_div(diag[j], col[j]) for j in range(m)]
    defined = [p for p in precision if p is not None]
    bcov = (C / prior[:, None]).sum(axis=0)
    report = MetricReport(
        recall=recall.tolist(),
        precision=precision,
        coverage=col.tolist(),
        balanced_coverage=bcov.tolist(),
        accuracy=math.fsum(diag),
        avg_recall=float(recall.mean()),
        min_recall=float(recall.min()),
        min_precision=min(defined) if defined else None,
    )
    if gain is not None:
        G = check_gain(gain)
        if G.shape != C.shape:
            raise ValueError("gain and confusion shapes differ")
        report.weighted_accuracy = float(np.sum(G * C))
    if groups is not None:
        members = groups.groups()
        report.group_recall = [float(recall[g].mean()) for g in members]
        report.min_group_recall = min(report.group_recall)
        report.group_coverage = [float(col[g].mean()) for g in members]
    return report


def confusion_to_csv(C) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(C, dtype=float):
        w.writerow(repr(float(v)) for v in row)
    return buf.getvalue()


def confusion_from_csv(text: str) -> np.ndarray:
    rows = [[float(v) for v in r] for r in csv.reader(io.StringIO(text)) if r]
    return np.array(rows, dtype=float)


# -- closed-form oracles ---------------------------------------------------------


def bayes_classify(G, p):
    """Bayes-optimal label(s) ``argmax_y (G^T p)_y`` for the gain ``G``."""
    G = check_gain(G)
    p = np.asarray(p, dtype=float)
    scores = p @ G
    out = np.argmax(scores, axis=-1) + 1
    return int(out) if out.ndim == 0 else out


def optimal_scores(G, p) -> np.ndarray:
    """Population-optimal scores ``log(G^T p)`` (any additive constant is equivalent)."""
    G = check_gain(G)
    gp = np.asarray(p, dtype=float) @ G
    if np.any(gp <= 0):
        raise ValueError("G^T p has nonpositive components; log undefined")
    return np.log(gp)


def memorization_target(G, y: int) -> np.ndarray:
    """Softmax that minimizes the weighted loss on a training point with label ``y``."""
    G = check_gain(G)
    row = G[y - 1]
    if np.any(row < 0):
        raise ValueError(f"row {y} of G has negative entries")
    total = row.sum()
    if total <= 0:
        raise ValueError(f"row {y} of G sums to zero")
    return row / total


def finite_diff_grad(loss_fn, target, s, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn(target, s)`` with respect to ``s``.

    ``loss_fn`` may return a float or anything with a ``.value`` attribute.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    s = np.array(s, dtype=float)

    def f(x):
        out = loss_fn(target, x)
        return float(getattr(out, "value", out))

    grad = np.zeros_like(s)
    for k in range(s.shape[0]):
        e = np.zeros_like(s)
        e[k] = step
        grad[k] = (f(s + e) - f(s - e)) / (2 * step)
    return grad


@dataclass
class CondProbTable:
    """Finite instance space: per-point class posteriors ``p`` and masses ``mu``."""

    p: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        self.mu = np.asarray(self.mu, dtype=float)
        if self.mu.shape != (self.p.shape[0],):
            raise ValueError("one mass per point required")
        if np.any(self.p < 0) or np.any(np.abs(self.p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("each posterior row must lie on the simplex")
        if np.any(self.mu < 0) or abs(self.mu.sum() - 1.0) > 1e-9:
            raise ValueError("point masses must be nonnegative and sum to 1")

    @property
    def n_points(self) -> int:
        return self.p.shape[0]

    @property
    def m(self) -> int:
        return self.p.shape[1]

    def class_prior(self) -> np.ndarray:
        return self.mu @ self.p

    def confusion(self, preds) -> np.ndarray:
        """Population confusion matrix of a deterministic point-wise classifier."""
        return soft_confusion(self.p, preds, self.mu)

    @classmethod
    def random(cls, rng: np.random.Generator, n_points: int, m: int, floor: float = 0.05) -> CondProbTable:
        """Random table with every posterior entry at least ``floor``."""
        raw = rng.dirichlet(np.ones(m), size=n_points)
        p = floor + (1.0 - m * floor) * raw
        mu = rng.dirichlet(np.ones(n_points))
        return cls(p=p, mu=mu)
