"""Gain matrices for non-decomposable classification objectives.

A gain matrix ``G`` is an ``m x m`` array where ``G[i, j]`` is the reward for
predicting class ``j + 1`` when the true class is ``i + 1``.  Every builder
here returns a plain ``numpy.ndarray``; :func:`check_gain` is the validator
used at module boundaries.

Class indices that appear in the public API (group members) are 1-based.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ProblemKind(str, Enum):
    MIN_RECALL = "MinRecall"
    RECALL_CONSTRAINED = "RecallConstrained"
    PRECISION_CONSTRAINED = "PrecisionConstrained"
    COVERAGE_CONSTRAINED = "CoverageConstrained"
    BALANCED_COVERAGE_CONSTRAINED = "BalancedCoverageConstrained"
    GROUPED_MIN_RECALL = "GroupedMinRecall"


@dataclass(frozen=True)
class GroupSpec:
    """Partition of the classes into head and tail sets (1-based indices)."""

    head: frozenset[int]
    tail: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "head", frozenset(int(c) for c in self.head))
        object.__setattr__(self, "tail", frozenset(int(c) for c in self.tail))
        if not self.head or not self.tail:
            raise ValueError("head and tail groups must both be nonempty")
        if self.head & self.tail:
            raise ValueError(f"head and tail overlap: {sorted(self.head & self.tail)}")

    @property
    def m(self) -> int:
        return len(self.head) + len(self.tail)

    def validate(self, m: int) -> None:
        if self.head | self.tail != set(range(1, m + 1)):
            raise ValueError(f"groups must cover classes 1..{m} exactly")

    def groups(self) -> list[list[int]]:
        """Sorted 0-based member lists, head first."""
        return [sorted(c - 1 for c in self.head), sorted(c - 1 for c in self.tail)]

    def membership(self, m: int) -> np.ndarray:
        """0-based group id of each class (0 = head, 1 = tail)."""
        self.validate(m)
        out = np.zeros(m, dtype=int)
        out[[c - 1 for c in self.tail]] = 1
        return out

    @classmethod
    def from_tail_fraction(cls, m: int, frac: float = 0.1) -> GroupSpec:
        """Last ``ceil(frac * m)`` classes form the tail (classes sorted by size)."""
        k = max(1, int(np.ceil(frac * m)))
        if k >= m:
            raise ValueError("tail would swallow every class")
        return cls(head=frozenset(range(1, m - k + 1)), tail=frozenset(range(m - k + 1, m + 1)))


@dataclass(frozen=True)
class ProblemSpec:
    kind: ProblemKind
    target: float | None = None
    coverage_factor: float = 0.95
    groups: GroupSpec | None = None
    # Use the 1/(m*pi) diagonal of the Lagrangian derivation instead of Table-style 1/pi.
    scaled_diagonal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        if self.target is not None and not 0.0 < self.target <= 1.0:
            raise ValueError(f"target must lie in (0, 1], got {self.target}")
        if not 0.0 < self.coverage_factor <= 1.0:
            raise ValueError(f"coverage factor must lie in (0, 1], got {self.coverage_factor}")
        if self.kind is ProblemKind.PRECISION_CONSTRAINED and self.target is None:
            raise ValueError("PrecisionConstrained requires a target")
        if self.kind is ProblemKind.GROUPED_MIN_RECALL and self.groups is None:
            raise ValueError("GroupedMinRecall requires groups")

    def multiplier_dim(self, m: int) -> int:
        if self.kind is ProblemKind.GROUPED_MIN_RECALL:
            return 2
        return m


@dataclass(frozen=True)
class Factorization:
    """``G = M @ diag(D)`` with a strictly positive diagonal ``D``."""

    M: np.ndarray
    D: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.M * self.D[None, :]


def check_prior(prior, m: int | None = None) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    if prior.ndim != 1:
        raise ValueError("prior must be a vector")
    if m is not None and prior.shape[0] != m:
        raise ValueError(f"prior has {prior.shape[0]} entries, expected {m}")
    if not np.all(np.isfinite(prior)) or np.any(prior <= 0):
        raise ValueError("prior entries must be finite and strictly positive")
    if abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError(f"prior must sum to 1 (got {prior.sum():.12g})")
    return prior


def check_gain(G) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"gain matrix must be square, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError("gain matrix has non-finite entries")
    return G


def build_gain(spec: ProblemSpec, lam, prior) -> np.ndarray:
    """Gain matrix for ``spec`` at multipliers ``lam`` and class priors ``prior``."""
    prior = check_prior(prior)
    m = prior.shape[0]
    lam = np.asarray(lam, dtype=float)
    k = spec.multiplier_dim(m)
    if lam.shape != (k,):
        raise ValueError(f"{spec.kind.value} expects {k} multipliers, got shape {lam.shape}")
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise ValueError("multipliers must be finite and nonnegative")

    kind = spec.kind
    if kind is ProblemKind.MIN_RECALL:
        return np.diag(lam / prior)
    if kind is ProblemKind.RECALL_CONSTRAINED:
        return np.diag(1.0 + lam / prior)
    if kind is ProblemKind.PRECISION_CONSTRAINED:
        return np.diag(1.0 + lam) - spec.target * np.outer(np.ones(m), lam)
    diag = 1.0 / (m * prior) if spec.scaled_diagonal else 1.0 / prior
    if kind is ProblemKind.COVERAGE_CONSTRAINED:
        return np.diag(diag) + np.outer(np.ones(m), lam)
    if kind is ProblemKind.BALANCED_COVERAGE_CONSTRAINED:
        return np.diag(diag) + np.outer(1.0 / prior, lam)
    if kind is ProblemKind.GROUPED_MIN_RECALL:
        member = spec.groups.membership(m)
        sizes = np.bincount(member, minlength=2)
        return np.diag(lam[member] / (sizes[member] * prior))
    raise AssertionError(kind)


def coverage_targets(spec: ProblemSpec, eval_prior) -> np.ndarray:
    """Per-class coverage lower bounds ``coverage_factor * eval_prior``.

    On a balanced evaluation split this is ``coverage_factor / m``.
    """
    eval_prior = np.asarray(eval_prior, dtype=float)
    return spec.coverage_factor * eval_prior


def factorize(G, strategy: str = "diagonal", prior=None) -> Factorization:
    """Split ``G`` into outer weights ``M`` and logit shifts ``D``.

    ``strategy="prior_inverse"`` takes ``D = 1/prior``; ``strategy="diagonal"``
    takes ``D = diag(G)`` so that ``M`` has a unit diagonal.
    """
    G = check_gain(G)
    if strategy == "prior_inverse":
        if prior is None:
            raise ValueError("prior_inverse factorization needs a prior")
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (G.shape[0],) or np.any(prior <= 0):
            raise ValueError("prior must be strictly positive with one entry per class")
        D = 1.0 / prior
    elif strategy == "diagonal":
        D = np.diag(G).copy()
        if np.any(D <= 0):
            bad = np.flatnonzero(D <= 0) + 1
            raise ValueError(f"diagonal factorization needs positive G_yy; failing classes {bad.tolist()}")
    else:
        raise ValueError(f"unknown factorization strategy {strategy!r}")
    return Factorization(M=G / D[None, :], D=D)


def split_diag_plus_rank1(G, atol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Write ``G = diag(alpha) + 1 beta^T`` and return ``(alpha, beta)``.

    Raises if the off-diagonal part does not have constant columns.
    """
    G = check_gain(G)
    m = G.shape[0]
    if m < 2:
        raise ValueError("need at least two classes")
    off = ~np.eye(m, dtype=bool)
    beta = np.array([G[(j + 1) % m, j] for j in range(m)])
    if np.max(np.abs((G - beta[None, :])[off])) > atol:
        raise ValueError("gain matrix is not diag(alpha) + 1 beta^T")
    alpha = np.diag(G) - beta
    return alpha, beta


def normalized_for_weighting(G, prior) -> np.ndarray:
    """Rescale ``G`` so the expected per-example weight under ``prior`` is 1.

    A global positive factor leaves every minimizer and the Bayes classifier
    unchanged; it only keeps SGD step sizes comparable across multipliers.
    """
    G = check_gain(G)
    scale = float(np.asarray(prior) @ G.sum(axis=1))
    if scale <= 0:
        raise ValueError("gain matrix has no positive expected weight")
    return G / scale


# -- serialization -----------------------------------------------------------


def gain_to_json(G) -> str:
    return json.dumps(check_gain(G).tolist())


def gain_from_json(text: str) -> np.ndarray:
    return check_gain(np.array(json.loads(text), dtype=float))


def gain_to_csv(G) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in check_gain(G):
        writer.writerow(repr(float(v)) for v in row)
    return buf.getvalue()


def gain_from_csv(text: str) -> np.ndarray:
    rows: list[list[float]] = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return check_gain(np.array(rows, dtype=float))

