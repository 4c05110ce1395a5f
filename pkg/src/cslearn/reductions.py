"""Saddle-point reductions from non-decomposable objectives to cost-sensitive learning.

The loops alternate a multiplier update, computed from the confusion matrix
on a held-out validation split, with a few SGD steps of a cost-sensitive loss
on the training split.  Gain matrices always use the training priors; recalls
and coverages are measured on the validation split against its own label
marginals.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from . import gainmat
from .gainmat import GroupSpec, ProblemKind, ProblemSpec
from .losses import DistillParams, LossKind, LossSpec, SmsParams
from .metrics import MetricReport, confusion, metrics_from, soft_confusion
from .training import Dataset, Model, TrainConfig, Trainer, predict, sgd_train

logger = logging.getLogger(__name__)


class Domain(str, Enum):
    SIMPLEX = "simplex"
    NONNEG = "nonneg"


@dataclass
class MultiplierState:
    lam: np.ndarray
    domain: Domain = Domain.SIMPLEX
    step: float = 0.1

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.domain = Domain(self.domain)
        if not self.step >= 0:
            raise ValueError("step size must be nonnegative")
        if np.any(self.lam < 0) or not np.all(np.isfinite(self.lam)):
            raise ValueError("multipliers must be finite and nonnegative")
        if self.domain is Domain.SIMPLEX and abs(self.lam.sum() - 1.0) > 1e-9:
            raise ValueError("simplex multipliers must sum to 1")

    @classmethod
    def uniform(cls, k: int, step: float = 0.1) -> MultiplierState:
        return cls(np.full(k, 1.0 / k), Domain.SIMPLEX, step)

    @classmethod
    def zeros(cls, k: int, step: float = 0.1) -> MultiplierState:
        return cls(np.zeros(k), Domain.NONNEG, step)


def eg_update(state: MultiplierState, recalls) -> MultiplierState:
    """Exponentiated-gradient step ``lam_i <- lam_i exp(-step * rec_i)``, renormalized."""
    recalls = np.asarray(recalls, dtype=float)
    if recalls.shape != state.lam.shape or not np.all(np.isfinite(recalls)):
        raise ValueError("recalls must be finite with one entry per multiplier")
    # shifting by the max exponent is exact after renormalization
    expo = -state.step * recalls
    w = state.lam * np.exp(expo - expo.max())
    total = w.sum()
    if not total > 0:
        raise FloatingPointError("exponentiated-gradient update vanished")
    return MultiplierState(w / total, Domain.SIMPLEX, state.step)


def pg_update(state: MultiplierState, coverages, targets) -> MultiplierState:
    """Projected gradient step ``lam_i <- max(0, lam_i - step * (cov_i - target_i))``."""
    coverages = np.asarray(coverages, dtype=float)
    targets = np.broadcast_to(np.asarray(targets, dtype=float), state.lam.shape)
    if coverages.shape != state.lam.shape:
        raise ValueError("one coverage per multiplier required")
    lam = np.maximum(0.0, state.lam - state.step * (coverages - targets))
    return MultiplierState(lam, Domain.NONNEG, state.step)


# -- configuration ---------------------------------------------------------------


@dataclass
class ReductionConfig:
    """Outer-loop settings.

    ``loss`` picks the cost-sensitive surrogate: ``"la"`` (logit adjusted,
    diagonal gains only), ``"weighted"``, ``"hybrid"``, ``"sms"`` /
    ``"sms_star"`` / ``"sms_hybrid"`` (gains of the form diag + 1 beta^T) or
    ``"distill"`` (needs teacher rows on the training set).
    """

    outer_iters: int = 50
    inner_steps: int = 32
    step: float = 0.1
    loss: str = "la"
    factorization: str = "prior_inverse"
    coverage_factor: float = 0.95
    balanced_coverage: bool = True
    scaled_diagonal: bool = False
    groups: GroupSpec | None = None
    select: str = "last"
    distill_gamma: float = 0.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=0))

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_steps < 1:
            raise ValueError("outer_iters and inner_steps must be at least 1")
        if self.select not in ("last", "best"):
            raise ValueError("select must be 'last' or 'best'")


def csl_loss(G: np.ndarray, cfg: ReductionConfig, prior: np.ndarray) -> LossSpec:
    """Cost-sensitive surrogate for gain ``G`` as selected by ``cfg.loss``."""
    kind = cfg.loss
    if kind == "la":
        return LossSpec(LossKind.LOGIT_ADJUSTED, gain=G)
    if kind == "weighted":
        return LossSpec(LossKind.WEIGHTED_CE, gain=gainmat.normalized_for_weighting(G, prior))
    if kind in ("hybrid", "distill"):
        fac = gainmat.factorize(G, cfg.factorization, prior)
        # global rescaling of M leaves the minimizer unchanged; keeps SGD steps comparable
        fac = gainmat.Factorization(fac.M / float(prior @ fac.M.sum(axis=1)), fac.D)
        if kind == "hybrid":
            return LossSpec(LossKind.HYBRID, factorization=fac)
        return LossSpec(LossKind.DISTILL, distill=DistillParams(fac, cfg.distill_gamma, prior))
    if kind in ("sms", "sms_star", "sms_hybrid"):
        tag = {"sms": LossKind.SMS, "sms_star": LossKind.SMS_STAR, "sms_hybrid": LossKind.SMS_HYBRID}[kind]
        return LossSpec(tag, sms=SmsParams.from_gain(G))
    raise ValueError(f"unknown CSL loss {kind!r}")


# -- evaluation helpers ------------------------------------------------------------


def evaluate(model: Model, data: Dataset, groups: GroupSpec | None = None) -> tuple[np.ndarray, MetricReport]:
    """Confusion matrix and metrics on ``data`` (recalls use its own label marginals)."""
    preds = predict(model, model.inputs(data))
    C = confusion(data.y, preds, data.m)
    prior = np.maximum(C.sum(axis=1), np.finfo(float).tiny)
    return C, metrics_from(C, prior, groups=groups)


@dataclass
class TrajectoryPoint:
    t: int
    lam: list[float]
    min_recall: float
    avg_recall: float
    coverages: list[float]
    min_group_recall: float | None = None

    def to_json(self) -> str:
        d = {"t": self.t, "lambda": self.lam, "min_recall": self.min_recall,
             "avg_recall": self.avg_recall, "coverages": self.coverages}
        if self.min_group_recall is not None:
            d["min_group_recall"] = self.min_group_recall
        return json.dumps(d)


@dataclass
class ReductionResult:
    model: Model
    trajectory: list[TrajectoryPoint]
    multipliers: MultiplierState
    gain: np.ndarray
    selected: int

    def trajectory_jsonl(self) -> str:
        return "".join(p.to_json() + "\n" for p in self.trajectory)


def _point(t, lam, report: MetricReport) -> TrajectoryPoint:
    return TrajectoryPoint(t, lam.tolist(), report.min_recall, report.avg_recall,
                           list(report.coverage), report.min_group_recall)


# -- Algorithm loops ---------------------------------------------------------------


def solve_min_recall(train: Dataset, val: Dataset, cfg: ReductionConfig, model: Model) -> ReductionResult:
    """Maximize the worst-case recall (per class, or per head/tail group).

    Each outer iteration evaluates the current model on ``val``, takes an
    exponentiated-gradient step on the multipliers, rebuilds
    ``G = diag(lam / prior)`` and runs ``cfg.inner_steps`` SGD steps on the
    chosen surrogate.  Returns the last iterate unless ``cfg.select == "best"``
    (highest validation worst-case recall).
    """
    if val.n == 0:
        raise ValueError("validation split is empty")
    prior = gainmat.check_prior(train.priors, train.m)
    groups = cfg.groups
    if groups is not None:
        spec = ProblemSpec(ProblemKind.GROUPED_MIN_RECALL, groups=groups)
        members = groups.groups()
    else:
        spec = ProblemSpec(ProblemKind.MIN_RECALL)
    state = MultiplierState.uniform(spec.multiplier_dim(train.m), cfg.step)
    trainer = Trainer(model, cfg.train)
    G = gainmat.build_gain(spec, state.lam, prior)

    trajectory: list[TrajectoryPoint] = []
    best = (-np.inf, model, 0, state, G)
    _, report = evaluate(trainer.model, val, groups)
    for t in range(cfg.outer_iters):
        rec = np.asarray(report.recall)
        objective = np.array([rec[g].mean() for g in members]) if groups is not None else rec
        state = eg_update(state, objective)
        G = gainmat.build_gain(spec, state.lam, prior)
        trainer.run(csl_loss(G, cfg, prior), train, cfg.inner_steps)
        _, report = evaluate(trainer.model, val, groups)
        trajectory.append(_point(t, state.lam, report))
        score = report.min_group_recall if groups is not None else report.min_recall
        if score > best[0]:
            best = (score, trainer.model.copy(), t, state, G)
        logger.debug("t=%d min_recall=%.4f", t, report.min_recall)

    if cfg.select == "best":
        _, chosen, t_sel, state, G = best
        return ReductionResult(chosen, trajectory, state, G, t_sel)
    return ReductionResult(trainer.model, trajectory, state, G, cfg.outer_iters - 1)


def solve_coverage(train: Dataset, val: Dataset, cfg: ReductionConfig, model: Model,
                   targets=None) -> ReductionResult:
    """Maximize average recall subject to per-class coverage lower bounds.

    Projected gradient on nonnegative multipliers, one per constraint.  The
    default targets are ``coverage_factor`` times the validation label
    marginals (``0.95/m`` on a balanced split).  With ``cfg.select == "best"``
    the returned iterate is the feasible one with the highest validation
    average recall (the least-violating one when none is feasible).
    """
    prior = gainmat.check_prior(train.priors, train.m)
    kind = ProblemKind.BALANCED_COVERAGE_CONSTRAINED if cfg.balanced_coverage else ProblemKind.COVERAGE_CONSTRAINED
    spec = ProblemSpec(kind, coverage_factor=cfg.coverage_factor, scaled_diagonal=cfg.scaled_diagonal)
    if targets is None:
        targets = gainmat.coverage_targets(spec, val.class_counts() / val.n)
    targets = np.asarray(targets, dtype=float)
    state = MultiplierState.zeros(train.m, cfg.step)
    trainer = Trainer(model, cfg.train)
    G = gainmat.build_gain(spec, state.lam, prior)

    trajectory: list[TrajectoryPoint] = []
    best_key, best = None, None
    _, report = evaluate(trainer.model, val)
    for t in range(cfg.outer_iters):
        state = pg_update(state, report.coverage, targets)
        G = gainmat.build_gain(spec, state.lam, prior)
        trainer.run(csl_loss(G, cfg, prior), train, cfg.inner_steps)
        _, report = evaluate(trainer.model, val)
        trajectory.append(_point(t, state.lam, report))
        violation = float(np.maximum(targets - np.asarray(report.coverage), 0.0).max())
        key = (violation <= 0.0, -violation, report.avg_recall)
        if best_key is None or key > best_key:
            best_key, best = key, (trainer.model.copy(), t, state, G)

    if cfg.select == "best":
        chosen, t_sel, state, G = best
        return ReductionResult(chosen, trajectory, state, G, t_sel)
    return ReductionResult(trainer.model, trajectory, state, G, cfg.outer_iters - 1)


@dataclass
class PostShiftResult:
    gain: np.ndarray
    lam: np.ndarray
    best_t: int
    min_recall: float
    history: list[float]
    lams: list[np.ndarray]

    def classify(self, eta) -> np.ndarray:
        return np.argmax(np.asarray(eta, dtype=float) @ self.gain, axis=-1) + 1


def post_shift(eta, val_targets, prior, step: float = 1.0, T: int = 100,
               weights=None) -> PostShiftResult:
    """Choose a diagonal gain for a fixed probability model to maximize worst-case recall.

    ``eta`` holds the model's class probabilities on the validation points.
    ``val_targets`` are 1-based labels or per-point label distributions, and
    ``weights`` optional point masses (a finite population).  Iterate ``t``
    classifies with ``argmax_y lam^t_y eta_y / prior_y`` starting from uniform
    multipliers; the iterate with the highest worst-case recall is returned.
    """
    eta = np.asarray(eta, dtype=float)
    n, m = eta.shape
    if np.any(eta < -1e-12) or np.any(np.abs(eta.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("eta rows must be probability vectors")
    prior = np.asarray(prior, dtype=float)
    val_targets = np.asarray(val_targets)
    if val_targets.ndim == 1:
        onehot = np.zeros((n, m))
        onehot[np.arange(n), val_targets - 1] = 1.0
        val_targets = onehot
    spec = ProblemSpec(ProblemKind.MIN_RECALL)
    state = MultiplierState.uniform(m, step)

    history: list[float] = []
    lams: list[np.ndarray] = []
    best_t, best_val = 0, -np.inf
    for t in range(T):
        G = gainmat.build_gain(spec, state.lam, prior)
        preds = np.argmax(eta @ G, axis=1) + 1
        C = soft_confusion(val_targets, preds, weights)
        rec = np.diag(C) / C.sum(axis=1)
        history.append(float(rec.min()))
        lams.append(state.lam.copy())
        if rec.min() > best_val:
            best_t, best_val = t, float(rec.min())
        state = eg_update(state, rec)
    lam = lams[best_t]
    return PostShiftResult(gainmat.build_gain(spec, lam, prior), lam, best_t, best_val, history, lams)


# -- distillation ------------------------------------------------------------------


def tempered_softmax(scores, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(scores, dtype=float) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class DistillSpec:
    """Teacher settings and the student's reduction configuration.

    ``teacher_prior`` is filled in by :func:`distill_pipeline` as the mean of
    the tempered teacher distribution over the training set.
    """

    teacher: Model
    teacher_train: TrainConfig
    student: ReductionConfig
    temperature: float = 3.0
    teacher_prior: np.ndarray | None = None


@dataclass
class DistillResult:
    teacher: Model
    student: ReductionResult
    teacher_prior: np.ndarray
    train: Dataset


def teacher_targets(teacher: Model, train: Dataset, temperature: float) -> tuple[np.ndarray, np.ndarray]:
    z = tempered_softmax(teacher.scores(teacher.inputs(train)), temperature)
    prior = z.mean(axis=0)
    return z, prior / prior.sum()


def distill_pipeline(spec: DistillSpec, student_model: Model, train: Dataset, val: Dataset,
                     teacher_trained: bool = False) -> DistillResult:
    """Self-distillation: ERM teacher, tempered soft labels, cost-sensitive student.

    The student sees teacher rows instead of labels, and every gain matrix
    inside the reduction uses the teacher prior in place of the label prior.
    """
    teacher = spec.teacher
    if not teacher_trained:
        teacher = sgd_train(teacher, LossSpec.standard(train.m), train, spec.teacher_train)
    z, tprior = teacher_targets(teacher, train, spec.temperature)
    spec.teacher_prior = tprior
    soft = replace(train, teacher=z, prior=tprior)
    result = solve_min_recall(soft, val, spec.student, student_model)
    return DistillResult(teacher, result, tprior, soft)


def gamma_sweep(spec: DistillSpec, student_model: Model, train: Dataset, val: Dataset,
                gammas=(0.1, 0.2, 0.3, 0.4, 0.5),
                score: Callable[[MetricReport], float] | None = None) -> tuple[float, dict[float, DistillResult]]:
    """Run the distillation student for each ``gamma`` and pick the best on ``val``.

    The teacher is trained once and shared across the sweep.
    """
    score = score or (lambda r: r.min_recall)
    teacher = sgd_train(spec.teacher, LossSpec.standard(train.m), train, spec.teacher_train)
    runs: dict[float, DistillResult] = {}
    best_g, best_s = None, -np.inf
    for g in gammas:
        sub = replace(spec, teacher=teacher, student=replace(spec.student, loss="distill", distill_gamma=g))
        res = distill_pipeline(sub, student_model, train, val, teacher_trained=True)
        runs[g] = res
        s = score(evaluate(res.student.model, val, spec.student.groups)[1])
        if s > best_s:
            best_g, best_s = g, s
    return best_g, runs
