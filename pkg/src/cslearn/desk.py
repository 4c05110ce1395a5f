"""Desk-scale versions of the worst-case recall and coverage studies.

Each function trains every compared method on the same synthetic long-tail
split and returns test-split metrics keyed by method name.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .gainmat import GroupSpec
from .losses import LossKind, LossSpec
from .reductions import ReductionConfig, evaluate, solve_coverage, solve_min_recall
from .synth import SynthData, SynthSpec, make_longtail
from .training import LinearModel, MlpModel, Model, TrainConfig, sgd_train


@dataclass
class StudySettings:
    synth: SynthSpec
    model: str = "linear"
    hidden: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 128
    outer_iters: int = 60
    inner_steps: int = 32
    step: float = 0.1
    select: str = "last"

    @property
    def total_steps(self) -> int:
        return self.outer_iters * self.inner_steps


def desk_synth(seed: int = 0) -> SynthSpec:
    """Overlapping 10-class long tail; the 40 noise dimensions let a linear model memorize the tail."""
    return SynthSpec(m=10, d=50, rho=100.0, sigma=1.0, separation=2.5,
                     n_train=4000, n_val=1000, n_test=2000, seed=seed)


def worst_case_settings(model: str = "linear") -> StudySettings:
    return StudySettings(desk_synth(), model=model, step=0.1)


def coverage_settings(model: str = "linear") -> StudySettings:
    # projected gradient needs a larger step to reach feasibility in 60 rounds
    return StudySettings(desk_synth(), model=model, step=0.5, select="best")


def make_model(settings: StudySettings, d: int, m: int, seed: int) -> Model:
    if settings.model == "linear":
        return LinearModel.init(d, m, seed=seed)
    if settings.model == "mlp":
        return MlpModel.init(d, m, hidden=settings.hidden, seed=seed)
    raise ValueError(f"unknown model {settings.model!r}")


def _train_cfg(settings: StudySettings, seed: int) -> TrainConfig:
    return TrainConfig(lr=settings.lr, momentum=settings.momentum, batch_size=settings.batch_size,
                       steps=settings.total_steps, seed=seed)


def _reduction_cfg(settings: StudySettings, seed: int, loss: str, **kw) -> ReductionConfig:
    return ReductionConfig(outer_iters=settings.outer_iters, inner_steps=settings.inner_steps,
                           step=settings.step, loss=loss, select=settings.select, train=_train_cfg(settings, seed), **kw)


def worst_case_recall_study(settings: StudySettings, seed: int, data: SynthData | None = None,
                            groups: GroupSpec | None = None) -> dict[str, dict]:
    """ERM, LA with class priors, CSL[Re-weighted] and CSL[Logit-adjusted]."""
    synth = replace(settings.synth, seed=seed)
    data = data or make_longtail(synth)
    m, d = synth.m, synth.d
    init = make_model(settings, d, m, seed)
    out: dict[str, dict] = {}

    erm = sgd_train(init, LossSpec.standard(m), data.train, _train_cfg(settings, seed))
    la_prior = sgd_train(init, LossSpec(LossKind.LOGIT_ADJUSTED, gain=np.diag(1.0 / data.train.priors)),
                         data.train, _train_cfg(settings, seed))
    models = {"ERM": erm, "LA-priors": la_prior}
    for name, loss in (("CSL-RW", "weighted"), ("CSL-LA", "la")):
        res = solve_min_recall(data.train, data.val, _reduction_cfg(settings, seed, loss, groups=groups), init)
        models[name] = res.model
    for name, model in models.items():
        _, rep = evaluate(model, data.test, groups)
        out[name] = rep.to_dict()
    return out


def coverage_study(settings: StudySettings, seed: int, data: SynthData | None = None,
                   coverage_factor: float = 0.95) -> dict[str, dict]:
    """CSL[Re-weighted], CSL[Hybrid A] and CSL[Hybrid B] under coverage constraints.

    Each entry carries test metrics plus the final validation coverages.
    """
    synth = replace(settings.synth, seed=seed)
    data = data or make_longtail(synth)
    m, d = synth.m, synth.d
    init = make_model(settings, d, m, seed)
    out: dict[str, dict] = {}
    variants = {
        "CSL-RW": dict(loss="weighted"),
        "CSL-HybridA": dict(loss="hybrid", factorization="prior_inverse"),
        "CSL-HybridB": dict(loss="hybrid", factorization="diagonal"),
    }
    for name, kw in variants.items():
        cfg = _reduction_cfg(settings, seed, coverage_factor=coverage_factor, **kw)
        res = solve_coverage(data.train, data.val, cfg, init)
        _, rep = evaluate(res.model, data.test)
        _, vrep = evaluate(res.model, data.val)
        entry = rep.to_dict()
        entry["val_coverage"] = vrep.coverage
        entry["target"] = coverage_factor / m
        entry["lambda"] = res.multipliers.lam.tolist()
        out[name] = entry
    return out
