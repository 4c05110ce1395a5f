"""Experiment configuration and the end-to-end runner.

A config is a flat JSON object with typed keys; unknown keys are rejected.
Every run writes ``metrics.json``, ``confusion.csv``, ``trajectory.jsonl`` and
``model.json`` to the output directory.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checks import grid_search_min_recall, simplex_grid_size
from .dataio import load_csv
from .gainmat import GroupSpec
from .losses import LossKind, LossSpec
from .metrics import confusion, confusion_to_csv, metrics_from
from .reductions import (DistillSpec, ReductionConfig, evaluate, gamma_sweep, post_shift,
                         solve_coverage, solve_min_recall)
from .synth import SynthSpec, make_longtail, true_posterior
from .training import Dataset, LinearModel, MlpModel, Model, TrainConfig, sgd_train

GRID_LIMIT = 200_000
TASKS = ("ERM", "LAPriors", "MinRecall", "Coverage", "PostShift", "Distill")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "ERM"
    seed: int = 0
    out: str = "run"
    # data: synthetic unless all three CSV paths are given
    train_csv: str | None = None
    val_csv: str | None = None
    test_csv: str | None = None
    m: int = 10
    d: int = 50
    rho: float = 100.0
    sigma: float = 1.0
    separation: float = 2.5
    n_train: int = 4000
    n_val: int = 1000
    n_test: int = 2000
    # model and SGD
    model: str = "linear"
    hidden: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 128
    steps: int | None = None
    weight_decay: float = 0.0
    # reductions
    loss: str | None = None  # "la" for MinRecall, "hybrid" for Coverage
    factorization: str = "prior_inverse"
    outer_iters: int = 60
    inner_steps: int = 32
    step: float = 0.1
    select: str = "last"
    coverage_factor: float = 0.95
    balanced_coverage: bool = True
    scaled_diagonal: bool = False
    tail_fraction: float | None = None
    # post-shifting
    postshift_step: float = 0.03
    postshift_T: int = 3000
    oracle_eta: bool = False
    # distillation
    temperature: float = 3.0
    gammas: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {', '.join(TASKS)}; got {self.task!r}")
        if self.model not in ("linear", "mlp"):
            raise ConfigError(f"model must be 'linear' or 'mlp'; got {self.model!r}")
        paths = [self.train_csv, self.val_csv, self.test_csv]
        if any(paths) and not all(paths):
            raise ConfigError("give all of train_csv, val_csv and test_csv, or none")
        for p in paths:
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"data file not found: {p}")
        if self.task == "Coverage" and self.loss == "la":
            raise ConfigError("coverage gains are not diagonal; use loss hybrid, weighted or sms_star")
        if self.oracle_eta and any(paths):
            raise ConfigError("oracle_eta needs synthetic data (true posteriors)")

    @property
    def total_steps(self) -> int:
        return self.steps if self.steps is not None else self.outer_iters * self.inner_steps

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        hints = typing.get_type_hints(cls)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for key, val in raw.items():
            if not _type_ok(val, hints[key]):
                raise ConfigError(f"config key {key!r} has the wrong type: {val!r}")
        return cls(**{k: _coerce(v, hints[k]) for k, v in raw.items()})

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)


def _coerce(val, hint):
    # JSON has one number type: integral values of float keys become floats
    if hint in (float, float | None) and isinstance(val, int):
        return float(val)
    if hint == list[float]:
        return [float(v) for v in val]
    return val


def _type_ok(val, hint) -> bool:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        return any(_type_ok(val, h) for h in typing.get_args(hint))
    if hint is type(None):
        return val is None
    if origin is list:
        (item,) = typing.get_args(hint)
        return isinstance(val, list) and all(_type_ok(v, item) for v in val)
    if hint is bool:
        return isinstance(val, bool)
    if hint is int:
        return isinstance(val, int) and not isinstance(val, bool)
    if hint is float:
        return isinstance(val, (int, float)) and not isinstance(val, bool)
    return isinstance(val, hint)


# -- building blocks -----------------------------------------------------------------


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    synth: SynthSpec | None = None
    means: np.ndarray | None = None
    prior: np.ndarray | None = None


def synth_spec(cfg: ExperimentConfig) -> SynthSpec:
    return SynthSpec(m=cfg.m, d=cfg.d, rho=cfg.rho, sigma=cfg.sigma, separation=cfg.separation,
                     n_train=cfg.n_train, n_val=cfg.n_val, n_test=cfg.n_test, seed=cfg.seed)


def load_splits(cfg: ExperimentConfig) -> Splits:
    if cfg.train_csv:
        train = load_csv(cfg.train_csv, cfg.m)
        return Splits(train, load_csv(cfg.val_csv, cfg.m), load_csv(cfg.test_csv, cfg.m))
    spec = synth_spec(cfg)
    data = make_longtail(spec)
    return Splits(data.train, data.val, data.test, spec, data.means, data.prior)


def init_model(cfg: ExperimentConfig, d: int) -> Model:
    if cfg.model == "mlp":
        return MlpModel.init(d, cfg.m, hidden=cfg.hidden, seed=cfg.seed)
    return LinearModel.init(d, cfg.m, seed=cfg.seed)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, momentum=cfg.momentum, batch_size=cfg.batch_size,
                       steps=cfg.total_steps, seed=cfg.seed, weight_decay=cfg.weight_decay)


def reduction_config(cfg: ExperimentConfig) -> ReductionConfig:
    groups = GroupSpec.from_tail_fraction(cfg.m, cfg.tail_fraction) if cfg.tail_fraction else None
    return ReductionConfig(outer_iters=cfg.outer_iters, inner_steps=cfg.inner_steps, step=cfg.step,
                           loss=cfg.loss or ("hybrid" if cfg.task == "Coverage" else "la"),
                           factorization=cfg.factorization,
                           coverage_factor=cfg.coverage_factor, balanced_coverage=cfg.balanced_coverage,
                           scaled_diagonal=cfg.scaled_diagonal, groups=groups, select=cfg.select,
                           train=train_config(cfg))


# -- tasks ---------------------------------------------------------------------------


@dataclass
class RunOutput:
    metrics: dict
    confusion: np.ndarray
    trajectory: list[str]
    model: dict


def _reports(model: Model, splits: Splits, groups=None) -> tuple[dict, np.ndarray]:
    out = {}
    for name in ("train", "val", "test"):
        C, rep = evaluate(model, getattr(splits, name), groups)
        out[name] = rep.to_dict()
    return out, C


def _run_baseline(cfg: ExperimentConfig, splits: Splits) -> RunOutput:
    init = init_model(cfg, splits.train.d)
    if cfg.task == "ERM":
        loss = LossSpec.standard(cfg.m)
    else:
        loss = LossSpec(LossKind.LOGIT_ADJUSTED, gain=np.diag(1.0 / splits.train.priors))
    model = sgd_train(init, loss, splits.train, train_config(cfg))
    metrics, C = _reports(model, splits)
    return RunOutput(metrics, C, [], model.to_dict())


def _run_reduction(cfg: ExperimentConfig, splits: Splits) -> RunOutput:
    rcfg = reduction_config(cfg)
    init = init_model(cfg, splits.train.d)
    solve = solve_min_recall if cfg.task == "MinRecall" else solve_coverage
    res = solve(splits.train, splits.val, rcfg, init)
    metrics, C = _reports(res.model, splits, rcfg.groups)
    metrics["lambda"] = res.multipliers.lam.tolist()
    metrics["selected_iterate"] = res.selected
    return RunOutput(metrics, C, [p.to_json() for p in res.trajectory], res.model.to_dict())


def _run_postshift(cfg: ExperimentConfig, splits: Splits) -> RunOutput:
    prior = splits.train.priors
    if cfg.oracle_eta:
        base = None

        def eta(data: Dataset):
            return true_posterior(data.X, splits.means, splits.synth.sigma, splits.prior)
    else:
        base = sgd_train(init_model(cfg, splits.train.d), LossSpec.standard(cfg.m), splits.train,
                         train_config(cfg))

        def eta(data: Dataset):
            S = base.scores(data.X)
            e = np.exp(S - S.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)

    res = post_shift(eta(splits.val), splits.val.y, prior, step=cfg.postshift_step, T=cfg.postshift_T)
    metrics = {}
    for name in ("train", "val", "test"):
        data = getattr(splits, name)
        C = confusion(data.y, res.classify(eta(data)), cfg.m)
        metrics[name] = metrics_from(C, np.maximum(C.sum(axis=1), np.finfo(float).tiny)).to_dict()
    metrics["postshift"] = {"val_min_recall": res.min_recall, "best_t": res.best_t,
                            "lambda": res.lam.tolist(), "gain_diag": np.diag(res.gain).tolist()}
    if cfg.oracle_eta:
        if simplex_grid_size(cfg.m) <= GRID_LIMIT:
            grid, lam = grid_search_min_recall(eta(splits.val), np.eye(cfg.m)[splits.val.y - 1], prior)
            metrics["postshift"]["grid_val_min_recall"] = grid
            metrics["postshift"]["grid_lambda"] = lam.tolist()
        else:
            metrics["postshift"]["grid_val_min_recall"] = None
            metrics["postshift"]["grid_skipped"] = f"simplex grid for m={cfg.m} exceeds {GRID_LIMIT} points"
    trajectory = [json.dumps({"t": t, "lambda": lam.tolist(), "min_recall": r})
                  for t, (lam, r) in enumerate(zip(res.lams, res.history))]
    model = {"format": "cslearn.postshift", "version": 1, "gain": res.gain.tolist(),
             "base": None if base is None else base.to_dict()}
    return RunOutput(metrics, C, trajectory, model)


def _run_distill(cfg: ExperimentConfig, splits: Splits) -> RunOutput:
    rcfg = reduction_config(cfg)
    init = init_model(cfg, splits.train.d)
    spec = DistillSpec(teacher=init, teacher_train=train_config(cfg), student=rcfg,
                       temperature=cfg.temperature)
    best_g, runs = gamma_sweep(spec, init, splits.train, splits.val, gammas=tuple(cfg.gammas))
    best = runs[best_g].student
    metrics, C = _reports(best.model, splits, rcfg.groups)
    sweep = {}
    for g, run in runs.items():
        _, vrep = evaluate(run.student.model, splits.val, rcfg.groups)
        _, trep = evaluate(run.student.model, splits.test, rcfg.groups)
        sweep[repr(g)] = {"val_min_recall": vrep.min_recall, "test_min_recall": trep.min_recall}
    # label-trained student under the same reduction, for comparison only
    baseline = solve_min_recall(splits.train, splits.val, rcfg, init)
    _, base_rep = evaluate(baseline.model, splits.test, rcfg.groups)
    _, teacher_rep = evaluate(runs[best_g].teacher, splits.test, rcfg.groups)
    metrics["distill"] = {
        "selected_gamma": best_g, "sweep": sweep,
        "teacher_prior": runs[best_g].teacher_prior.tolist(),
        "teacher_test_min_recall": teacher_rep.min_recall,
        "baseline_test_min_recall": base_rep.min_recall,
        "student_test_min_recall": metrics["test"]["min_recall"],
    }
    return RunOutput(metrics, C, [p.to_json() for p in best.trajectory], best.model.to_dict())


_RUNNERS = {"ERM": _run_baseline, "LAPriors": _run_baseline, "MinRecall": _run_reduction,
            "Coverage": _run_reduction, "PostShift": _run_postshift, "Distill": _run_distill}


def execute(cfg: ExperimentConfig) -> RunOutput:
    """Run the configured task in memory."""
    out = _RUNNERS[cfg.task](cfg, load_splits(cfg))
    out.metrics["task"] = cfg.task
    out.metrics["config"] = cfg.to_dict()
    out.metrics["version"] = __version__
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run the task and write the four output files; returns the metrics."""
    out = execute(cfg)
    path = Path(out_dir if out_dir is not None else cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    metrics = dict(out.metrics, timestamp=datetime.now(timezone.utc).isoformat())
    (path / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    (path / "confusion.csv").write_text(confusion_to_csv(out.confusion))
    (path / "trajectory.jsonl").write_text("".join(line + "\n" for line in out.trajectory))
    (path / "model.json").write_text(json.dumps(out.model) + "\n")
    return metrics
