"""Command-line entry points.

Every subcommand accepts ``--config PATH`` (flat JSON), ``--seed N`` and
``--out DIR``.  Results go to ``--out``; a one-line JSON summary goes to
stdout.  Failures print a JSON error object to stderr and exit with status 2;
a check suite that runs but fails exits with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import checks
from .dataio import save_csv
from .experiment import ExperimentConfig, run_experiment, synth_spec
from .synth import make_longtail

TASK_OF = {
    "train": None,
    "reduce-minrecall": "MinRecall",
    "reduce-coverage": "Coverage",
    "postshift": "PostShift",
    "distill": "Distill",
}


def _config(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(raw, dict):
        raise ValueError(f"{args.config}: config must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    task = TASK_OF.get(args.command)
    if task is not None:
        raw["task"] = task
    elif args.command == "train" and raw.get("task", "ERM") not in ("ERM", "LAPriors"):
        raise ValueError("train runs the ERM or LAPriors task; use the reduce-* subcommands otherwise")
    return ExperimentConfig.from_dict(raw)


def cmd_gen(args) -> dict:
    cfg = _config(args)
    spec = synth_spec(cfg)
    data = make_longtail(spec)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        save_csv(getattr(data, name), out / f"{name}.csv")
    # evaluation grid: features, true posteriors, point masses
    header = [f"f{k}" for k in range(spec.d)] + [f"p{k}" for k in range(spec.m)] + ["mu"]
    rows = np.hstack([data.grid_X, data.grid.p, data.grid.mu[:, None]])
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows]
    (out / "grid.csv").write_text("\n".join(lines) + "\n")
    (out / "synth.json").write_text(json.dumps(dataclasses.asdict(spec), indent=2, sort_keys=True) + "\n")
    return {"out": str(out), "train_counts": data.train.class_counts().tolist()}


def cmd_run(args) -> dict:
    cfg = _config(args)
    metrics = run_experiment(cfg)
    return {"out": cfg.out, "task": cfg.task, "test_min_recall": metrics["test"]["min_recall"],
            "test_avg_recall": metrics["test"]["avg_recall"]}


def _suites(args, results) -> dict:
    ok = all(r.passed for r in results)
    for r in results:
        print(r.line(), file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}.json").write_text(
            json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n")
    return {"passed": ok, "suites": {r.name: r.passed for r in results}}


def cmd_gradcheck(args) -> dict:
    seed = args.seed or 0
    return _suites(args, [checks.gradient_suite(n_draws=args.draws, seed=seed), *checks.identity_suite(seed=seed)])


def cmd_calibcheck(args) -> dict:
    seed = args.seed or 0
    return _suites(args, [checks.calibration_suite(n_problems=args.problems, seed=seed),
                          checks.memorization_suite(seed=seed)])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cslearn", description="Cost-sensitive learning reductions.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
        return p

    add("gen", cmd_gen, "synthesize a long-tail dataset to CSV")
    add("train", cmd_run, "train a baseline (ERM or LAPriors)")
    add("reduce-minrecall", cmd_run, "maximize worst-case recall")
    add("reduce-coverage", cmd_run, "average recall under coverage constraints")
    add("postshift", cmd_run, "post-shift a probability model for worst-case recall")
    add("distill", cmd_run, "self-distillation with a gamma sweep")
    add("gradcheck", cmd_gradcheck, "analytic gradients against finite differences").add_argument(
        "--draws", type=int, default=200, help="random draws per loss kind")
    add("calibcheck", cmd_calibcheck, "population minimizers against the Bayes classifier").add_argument(
        "--problems", type=int, default=20, help="random problems per loss family")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except Exception as exc:  # noqa: BLE001  reported as JSON for machine consumers
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0 if summary.get("passed", True) else 1


if __name__ == "__main__":
    sys.exit(main())
