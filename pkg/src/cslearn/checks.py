"""Self-checks against independent oracles.

Each suite draws random problems from a seeded generator, compares the
library against a closed form or a brute-force oracle and returns a
:class:`SuiteResult` whose ``worst`` field is the largest observed error.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gainmat import Factorization, factorize
from .losses import DistillParams, LossKind, LossSpec, SmsParams, hybrid, logit_adjusted, logit_adjusted_pairwise, distill
from .metrics import CondProbTable, bayes_classify, finite_diff_grad, memorization_target, soft_confusion
from .reductions import post_shift
from .training import tabular_fit

# Coordinates whose true derivative is below this size are compared absolutely:
# |analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR).
GRAD_FLOOR = 1e-4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_cases: int
    worst: float
    tolerance: float
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.worst = float(self.worst)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.n_cases} cases, worst {self.worst:.3e} (tol {self.tolerance:g})"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "n_cases": self.n_cases,
                "worst": self.worst, "tolerance": self.tolerance, "details": self.details}


# -- random problem generators ---------------------------------------------------


def _positive(rng, m):
    return np.exp(rng.normal(0.0, 0.7, m))


def _nonneg_matrix(rng, m):
    return rng.uniform(0.0, 1.5, (m, m)) + np.diag(_positive(rng, m))


def random_loss(kind: LossKind, rng: np.random.Generator, m: int) -> LossSpec:
    """A random, precondition-satisfying loss of the given kind."""
    kind = LossKind(kind)
    if kind is LossKind.WEIGHTED_CE:
        return LossSpec(kind, gain=rng.uniform(0.0, 2.0, (m, m)))
    if kind in (LossKind.LOGIT_ADJUSTED, LossKind.LOGIT_ADJUSTED_PAIRWISE):
        return LossSpec(kind, gain=np.diag(_positive(rng, m)))
    if kind is LossKind.LA_MARGIN_LIMIT:
        return LossSpec(kind, gain=np.diag(_positive(rng, m)), gamma_limit=float(rng.uniform(0.5, 5.0)))
    if kind is LossKind.HYBRID:
        return LossSpec(kind, factorization=Factorization(rng.uniform(0.0, 1.5, (m, m)), _positive(rng, m)))
    if kind in (LossKind.SMS, LossKind.SMS_STAR, LossKind.SMS_HYBRID):
        alpha, beta = _positive(rng, m), rng.uniform(0.0, 1.0, m)
        kappa = rng.uniform(0.0, 1.0, m) * beta / alpha
        return LossSpec(kind, sms=SmsParams(alpha, beta, kappa=kappa))
    if kind is LossKind.DISTILL:
        fac = Factorization(rng.uniform(0.05, 1.5, (m, m)), _positive(rng, m))
        return LossSpec(kind, distill=DistillParams(fac, gamma=float(rng.uniform(0.0, 1.0))))
    raise ValueError(f"no generator for {kind}")


def _sms_arg_ok(spec: LossSpec, y: int, s: np.ndarray, margin: float) -> bool:
    p = spec.sms
    a = s - np.log(p.alpha)
    sm = np.exp(a - a.max())
    sm /= sm.sum()
    return p.C * sm[y - 1] - p.beta[y - 1] / p.alpha[y - 1] >= margin


def _random_input(spec: LossSpec, rng: np.random.Generator, m: int):
    if spec.kind is LossKind.DISTILL:
        return rng.dirichlet(np.ones(m)), rng.normal(0.0, 2.0, m)
    y = int(rng.integers(1, m + 1))
    if spec.kind is LossKind.SMS:
        # plain SMS: stay clear of the clamp, where the gradient is cut off
        base = spec.sms.feasible_scores()
        while True:
            s = base + rng.normal(0.0, 1.0, m)
            if _sms_arg_ok(spec, y, s, 0.05):
                return y, s
    return y, rng.normal(0.0, 2.0, m)


# -- suites ----------------------------------------------------------------------


def relative_grad_error(analytic, numeric, floor: float = GRAD_FLOOR) -> float:
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def gradient_suite(n_draws: int = 200, seed: int = 0, tol: float = 1e-4, step: float = 1e-5,
                   kinds=tuple(LossKind)) -> SuiteResult:
    """Analytic gradients against central finite differences for every loss kind."""
    rng = np.random.default_rng(seed)
    per_kind: dict[str, float] = {}
    for kind in kinds:
        worst = 0.0
        for _ in range(n_draws):
            m = int(rng.integers(2, 7))
            spec = random_loss(kind, rng, m)
            target, s = _random_input(spec, rng, m)
            analytic = spec(target, s).grad
            numeric = finite_diff_grad(spec, target, s, step)
            worst = max(worst, relative_grad_error(analytic, numeric))
        per_kind[LossKind(kind).value] = worst
    worst = max(per_kind.values())
    return SuiteResult("gradient", worst <= tol, n_draws * len(per_kind), worst, tol,
                       {"per_kind": per_kind, "floor": GRAD_FLOOR, "step": step})


def identity_suite(n_draws: int = 1000, seed: int = 0) -> list[SuiteResult]:
    """Pairwise logit-adjusted form, hybrid with ``M = I`` and distill at ``gamma = 0``."""
    rng = np.random.default_rng(seed)
    pair = hyb = dist = 0.0
    for _ in range(n_draws):
        m = int(rng.integers(2, 7))
        g = _positive(rng, m)
        y = int(rng.integers(1, m + 1))
        s = rng.normal(0.0, 3.0, m)
        G = np.diag(g)
        pair = max(pair, abs(logit_adjusted(y, s, G).value - logit_adjusted_pairwise(y, s, G).value))
        hyb = max(hyb, abs(hybrid(y, s, Factorization(np.eye(m), g)).value - logit_adjusted(y, s, G).value))
        fac = Factorization(rng.uniform(0.0, 1.5, (m, m)), g)
        z = rng.dirichlet(np.ones(m))
        ref = sum(z[k] * hybrid(k + 1, s, fac).value for k in range(m))
        dist = max(dist, abs(distill(z, s, DistillParams(fac, gamma=0.0)).value - ref))
    return [
        SuiteResult("pairwise_identity", pair <= 1e-9, n_draws, pair, 1e-9),
        SuiteResult("hybrid_identity", hyb <= 1e-12, n_draws, hyb, 1e-12),
        SuiteResult("distill_identity", dist <= 1e-12, n_draws, dist, 1e-12),
    ]


def _softmax(S):
    S = S - S.max(axis=-1, keepdims=True)
    e = np.exp(S)
    return e / e.sum(axis=-1, keepdims=True)


def memorization_suite(n_instances: int = 20, seed: int = 0, tol: float = 1e-3) -> SuiteResult:
    """Fitting weighted CE to one labelled point reproduces the normalized gain row.

    Each instance also rescales the row by a random positive factor and
    checks that the fitted softmax does not move.
    """
    rng = np.random.default_rng(seed)
    fit_err = scale_err = 0.0
    for _ in range(n_instances):
        m = int(rng.integers(2, 6))
        G = rng.uniform(0.1, 2.0, (m, m))
        y = int(rng.integers(1, m + 1))
        point = CondProbTable(np.eye(m)[[y - 1]], np.ones(1))
        fitted = _softmax(tabular_fit(LossSpec(LossKind.WEIGHTED_CE, gain=G), point, tol=1e-6).table[0])
        fit_err = max(fit_err, float(np.abs(fitted - memorization_target(G, y)).max()))
        G2 = G.copy()
        G2[y - 1] *= rng.uniform(0.1, 10.0)
        refit = _softmax(tabular_fit(LossSpec(LossKind.WEIGHTED_CE, gain=G2), point, tol=1e-6).table[0])
        scale_err = max(scale_err, float(np.abs(refit - fitted).max()))
    worst = max(fit_err, scale_err)
    return SuiteResult("memorization", worst <= tol, n_instances, worst, tol,
                       {"fit": fit_err, "rescale": scale_err})


def _calibration_case(family: str, rng: np.random.Generator, m: int):
    """Return (loss, gain, adjust, closed_form) for one random calibration problem.

    ``closed_form(P)`` is the expected softmax of ``scores - adjust``.
    """
    if family == "la":
        g = _positive(rng, m)
        loss = LossSpec(LossKind.LOGIT_ADJUSTED, gain=np.diag(g))
        return loss, np.diag(g), np.log(g), lambda P: P
    if family in ("hybrid_prior_inverse", "hybrid_diagonal"):
        G = _nonneg_matrix(rng, m)
        strategy = family.removeprefix("hybrid_")
        fac = factorize(G, strategy, prior=rng.dirichlet(np.ones(m) * 3))
        loss = LossSpec(LossKind.HYBRID, factorization=fac)
        return loss, G, np.log(fac.D), lambda P: _normalize(P @ fac.M)
    if family == "sms":
        alpha, beta = _positive(rng, m), rng.uniform(0.0, 1.0, m)
        p = SmsParams(alpha, beta)
        loss = LossSpec(LossKind.SMS, sms=p)
        return loss, p.gain(), np.log(alpha), lambda P: (P + beta / alpha) / p.C
    if family.startswith("distill_"):
        gamma = float(family.split("_")[1])
        G = _nonneg_matrix(rng, m)
        fac = factorize(G, "diagonal")
        loss = LossSpec(LossKind.DISTILL, distill=DistillParams(fac, gamma=gamma))
        # softmax of (s - log D) equals normalized M^T p for every gamma
        return loss, G, np.log(fac.D), lambda P: _normalize(P @ fac.M)
    raise ValueError(f"unknown calibration family {family!r}")


def _normalize(A):
    return A / A.sum(axis=-1, keepdims=True)


CALIBRATION_FAMILIES = ("la", "hybrid_prior_inverse", "hybrid_diagonal", "sms",
                        "distill_0", "distill_0.5", "distill_1")


def calibration_suite(n_problems: int = 20, n_points: int = 5, m: int = 3, seed: int = 0,
                      tol: float = 1e-3, families=CALIBRATION_FAMILIES) -> SuiteResult:
    """Population minimizers on finite spaces agree with the Bayes classifier.

    Problems whose two best Bayes scores tie to within ``1e-6`` (relative)
    are redrawn: an argmax comparison there would only test rounding.
    """
    rng = np.random.default_rng(seed)
    per_family: dict[str, dict] = {}
    all_ok, worst = True, 0.0
    for family in families:
        agree, err = 0, 0.0
        for _ in range(n_problems):
            while True:
                loss, G, adjust, closed = _calibration_case(family, rng, m)
                cond = CondProbTable.random(rng, n_points, m)
                top = np.sort(cond.p @ G, axis=1)
                if np.all(top[:, -1] - top[:, -2] > 1e-6 * top[:, -1]):
                    break
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = tabular_fit(loss, cond)
            S = fit.table
            pred = np.argmax(S, axis=1) + 1
            agree += int(np.all(pred == bayes_classify(G, cond.p)))
            err = max(err, float(np.abs(_softmax(S - adjust) - closed(cond.p)).max()))
        ok = agree == n_problems and err <= tol
        all_ok &= ok
        worst = max(worst, err)
        per_family[family] = {"argmax_agree": agree, "softmax_err": err, "passed": ok}
    return SuiteResult("calibration", all_ok, n_problems * len(families), worst, tol,
                       {"per_family": per_family})


# -- post-shift oracle -------------------------------------------------------------


def simplex_grid_size(m: int, resolution: float = 0.01) -> int:
    k = int(round(1.0 / resolution))
    return math.comb(k + m - 1, m - 1)


def simplex_grid(m: int, resolution: float = 0.01) -> np.ndarray:
    """All points of the simplex whose coordinates are multiples of ``resolution``."""
    k = int(round(1.0 / resolution))
    pts = [c + (k - sum(c),) for c in itertools.product(range(k + 1), repeat=m - 1) if sum(c) <= k]
    return np.array(pts, dtype=float) / k


def grid_search_min_recall(eta, targets, prior, weights=None, resolution: float = 0.01,
                           chunk: int = 256):
    """Best worst-case recall of ``argmax_y lam_y eta_y / prior_y`` over a simplex grid.

    ``targets`` are per-point label distributions (one-hot rows for labels).
    Returns ``(best_min_recall, best_lam)``; the first grid point wins ties.
    """
    eta = np.asarray(eta, dtype=float)
    n, m = eta.shape
    targets = np.asarray(targets, dtype=float)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    mass_pt = targets * w[:, None]
    mass = mass_pt.sum(axis=0)
    scaled = eta / np.asarray(prior, dtype=float)[None, :]
    grid = simplex_grid(m, resolution)
    best, best_lam = -np.inf, None
    for start in range(0, grid.shape[0], chunk):
        lams = grid[start:start + chunk]
        preds = np.argmax(scaled[None, :, :] * lams[:, None, :], axis=2)
        hit = preds[:, :, None] == np.arange(m)[None, None, :]
        rec = (hit * mass_pt[None]).sum(axis=1) / mass
        worst = rec.min(axis=1)
        i = int(np.argmax(worst))
        if worst[i] > best:
            best, best_lam = float(worst[i]), lams[i]
    return best, best_lam


def postshift_oracle_suite(n_problems: int = 1, n_points: int = 50, m: int = 3, seed: int = 0,
                           tol: float = 0.01, step: float = 0.03, T: int = 3000) -> SuiteResult:
    """Post-shifting with exact posteriors against a 0.01 simplex grid search.

    ``details["gaps"]`` holds post-shift minus grid min-recall per space.
    Neither side is exact: the grid misses thin regions of the simplex and
    the best iterate can stop short of the deterministic optimum.
    """
    rng = np.random.default_rng(seed)
    worst, gaps = 0.0, []
    for _ in range(n_problems):
        cond = CondProbTable.random(rng, n_points, m)
        prior = cond.class_prior()
        res = post_shift(cond.p, cond.p, prior, step=step, T=T, weights=cond.mu)
        grid, _ = grid_search_min_recall(cond.p, cond.p, prior, cond.mu)
        gaps.append(res.min_recall - grid)
        worst = max(worst, abs(res.min_recall - grid))
    within = sum(abs(g) <= tol for g in gaps)
    return SuiteResult("postshift_oracle", worst <= tol, n_problems, worst, tol,
                       {"gaps": gaps, "within_tol": within})
