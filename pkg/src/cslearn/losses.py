"""Cost-sensitive surrogate losses with analytic score gradients.

Every loss accepts either hard labels (integers, 1-based) or target
distributions (float rows on the simplex, e.g. teacher outputs).  For a
distribution ``z`` the loss is the expectation ``sum_y z_y * loss(y, s)``,
except for :func:`distill`, which is defined directly on ``z``.

Scores may be a single vector of shape ``(m,)`` or a batch ``(n, m)``; the
returned :class:`LossEval` mirrors that shape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .gainmat import Factorization, check_gain


class SmsDomainWarning(RuntimeWarning):
    """The softmax-shifted log argument fell below ``eps_log`` and was clamped."""


@dataclass
class LossEval:
    value: float | np.ndarray
    grad: np.ndarray
    n_clamped: int = 0


# -- target / score plumbing ---------------------------------------------------


def _prepare(y, s):
    S = np.asarray(s, dtype=float)
    if S.ndim not in (1, 2):
        raise ValueError(f"scores must be (m,) or (n, m), got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("non-finite score")
    single = S.ndim == 1
    S = np.atleast_2d(S)
    m = S.shape[1]

    y = np.asarray(y)
    if y.dtype.kind in "iu":
        labels = np.atleast_1d(y)
        if labels.ndim != 1:
            raise ValueError("labels must be a scalar or a 1-d array")
        if np.any(labels < 1) or np.any(labels > m):
            raise ValueError(f"labels must lie in 1..{m}")
        T = np.zeros((labels.shape[0], m))
        T[np.arange(labels.shape[0]), labels - 1] = 1.0
        single = single and y.ndim == 0
    elif y.dtype.kind == "f":
        T = np.atleast_2d(y).astype(float)
        if T.ndim != 2 or T.shape[1] != m:
            raise ValueError(f"target rows must have {m} entries")
        if np.any(T < -1e-12) or np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("target rows must lie on the simplex")
        single = single and y.ndim == 1
    else:
        raise TypeError(f"unsupported target dtype {y.dtype}")

    n = max(S.shape[0], T.shape[0])
    if S.shape[0] not in (1, n) or T.shape[0] not in (1, n):
        raise ValueError(f"batch mismatch: {S.shape[0]} scores vs {T.shape[0]} targets")
    S = np.broadcast_to(S, (n, m))
    T = np.broadcast_to(T, (n, m))
    return S, T, single


def _finish(values, grads, single, n_clamped=0) -> LossEval:
    if single:
        return LossEval(float(values[0]), grads[0].copy(), n_clamped)
    return LossEval(values, grads, n_clamped)


def _log_softmax(A):
    top = np.max(A, axis=1, keepdims=True)
    shifted = A - top
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def _weighted_nll(W, A):
    """``-sum_i W_i log softmax_i(A)`` and its gradient with respect to ``A``."""
    logp = _log_softmax(A)
    terms = np.where(W != 0.0, W * np.where(np.isfinite(logp), logp, 0.0), 0.0)
    values = -terms.sum(axis=1)
    grads = W.sum(axis=1, keepdims=True) * np.exp(logp) - W
    return values, grads


def _diag_of(G) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        g = G
    else:
        G = check_gain(G)
        g = np.diag(G)
        if np.any(G[~np.eye(G.shape[0], dtype=bool)] != 0.0):
            raise ValueError("logit adjustment needs a diagonal gain matrix")
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~(g > 0)) + 1
        raise ValueError(f"nonpositive diagonal gain for classes {bad.tolist()}")
    return g


def _per_label(T, S, label_fn):
    """Expectation over labels of a loss given as ``label_fn(c, S) -> (values, grads)``."""
    n, m = S.shape
    values = np.zeros(n)
    grads = np.zeros((n, m))
    for c in range(m):
        w = T[:, c]
        if not np.any(w):
            continue
        v, g = label_fn(c, S)
        values += w * v
        grads += w[:, None] * g
    return values, grads


# -- the losses ----------------------------------------------------------------


def weighted_ce(y, s, G) -> LossEval:
    """Outer-weighted cross-entropy ``-sum_i G[y, i] log softmax_i(s)``."""
    G = check_gain(G)
    S, T, single = _prepare(y, s)
    values, grads = _weighted_nll(T @ G, S)
    return _finish(values, grads, single)


def cross_entropy(y, s) -> LossEval:
    S, T, single = _prepare(y, s)
    values, grads = _weighted_nll(np.array(T), S)
    return _finish(values, grads, single)


def logit_adjusted(y, s, G) -> LossEval:
    """Cross-entropy on logits shifted by ``-log G_yy``."""
    g = _diag_of(G)
    S, T, single = _prepare(y, s)
    values, grads = _weighted_nll(np.array(T), S - np.log(g)[None, :])
    return _finish(values, grads, single)


def _margin_terms(c, S, log_g, gamma):
    # t_j = gamma * (delta_cj - (s_c - s_j)), delta_cj = log G_cc - log G_jj
    delta = log_g[c] - log_g
    return gamma * (delta[None, :] - (S[:, [c]] - S))


def logit_adjusted_pairwise(y, s, G) -> LossEval:
    """Pairwise-margin form ``log(1 + sum_{j != y} exp(delta_yj - (s_y - s_j)))``."""
    log_g = np.log(_diag_of(G))
    S, T, single = _prepare(y, s)

    def one(c, S):
        t = _margin_terms(c, S, log_g, 1.0)
        others = np.delete(t, c, axis=1)
        top = np.maximum(others.max(axis=1), 0.0)
        values = top + np.log(np.exp(-top) + np.exp(others - top[:, None]).sum(axis=1))
        t[:, c] = 0.0
        grads = np.exp(t - values[:, None])
        grads[:, c] -= 1.0
        return values, grads

    values, grads = _per_label(T, S, one)
    return _finish(values, grads, single)


def la_margin_limit(y, s, G, gamma: float) -> LossEval:
    """Temperature form ``(1/gamma) log sum_j exp(gamma (delta_yj - (s_y - s_j)))``.

    At ``gamma = 1`` this is exactly the pairwise logit-adjusted loss (the
    ``j = y`` term supplies the leading 1); as ``gamma`` grows it tends to
    ``max_j delta_yj - (s_y - s_j)``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    log_g = np.log(_diag_of(G))
    S, T, single = _prepare(y, s)

    def one(c, S):
        t = _margin_terms(c, S, log_g, gamma)
        top = t.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(t - top).sum(axis=1))
        grads = np.exp(t - lse[:, None])
        grads[:, c] -= 1.0
        return lse / gamma, grads

    values, grads = _per_label(T, S, one)
    return _finish(values, grads, single)


def _check_factorization(fac: Factorization) -> tuple[np.ndarray, np.ndarray]:
    M = np.asarray(fac.M, dtype=float)
    D = np.asarray(fac.D, dtype=float)
    if M.ndim != 2 or M.shape != (D.shape[0], D.shape[0]):
        raise ValueError("factorization shapes do not match")
    if np.any(D <= 0) or not np.all(np.isfinite(D)):
        bad = np.flatnonzero(~(D > 0)) + 1
        raise ValueError(f"nonpositive D entry for classes {bad.tolist()}")
    return M, D


def hybrid(y, s, fac: Factorization) -> LossEval:
    """Logit shift by ``log D`` with outer weights from ``M``."""
    M, D = _check_factorization(fac)
    S, T, single = _prepare(y, s)
    values, grads = _weighted_nll(T @ M, S - np.log(D)[None, :])
    return _finish(values, grads, single)


@dataclass
class SmsParams:
    """Parameters of the softmax-shifted loss family.

    ``C`` defaults to the calibrated value ``1 + sum(beta / alpha)``.  ``kappa``
    and ``kappa_prime`` split ``beta / alpha`` between outer weights and the
    inner shift of the hybrid variant; by default everything goes to the shift.
    """

    alpha: np.ndarray
    beta: np.ndarray
    C: float | None = None
    kappa: np.ndarray | None = None
    kappa_prime: np.ndarray | None = None
    eps_log: float = 1e-12

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.alpha.ndim != 1 or self.alpha.shape != self.beta.shape:
            raise ValueError("alpha and beta must be vectors of equal length")
        if np.any(self.alpha <= 0):
            raise ValueError("alpha must be strictly positive")
        if np.any(self.beta < 0):
            raise ValueError("beta must be nonnegative")
        if self.C is None:
            self.C = self.calibrated_C()
        if not self.C > 0:
            raise ValueError("C must be positive")
        ratio = self.beta / self.alpha
        if self.kappa is None and self.kappa_prime is None:
            self.kappa = np.zeros_like(ratio)
        if self.kappa is None:
            self.kappa = ratio - np.asarray(self.kappa_prime, dtype=float)
        if self.kappa_prime is None:
            self.kappa_prime = ratio - np.asarray(self.kappa, dtype=float)
        self.kappa = np.asarray(self.kappa, dtype=float)
        self.kappa_prime = np.asarray(self.kappa_prime, dtype=float)
        if np.max(np.abs(self.kappa + self.kappa_prime - ratio)) > 1e-12:
            raise ValueError("kappa + kappa_prime must equal beta / alpha")
        if not self.eps_log > 0:
            raise ValueError("eps_log must be positive")

    def calibrated_C(self) -> float:
        return 1.0 + float(np.sum(self.beta / self.alpha))

    @classmethod
    def from_gain(cls, G, **kwargs) -> SmsParams:
        from .gainmat import split_diag_plus_rank1

        alpha, beta = split_diag_plus_rank1(G)
        return cls(alpha=alpha, beta=beta, **kwargs)

    def gain(self) -> np.ndarray:
        """The gain matrix ``diag(alpha) + 1 beta^T`` these parameters target."""
        return np.diag(self.alpha) + np.outer(np.ones_like(self.beta), self.beta)

    def feasible_scores(self) -> np.ndarray:
        """Scores at which every plain-variant log argument is equal and positive.

        With ``C`` calibrated each argument equals ``1/m``.
        """
        ratio = self.beta / self.alpha
        c = (self.C - ratio.sum()) / ratio.shape[0]
        if c <= 0:
            raise ValueError("C <= sum(beta/alpha): the plain SMS loss has no feasible point")
        return np.log(self.alpha) + np.log((ratio + c) / self.C)


def sms(y, s, p: SmsParams, variant: str = "plain") -> LossEval:
    """Softmax-shifted loss: ``-log(C softmax_y(s - log alpha) + shift_y)``.

    ``variant`` is ``"plain"`` (shift ``-beta/alpha``), ``"star"`` (shift
    ``max(beta/alpha) - beta/alpha``) or ``"hybrid"`` (outer weights
    ``1(y=i) + kappa_i`` and shift ``max(kappa') - kappa'``).  Log arguments
    below ``p.eps_log`` are clamped; clamped terms contribute no gradient.
    """
    S, T, single = _prepare(y, s)
    if S.shape[1] != p.alpha.shape[0]:
        raise ValueError("score dimension does not match SMS parameters")
    ratio = p.beta / p.alpha
    if variant == "plain":
        shift, W = -ratio, np.array(T)
    elif variant == "star":
        shift, W = ratio.max() - ratio, np.array(T)
    elif variant == "hybrid":
        kp = p.kappa_prime
        shift = kp.max() - kp
        W = T + p.kappa[None, :] * T.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown SMS variant {variant!r}")

    sm = np.exp(_log_softmax(S - np.log(p.alpha)[None, :]))
    q = p.C * sm + shift[None, :]
    live = W != 0.0
    clamped = live & (q < p.eps_log)
    n_clamped = int(clamped.sum())
    if n_clamped:
        warnings.warn(
            f"{n_clamped} SMS log argument(s) below eps_log; clamped", SmsDomainWarning, stacklevel=2
        )
    qc = np.maximum(q, p.eps_log)
    values = -np.where(live, W * np.log(qc), 0.0).sum(axis=1)
    r = np.where(live & ~clamped, W * p.C * sm / qc, 0.0)
    grads = sm * r.sum(axis=1, keepdims=True) - r
    return _finish(values, grads, single, n_clamped)


@dataclass
class DistillParams:
    factorization: Factorization
    gamma: float = 0.0
    teacher_prior: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        _check_factorization(self.factorization)
        if self.teacher_prior is not None:
            tp = np.asarray(self.teacher_prior, dtype=float)
            if np.any(tp <= 0) or abs(tp.sum() - 1.0) > 1e-9:
                raise ValueError("teacher prior must be strictly positive and sum to 1")
            self.teacher_prior = tp


def distill(z, s, p: DistillParams) -> LossEval:
    """Distillation loss with teacher-driven logit adjustment.

    With ``zbar = M^T z``, the outer weight on class ``i`` is ``zbar_i^(1-gamma)``
    and the logits are shifted by ``log D_i + gamma log zbar_i``.  Classes with
    ``zbar_i = 0`` carry zero weight and, for ``gamma > 0``, drop out of the
    softmax.
    """
    M, D = _check_factorization(p.factorization)
    S, Z, single = _prepare(z, s)
    zbar = Z @ M
    worst = zbar.min(axis=0)
    if np.any(worst < -1e-12):
        bad = np.flatnonzero(worst < -1e-12) + 1
        raise ValueError(f"transformed teacher weights M^T z are negative for classes {bad.tolist()}")
    zbar = np.maximum(zbar, 0.0)
    active = zbar > 0.0
    if not np.all(active.any(axis=1)):
        raise ValueError("transformed teacher weights vanish for some example")
    gamma = p.gamma
    with np.errstate(divide="ignore"):
        log_zbar = np.where(active, np.log(np.where(active, zbar, 1.0)), -np.inf)
    W = np.where(active, np.where(active, zbar, 1.0) ** (1.0 - gamma), 0.0)
    A = S - np.log(D)[None, :]
    if gamma > 0:
        A = A - gamma * np.where(active, log_zbar, 0.0)
        A = np.where(active, A, -np.inf)
    values, grads = _weighted_nll(W, A)
    return _finish(values, grads, single)


# -- tagged loss descriptions ----------------------------------------------------


class LossKind(str, Enum):
    WEIGHTED_CE = "WeightedCE"
    LOGIT_ADJUSTED = "LogitAdjusted"
    LOGIT_ADJUSTED_PAIRWISE = "LogitAdjustedPairwise"
    HYBRID = "Hybrid"
    SMS = "SMS"
    SMS_STAR = "SMSStar"
    SMS_HYBRID = "SMSHybrid"
    DISTILL = "Distill"
    LA_MARGIN_LIMIT = "LAMarginLimit"


_SMS_VARIANT = {LossKind.SMS: "plain", LossKind.SMS_STAR: "star", LossKind.SMS_HYBRID: "hybrid"}


def _arr(x):
    return None if x is None else np.asarray(x, dtype=float).tolist()


@dataclass
class LossSpec:
    """A loss family plus its parameters; callable as ``spec(target, scores)``."""

    kind: LossKind
    gain: np.ndarray | None = None
    factorization: Factorization | None = None
    sms: SmsParams | None = None
    distill: DistillParams | None = None
    gamma_limit: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = LossKind(self.kind)
        k = self.kind
        if k in (LossKind.WEIGHTED_CE, LossKind.LOGIT_ADJUSTED, LossKind.LOGIT_ADJUSTED_PAIRWISE, LossKind.LA_MARGIN_LIMIT):
            if self.gain is None:
                raise ValueError(f"{k.value} needs a gain matrix")
            self.gain = check_gain(self.gain)
            if k is not LossKind.WEIGHTED_CE:
                _diag_of(self.gain)
        if k is LossKind.LA_MARGIN_LIMIT and not (self.gamma_limit and self.gamma_limit > 0):
            raise ValueError("LAMarginLimit needs a positive gamma_limit")
        if k is LossKind.HYBRID:
            if self.factorization is None:
                raise ValueError("Hybrid needs a factorization")
            _check_factorization(self.factorization)
        if k in _SMS_VARIANT and self.sms is None:
            raise ValueError(f"{k.value} needs SMS parameters")
        if k is LossKind.DISTILL and self.distill is None:
            raise ValueError("Distill needs distillation parameters")

    @property
    def m(self) -> int:
        if self.gain is not None:
            return self.gain.shape[0]
        if self.factorization is not None:
            return self.factorization.D.shape[0]
        if self.sms is not None:
            return self.sms.alpha.shape[0]
        return self.distill.factorization.D.shape[0]

    def __call__(self, target, s) -> LossEval:
        k = self.kind
        if k is LossKind.WEIGHTED_CE:
            return weighted_ce(target, s, self.gain)
        if k is LossKind.LOGIT_ADJUSTED:
            return logit_adjusted(target, s, self.gain)
        if k is LossKind.LOGIT_ADJUSTED_PAIRWISE:
            return logit_adjusted_pairwise(target, s, self.gain)
        if k is LossKind.LA_MARGIN_LIMIT:
            return la_margin_limit(target, s, self.gain, self.gamma_limit)
        if k is LossKind.HYBRID:
            return hybrid(target, s, self.factorization)
        if k in _SMS_VARIANT:
            return sms(target, s, self.sms, _SMS_VARIANT[k])
        if k is LossKind.DISTILL:
            return distill(target, s, self.distill)
        raise AssertionError(k)

    def init_scores(self) -> np.ndarray:
        """A starting score vector at which the loss preconditions hold."""
        if self.kind is LossKind.SMS:
            return self.sms.feasible_scores()
        return np.zeros(self.m)

    # JSON: kind tag plus flat parameter arrays
    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.gain is not None:
            out["gain"] = _arr(self.gain)
        if self.factorization is not None:
            out["M"] = _arr(self.factorization.M)
            out["D"] = _arr(self.factorization.D)
        if self.sms is not None:
            p = self.sms
            out["sms"] = {
                "alpha": _arr(p.alpha), "beta": _arr(p.beta), "C": float(p.C),
                "kappa": _arr(p.kappa), "kappa_prime": _arr(p.kappa_prime), "eps_log": p.eps_log,
            }
        if self.distill is not None:
            d = self.distill
            out["distill"] = {
                "M": _arr(d.factorization.M), "D": _arr(d.factorization.D),
                "gamma": d.gamma, "teacher_prior": _arr(d.teacher_prior),
            }
        if self.gamma_limit is not None:
            out["gamma_limit"] = self.gamma_limit
        return out

    @classmethod
    def from_dict(cls, d: dict) -> LossSpec:
        fac = None
        if "M" in d:
            fac = Factorization(np.array(d["M"], dtype=float), np.array(d["D"], dtype=float))
        sms_p = None
        if "sms" in d:
            sms_p = SmsParams(**d["sms"])
        dist = None
        if "distill" in d:
            dd = d["distill"]
            dist = DistillParams(
                Factorization(np.array(dd["M"], dtype=float), np.array(dd["D"], dtype=float)),
                gamma=dd["gamma"], teacher_prior=dd.get("teacher_prior"),
            )
        gain = np.array(d["gain"], dtype=float) if "gain" in d else None
        return cls(d["kind"], gain=gain, factorization=fac, sms=sms_p, distill=dist,
                   gamma_limit=d.get("gamma_limit"))

    @classmethod
    def standard(cls, m: int) -> LossSpec:
        """Plain softmax cross-entropy, expressed as weighted CE with ``G = I``."""
        return cls(LossKind.WEIGHTED_CE, gain=np.eye(m))
