"""Iterative logistic fluctuation of the stacked initial predictions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np
from scipy.special import expit, logit

from .crossfit import CrossFittedNuisances, clamp_q
from .data import CVTMLEError, Dataset, FoldPlan, ParameterKind
from .parameters import (
    CleverCovariates,
    ICComponents,
    Variant,
    blip,
    clever_covariates,
    influence_curve,
    plugin_estimate,
)

__all__ = [
    "EPS_NEGLIGIBLE",
    "TargetingError",
    "TargetingState",
    "FluctuationTrace",
    "fluctuation_loglik",
    "fit_epsilon",
    "apply_fluctuation",
    "stopping_check",
    "evaluate",
    "run_targeting",
    "write_trace_csv",
]

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
GOLDEN_BRACKET = (-10.0, 10.0)
EPS_NEGLIGIBLE = 1e-8
DEFAULT_MAX_ITER = 100


class TargetingError(CVTMLEError, RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TargetingState:
    Q_A: np.ndarray
    Q_1: np.ndarray
    Q_0: np.ndarray
    g1: np.ndarray
    A: np.ndarray
    kind: ParameterKind
    variant: Variant
    plan: FoldPlan

    @classmethod
    def from_nuisances(
        cls, nuis: CrossFittedNuisances, data: Dataset, kind, variant
    ) -> "TargetingState":
        return cls(
            Q_A=clamp_q(nuis.Q0_A),
            Q_1=clamp_q(nuis.Q0_1),
            Q_0=clamp_q(nuis.Q0_0),
            g1=np.asarray(nuis.g1, dtype=float),
            A=data.A,
            kind=ParameterKind.parse(kind),
            variant=Variant.parse(variant),
            plan=nuis.plan,
        )


@dataclass
class FluctuationTrace:
    """Per-iteration record of the targeting loop.

    ``ic_mean``, ``sigma_hat``, ``loglik`` and ``psi`` have one entry per
    evaluated iterate (k + 1 entries); ``eps`` has one entry per fitted
    fluctuation.
    """

    eps: List[float] = field(default_factory=list)
    ic_mean: List[float] = field(default_factory=list)
    sigma_hat: List[float] = field(default_factory=list)
    loglik: List[float] = field(default_factory=list)
    psi: List[float] = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    @property
    def k(self) -> int:
        return sum(1 for e in self.eps if abs(e) >= EPS_NEGLIGIBLE)


def fluctuation_loglik(Y, offset, h, eps: float) -> float:
    eta = offset + eps * h
    return float(np.sum(Y * eta - np.logaddexp(0.0, eta)))


def _golden(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def fit_epsilon(Y, offset, h_A) -> float:
    """Maximum-likelihood ε for logit(μ) = offset + ε·h with no intercept.

    Newton's method from ε = 0; golden-section search on [-10, 10] if
    Newton fails to settle or leaves the likelihood worse than at 0.
    """
    Y = np.asarray(Y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    h = np.asarray(h_A, dtype=float)
    if not np.all(np.isfinite(offset)):
        raise TargetingError("non-finite offset; predictions must be clamped before logit")
    if not np.any(h):
        return 0.0
    ll0 = fluctuation_loglik(Y, offset, h, 0.0)
    if not np.isfinite(ll0):
        raise TargetingError("non-finite fluctuation log-likelihood")

    eps = 0.0
    for _ in range(NEWTON_MAX_ITER):
        mu = expit(offset + eps * h)
        score = float(np.sum(h * (Y - mu)))
        info = float(np.sum(h * h * mu * (1 - mu)))
        if info <= 0 or not np.isfinite(info):
            break
        step = score / info
        eps += step
        if not np.isfinite(eps) or abs(eps) > 1e3:
            break
        if abs(step) <= NEWTON_TOL:
            if fluctuation_loglik(Y, offset, h, eps) >= ll0:
                return eps
            break
    eps = _golden(lambda e: fluctuation_loglik(Y, offset, h, e), *GOLDEN_BRACKET)
    if not np.isfinite(fluctuation_loglik(Y, offset, h, eps)):
        raise TargetingError("non-finite fluctuation log-likelihood")
    return eps


def apply_fluctuation(state: TargetingState, eps: float, cc: CleverCovariates) -> TargetingState:
    if eps == 0.0:
        return state

    def shift(q, h):
        # rows with a zero covariate are left bit-identical
        return np.where(h == 0, q, clamp_q(expit(logit(q) + eps * h)))

    return replace(
        state,
        Q_A=shift(state.Q_A, cc.h_A),
        Q_1=shift(state.Q_1, cc.h_1),
        Q_0=shift(state.Q_0, cc.h_0),
    )


def stopping_check(d_Y, sigma_hat: float, n: int) -> bool:
    """True when the mean residual IC is within sigma_hat / n of zero."""
    m = float(np.mean(d_Y))
    if sigma_hat == 0:
        return m == 0.0
    return abs(m) <= sigma_hat / n


@dataclass(frozen=True, eq=False)
class Evaluation:
    b: np.ndarray
    cc: CleverCovariates
    psi: float
    ic: ICComponents
    sigma_hat: float


def evaluate(state: TargetingState, Y) -> Evaluation:
    """Blip, clever covariates, plug-in and IC at the current iterate."""
    b = blip(state.Q_1, state.Q_0)
    cc = clever_covariates(state.kind, state.variant, b, state.g1, state.A, state.plan)
    psi = plugin_estimate(state.kind, state.variant, b, state.Q_1, state.plan)
    ic = influence_curve(
        state.kind, state.variant, cc, state.Q_A, Y, b, state.Q_1, psi, state.plan
    )
    return Evaluation(b, cc, psi, ic, float(np.std(ic.total, ddof=1)))


def run_targeting(
    nuisances: CrossFittedNuisances,
    data: Dataset,
    kind,
    variant,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Tuple[TargetingState, FluctuationTrace]:
    """Fluctuate until the residual IC mean drops below sigma_hat / n.

    Every iteration recomputes the blip (and, for VTE, its centring means)
    from the current counterfactual predictions before building the clever
    covariate. The loop also stops when the fitted ε is negligible or after
    ``max_iter`` fluctuations; the latter is reported, not raised.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    state = TargetingState.from_nuisances(nuisances, data, kind, variant)
    Y, n = data.Y, data.n
    trace = FluctuationTrace()

    for it in range(max_iter + 1):
        ev = evaluate(state, Y)
        offset = logit(state.Q_A)
        trace.ic_mean.append(float(np.mean(ev.ic.d_Y)))
        trace.sigma_hat.append(ev.sigma_hat)
        trace.loglik.append(fluctuation_loglik(Y, offset, ev.cc.h_A, 0.0))
        trace.psi.append(ev.psi)
        if stopping_check(ev.ic.d_Y, ev.sigma_hat, n):
            trace.converged, trace.reason = True, "tolerance-met"
            break
        if it == max_iter:
            trace.converged, trace.reason = False, "max-iter"
            break
        eps = fit_epsilon(Y, offset, ev.cc.h_A)
        trace.eps.append(eps)
        if abs(eps) < EPS_NEGLIGIBLE:
            trace.converged, trace.reason = True, "eps-negligible"
            break
        state = apply_fluctuation(state, eps, ev.cc)
    return state, trace


def write_trace_csv(path, trace: FluctuationTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "eps", "ic_mean", "sigma_hat", "loglik"])
        for k in range(len(trace.ic_mean)):
            eps = repr(trace.eps[k]) if k < len(trace.eps) else ""
            w.writerow(
                [k, eps, repr(trace.ic_mean[k]), repr(trace.sigma_hat[k]), repr(trace.loglik[k])]
            )
