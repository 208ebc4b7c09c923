"""Parametric base learners and a discrete cross-validation selector.

The library is deliberately small: intercept-only, main-terms GLM,
polynomial GLM and all-pairs interaction GLM. Binomial fits use IRLS and
accept fractional outcomes in [0, 1] (quasi-binomial), which is what the
scaled outcome regression needs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import expit

from .data import CVTMLEError, FoldPlan

__all__ = [
    "LearnerError",
    "LearnerSpec",
    "FittedPredictor",
    "Selection",
    "parse_learner",
    "fit_learner",
    "predict",
    "select_learner",
    "log_loss",
    "squared_error",
]

IRLS_GRAD_TOL = 1e-8
IRLS_MAX_ITER = 100
RIDGE_PENALTY = 1e-6
PROB_CLAMP = 1e-6
SEPARATION_ETA = 30.0
_PRED_EPS = 1e-12
_FORMS = ("intercept-only", "main-terms-glm", "polynomial-glm", "interaction-glm")


class LearnerError(CVTMLEError, RuntimeError):
    pass


@dataclass(frozen=True)
class LearnerSpec:
    family: str = "binomial"
    form: str = "main-terms-glm"
    degree: int = 1

    def __post_init__(self):
        if self.family not in ("binomial", "gaussian"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.form not in _FORMS:
            raise ValueError(f"unknown learner form {self.form!r}")
        if self.form == "polynomial-glm" and self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")

    @property
    def label(self) -> str:
        return {
            "intercept-only": "mean",
            "main-terms-glm": "glm",
            "polynomial-glm": f"glm-poly:{self.degree}",
            "interaction-glm": "glm-interact",
        }[self.form]

    def __str__(self) -> str:
        return self.label


def parse_learner(text: str, family: str = "binomial") -> LearnerSpec:
    """Parse a compact learner string: ``mean``, ``glm``, ``glm-poly:<d>``, ``glm-interact``."""
    t = text.strip().lower()
    if t == "mean":
        return LearnerSpec(family, "intercept-only")
    if t == "glm":
        return LearnerSpec(family, "main-terms-glm")
    if t == "glm-interact":
        return LearnerSpec(family, "interaction-glm")
    if t.startswith("glm-poly"):
        _, _, deg = t.partition(":")
        try:
            degree = int(deg) if deg else 2
        except ValueError:
            raise ValueError(f"bad polynomial degree in learner {text!r}") from None
        return LearnerSpec(family, "polynomial-glm", degree)
    raise ValueError(
        f"unknown learner {text!r}; expected mean, glm, glm-poly:<d> or glm-interact"
    )


@dataclass(frozen=True, eq=False)
class FittedPredictor:
    spec: LearnerSpec
    coefficients: np.ndarray
    n_inputs: int
    power_cols: tuple = ()
    ridge: bool = False
    converged: bool = True
    notes: tuple = field(default=())

    def design(self, X: np.ndarray) -> np.ndarray:
        return _design(self.spec, X, self.power_cols)


def _design(spec: LearnerSpec, X: np.ndarray, power_cols: Sequence[int] = ()) -> np.ndarray:
    m, q = X.shape
    cols = [np.ones(m)]
    if spec.form == "intercept-only":
        return np.column_stack(cols)
    cols.extend(X.T)
    if spec.form == "polynomial-glm":
        for d in range(2, spec.degree + 1):
            cols.extend(X[:, j] ** d for j in power_cols)
    elif spec.form == "interaction-glm":
        cols.extend(X[:, j] * X[:, k] for j, k in combinations(range(q), 2))
    return np.column_stack(cols)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def _binomial_loglik(eta, y):
    # log-likelihood written in terms of the linear predictor for stability
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _irls(Z: np.ndarray, y: np.ndarray, penalty: float):
    """Newton/IRLS for the (optionally ridge-penalised) binomial likelihood.

    Returns (beta, converged, singular). The intercept (column 0) is never
    penalised.
    """
    m, d = Z.shape
    pen = np.full(d, penalty)
    pen[0] = 0.0
    ybar = np.clip(y.mean(), PROB_CLAMP, 1 - PROB_CLAMP)
    beta = np.zeros(d)
    beta[0] = np.log(ybar / (1 - ybar))
    eta = Z @ beta

    def objective(b, e):
        return _binomial_loglik(e, y) - 0.5 * float(np.sum(pen * b * b))

    obj = objective(beta, eta)
    for _ in range(IRLS_MAX_ITER):
        mu = expit(eta)
        grad = Z.T @ (y - mu) - pen * beta
        if np.linalg.norm(grad) <= IRLS_GRAD_TOL:
            return beta, True, False
        w = mu * (1 - mu)
        H = (Z * w[:, None]).T @ Z + np.diag(pen)
        if np.linalg.cond(H) > 1e12:
            return beta, False, True
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = Z @ cand
            obj_c = objective(cand, eta_c)
            if obj_c >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        beta, eta, obj = cand, eta_c, obj_c
    mu = expit(eta)
    grad = Z.T @ (y - mu) - pen * beta
    return beta, bool(np.linalg.norm(grad) <= IRLS_GRAD_TOL), False


def fit_learner(spec: LearnerSpec, X, y) -> FittedPredictor:
    """Fit one learner on (X, y).

    Binomial fits that hit a singular information matrix or fail to reach
    the gradient tolerance (typically separation) are refit with a small
    ridge penalty, and the returned predictor has ``ridge=True``.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    m, q = X.shape
    if m == 0:
        raise LearnerError("cannot fit a learner on empty data")
    if y.shape[0] != m:
        raise LearnerError(f"X has {m} rows but y has {y.shape[0]}")
    if spec.family == "binomial" and (y.min() < 0 or y.max() > 1):
        raise LearnerError("binomial learner requires y in [0, 1]")

    power_cols: tuple = ()
    if spec.form == "polynomial-glm":
        # powers of a two-valued column are collinear with the column itself
        power_cols = tuple(j for j in range(q) if np.unique(X[:, j]).size > 2)

    if spec.family == "binomial" and y.min() == y.max():
        p = float(np.clip(y[0], PROB_CLAMP, 1 - PROB_CLAMP))
        intercept = LearnerSpec(spec.family, "intercept-only")
        return FittedPredictor(
            intercept, np.array([np.log(p / (1 - p))]), q, notes=("constant-outcome",)
        )

    Z = _design(spec, X, power_cols)
    if m <= Z.shape[1] and spec.form != "intercept-only":
        raise LearnerError(
            f"{spec.label}: {m} rows do not exceed {Z.shape[1]} design columns"
        )

    if spec.family == "gaussian":
        beta, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
        if rank < Z.shape[1]:
            pen = np.full(Z.shape[1], RIDGE_PENALTY)
            pen[0] = 0.0
            beta = np.linalg.solve(Z.T @ Z + np.diag(pen), Z.T @ y)
            return FittedPredictor(spec, beta, q, power_cols, ridge=True)
        return FittedPredictor(spec, beta, q, power_cols)

    beta, converged, singular = _irls(Z, y, 0.0)
    # a huge linear predictor means the data are (quasi-)separated and the MLE does not exist
    separated = converged and np.max(np.abs(Z @ beta)) > SEPARATION_ETA
    if converged and not singular and not separated:
        return FittedPredictor(spec, beta, q, power_cols)
    beta, converged, _ = _irls(Z, y, RIDGE_PENALTY)
    if not np.all(np.isfinite(beta)):
        raise LearnerError(f"{spec.label}: IRLS produced non-finite coefficients")
    warnings.warn(
        f"{spec.label}: unpenalised IRLS failed "
        f"({'singular' if singular else 'separation' if separated else 'no convergence'}); "
        f"ridge fallback used",
        RuntimeWarning,
        stacklevel=2,
    )
    return FittedPredictor(spec, beta, q, power_cols, ridge=True, converged=converged)


def predict(fp: FittedPredictor, X) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[0] == 0:
        return np.zeros(0)
    if X.shape[1] != fp.n_inputs:
        raise LearnerError(
            f"predictor expects {fp.n_inputs} input columns, got {X.shape[1]}"
        )
    eta = fp.design(X) @ fp.coefficients
    if fp.spec.family == "gaussian":
        return eta
    return np.clip(expit(eta), _PRED_EPS, 1 - _PRED_EPS)


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, _PRED_EPS, 1 - _PRED_EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def squared_error(y: np.ndarray, p: np.ndarray) -> float:
    return float(np.mean((y - p) ** 2))


class Selection(NamedTuple):
    chosen: LearnerSpec
    fitted: FittedPredictor
    cv_risks: np.ndarray


def select_learner(
    candidates: Sequence[LearnerSpec],
    X,
    y,
    inner_folds: FoldPlan,
    loss: Optional[str] = None,
) -> Selection:
    """Discrete super learner: pick the candidate with least cross-validated risk.

    Out-of-fold predictions are pooled over ``inner_folds`` and scored with
    ``loss`` (log-loss for binomial candidates by default, squared error for
    gaussian). A candidate that fails on any inner training set gets
    infinite risk. The winner (first on ties) is refit on all rows.
    """
    if not candidates:
        raise LearnerError("no candidate learners supplied")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    m = X.shape[0]
    if inner_folds.n != m:
        raise LearnerError(f"inner folds cover {inner_folds.n} rows, data has {m}")
    if loss is None:
        loss = "log-loss" if candidates[0].family == "binomial" else "squared-error"
    score = {"log-loss": log_loss, "squared-error": squared_error}[loss]

    risks = np.full(len(candidates), np.inf)
    for c, spec in enumerate(candidates):
        oof = np.empty(m)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                for k in range(1, inner_folds.K + 1):
                    val, tr = inner_folds.validation(k), inner_folds.training(k)
                    oof[val] = predict(fit_learner(spec, X[tr], y[tr]), X[val])
        except (LearnerError, np.linalg.LinAlgError):
            continue
        r = score(y, oof)
        risks[c] = r if np.isfinite(r) else np.inf

    if not np.any(np.isfinite(risks)):
        raise LearnerError("every candidate learner failed during cross-validation")
    best = int(np.argmin(risks))
    return Selection(candidates[best], fit_learner(candidates[best], X, y), risks)
