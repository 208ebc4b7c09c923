"""Cross-fitted initial estimates of the outcome regression and propensity score."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .data import Dataset, FoldError, FoldPlan, make_folds
from .learners import LearnerSpec, predict, select_learner

__all__ = [
    "DEFAULT_G_BOUNDS",
    "Q_CLAMP",
    "CrossFittedNuisances",
    "crossfit_nuisances",
    "truncate_propensity",
    "clamp_q",
    "write_nuisances_csv",
]

DEFAULT_G_BOUNDS = (0.025, 0.975)
Q_CLAMP = 1e-6
INNER_FOLDS = 5


def clamp_q(q: np.ndarray) -> np.ndarray:
    return np.clip(q, Q_CLAMP, 1 - Q_CLAMP)


def truncate_propensity(g1, bounds: Tuple[float, float] = DEFAULT_G_BOUNDS) -> np.ndarray:
    lo, hi = bounds
    if not (0 < lo <= hi < 1):
        raise ValueError(f"propensity bounds must satisfy 0 < lo <= hi < 1, got {bounds}")
    return np.clip(np.asarray(g1, dtype=float), lo, hi)


@dataclass(frozen=True, eq=False)
class CrossFittedNuisances:
    """Validation-fold predictions for all n rows, stacked in original row order."""

    Q0_A: np.ndarray
    Q0_1: np.ndarray
    Q0_0: np.ndarray
    g1: np.ndarray
    plan: FoldPlan
    g_bounds: Tuple[float, float] = DEFAULT_G_BOUNDS
    g_truncated: int = 0
    per_fold_audit: list = field(default_factory=list)


def _inner_plan(m: int, A_train: np.ndarray, seed: int) -> FoldPlan:
    K = min(INNER_FOLDS, m)
    try:
        return make_folds(m, K, seed=seed, stratify_by=A_train)
    except FoldError:
        return make_folds(m, K, seed=seed)


def crossfit_nuisances(
    data: Dataset,
    plan: FoldPlan,
    q_candidates: Sequence[LearnerSpec],
    g_candidates: Sequence[LearnerSpec],
    g_bounds: Tuple[float, float] = DEFAULT_G_BOUNDS,
) -> CrossFittedNuisances:
    """Fit Q(A, W) and g(1 | W) on each training fold and predict on its validation fold.

    The outcome learner sees the design ``[A, W]``; counterfactual predictions
    overwrite the A column with 1 or 0. Each nuisance is chosen per fold by
    :func:`select_learner` over an inner stratified split of the training rows.
    """
    if plan.n != data.n:
        raise FoldError(f"fold plan covers {plan.n} rows, data has {data.n}")
    lo, hi = g_bounds
    if not (0 < lo <= hi < 1):
        raise ValueError(f"propensity bounds must satisfy 0 < lo <= hi < 1, got {g_bounds}")

    n = data.n
    A, W, Y = data.A, data.W, data.Y
    XA = np.column_stack([A, W])
    X1 = np.column_stack([np.ones(n), W])
    X0 = np.column_stack([np.zeros(n), W])
    Q0_A, Q0_1, Q0_0, g_raw = (np.empty(n) for _ in range(4))
    audit = []

    for k in range(1, plan.K + 1):
        val, tr = plan.validation(k), plan.training(k)
        arms = np.unique(A[tr])
        if arms.size < 2:
            raise FoldError(
                f"training set of fold {k} contains only treatment arm {arms[0]:g}"
            )
        inner = _inner_plan(tr.size, A[tr], seed=plan.seed * 1009 + k)
        q_sel = select_learner(q_candidates, XA[tr], Y[tr], inner)
        g_sel = select_learner(g_candidates, W[tr], A[tr], inner)
        Q0_A[val] = predict(q_sel.fitted, XA[val])
        Q0_1[val] = predict(q_sel.fitted, X1[val])
        Q0_0[val] = predict(q_sel.fitted, X0[val])
        g_raw[val] = predict(g_sel.fitted, W[val])
        audit.append(
            {
                "fold": k,
                "n_validation": int(val.size),
                "Q_learner": q_sel.chosen.label,
                "Q_cv_risks": {
                    s.label: float(r) for s, r in zip(q_candidates, q_sel.cv_risks)
                },
                "Q_ridge": q_sel.fitted.ridge,
                "g_learner": g_sel.chosen.label,
                "g_cv_risks": {
                    s.label: float(r) for s, r in zip(g_candidates, g_sel.cv_risks)
                },
                "g_ridge": g_sel.fitted.ridge,
            }
        )

    g1 = truncate_propensity(g_raw, g_bounds)
    return CrossFittedNuisances(
        Q0_A=clamp_q(Q0_A),
        Q0_1=clamp_q(Q0_1),
        Q0_0=clamp_q(Q0_0),
        g1=g1,
        plan=plan,
        g_bounds=(float(lo), float(hi)),
        g_truncated=int(np.sum((g_raw < lo) | (g_raw > hi))),
        per_fold_audit=audit,
    )


def write_nuisances_csv(path, nuis: CrossFittedNuisances) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "fold", "Q0_A", "Q0_1", "Q0_0", "g1"])
        for i in range(nuis.plan.n):
            w.writerow(
                [
                    i + 1,
                    int(nuis.plan.assignment[i]),
                    repr(float(nuis.Q0_A[i])),
                    repr(float(nuis.Q0_1[i])),
                    repr(float(nuis.Q0_0[i])),
                    repr(float(nuis.g1[i])),
                ]
            )
