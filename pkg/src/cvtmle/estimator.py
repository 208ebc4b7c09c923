"""End-to-end CV-TMLE: folds, cross-fitting, targeting and the report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from .crossfit import DEFAULT_G_BOUNDS, CrossFittedNuisances, crossfit_nuisances
from .data import Dataset, FoldPlan, make_folds
from .inference import EstimateReport, assemble_report
from .learners import LearnerSpec, parse_learner
from .parameters import Variant
from .targeting import DEFAULT_MAX_ITER, FluctuationTrace, TargetingState, run_targeting

__all__ = ["DEFAULT_Q_LEARNERS", "DEFAULT_G_LEARNERS", "Fit", "estimate", "as_specs"]

DEFAULT_Q_LEARNERS = ("mean", "glm", "glm-interact")
DEFAULT_G_LEARNERS = ("mean", "glm")


def as_specs(candidates: Sequence["str | LearnerSpec"]) -> Tuple[LearnerSpec, ...]:
    return tuple(c if isinstance(c, LearnerSpec) else parse_learner(c) for c in candidates)


@dataclass(frozen=True, eq=False)
class Fit:
    report: EstimateReport
    nuisances: CrossFittedNuisances
    state: TargetingState
    trace: FluctuationTrace


def estimate(
    data: Dataset,
    parameter="ate",
    variant="stacked",
    K: int = 10,
    seed: int = 0,
    q_learners: Sequence = DEFAULT_Q_LEARNERS,
    g_learners: Sequence = DEFAULT_G_LEARNERS,
    g_bounds: Tuple[float, float] = DEFAULT_G_BOUNDS,
    max_iter: int = DEFAULT_MAX_ITER,
    alpha: float = 0.05,
    plan: Optional[FoldPlan] = None,
    nuisances: Optional[CrossFittedNuisances] = None,
    stratify: bool = True,
    config: Optional[dict] = None,
) -> Fit:
    """Run the full estimator on ``data``.

    Pass ``nuisances`` to reuse one set of cross-fitted initial predictions
    across parameters or variants; ``plan`` and the learner arguments are
    then ignored.
    """
    if nuisances is None:
        if plan is None:
            plan = make_folds(data.n, K, seed, stratify_by=data.A if stratify else None)
        nuisances = crossfit_nuisances(
            data, plan, as_specs(q_learners), as_specs(g_learners), g_bounds
        )
    state, trace = run_targeting(nuisances, data, parameter, Variant.parse(variant), max_iter)
    report = assemble_report(
        state, trace, data, parameter, variant, alpha, nuisances=nuisances, config=config
    )
    return Fit(report, nuisances, state, trace)
