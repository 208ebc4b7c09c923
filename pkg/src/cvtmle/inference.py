"""Standard errors, Wald intervals and the estimate report."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .data import Dataset, ParameterKind, scale_factor, unscale_parameter
from .parameters import Variant
from .targeting import FluctuationTrace, TargetingState, evaluate

__all__ = [
    "EstimateReport",
    "standard_error",
    "normal_quantile",
    "confidence_interval",
    "assemble_report",
    "SUMMARY_COLUMNS",
    "summary_csv",
]


def standard_error(ic_total) -> float:
    """sd(IC) / sqrt(n) with the n-1 divisor."""
    ic = np.asarray(ic_total, dtype=float)
    n = ic.shape[0]
    if n < 2:
        raise ValueError("standard error needs at least 2 influence-curve values")
    return float(np.std(ic, ddof=1) / math.sqrt(n))


def normal_quantile(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    # isf avoids the cancellation in 1 - alpha/2 for small alpha
    return float(norm.isf(alpha / 2))


def confidence_interval(psi: float, se: float, alpha: float = 0.05) -> Tuple[float, float]:
    if se < 0:
        raise ValueError("standard error must be non-negative")
    half = normal_quantile(alpha) * se
    return psi - half, psi + half


@dataclass
class EstimateReport:
    parameter: str
    variant: str
    psi: float
    se: float
    ci_lo: float
    ci_hi: float
    alpha: float
    k_iterations: int
    converged: bool
    reason: str
    eps_trace: List[float]
    loglik_trace: List[float]
    ic_mean_final: float
    sigma_hat_final: float
    n: int
    K: int
    seed: int
    psi_scaled: float
    se_scaled: float
    se_residual_only: float
    scale_min: float
    scale_max: float
    g_truncated: int = 0
    learner_audit: List[Dict[str, Any]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self, indent: Optional[int] = 2) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=indent, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "EstimateReport":
        raw = json.loads(text)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in names})


def assemble_report(
    state: TargetingState,
    trace: FluctuationTrace,
    data: Dataset,
    kind,
    variant,
    alpha: float = 0.05,
    nuisances=None,
    config: Optional[Dict[str, Any]] = None,
) -> EstimateReport:
    """Final plug-in, IC-based standard error and interval in original units."""
    kind, variant = ParameterKind.parse(kind), Variant.parse(variant)
    ev = evaluate(state, data.Y)
    n = data.n
    se_scaled = standard_error(ev.ic.total)
    se_resid = standard_error(ev.ic.d_Y)
    notes = []
    if se_scaled == 0:
        notes.append("degenerate-inference: influence curve is constant")
    if data.scale.degenerate:
        notes.append("degenerate-outcome-scale: outcome is constant")
    if not trace.converged:
        notes.append(f"targeting did not converge ({trace.reason})")

    psi = unscale_parameter(ev.psi, kind, data.scale)
    se = se_scaled * scale_factor(kind, data.scale)
    lo, hi = confidence_interval(psi, se, alpha)
    audit = list(nuisances.per_fold_audit) if nuisances is not None else []
    if nuisances is not None and any(a.get("Q_ridge") or a.get("g_ridge") for a in audit):
        notes.append("ridge fallback used in at least one nuisance fit")

    return EstimateReport(
        parameter=kind.value,
        variant=variant.value,
        psi=float(psi),
        se=float(se),
        ci_lo=float(lo),
        ci_hi=float(hi),
        alpha=float(alpha),
        k_iterations=trace.k,
        converged=trace.converged,
        reason=trace.reason,
        eps_trace=[float(e) for e in trace.eps],
        loglik_trace=[float(v) for v in trace.loglik],
        ic_mean_final=float(np.mean(ev.ic.d_Y)),
        sigma_hat_final=ev.sigma_hat,
        n=n,
        K=state.plan.K,
        seed=state.plan.seed,
        psi_scaled=float(ev.psi),
        se_scaled=se_scaled,
        se_residual_only=se_resid * scale_factor(kind, data.scale),
        scale_min=data.scale.min,
        scale_max=data.scale.max,
        g_truncated=nuisances.g_truncated if nuisances is not None else 0,
        learner_audit=audit,
        warnings=notes,
        config=dict(config or {}),
    )


SUMMARY_COLUMNS = (
    "parameter", "variant", "psi", "se", "ci_lo", "ci_hi", "alpha",
    "k_iterations", "converged", "reason", "n", "K", "seed",
)


def summary_csv(report: EstimateReport, header: bool = True) -> str:
    """One-line CSV summary (optionally with header) for tabulating runs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(SUMMARY_COLUMNS)
    d = report.to_dict()
    w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in SUMMARY_COLUMNS])
    return buf.getvalue()
