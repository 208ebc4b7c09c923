"""Blip, clever covariates, plug-in maps and influence-curve pieces.

Two variants are supported. ``stacked`` treats the n validation-set
predictions as one sample: any empirical mean that enters a clever
covariate or a plug-in is taken over all n rows. ``foldwise`` keeps the
fold structure: means are taken within each validation fold and the
per-fold plug-ins are averaged at the end.

For the ATE and the treatment-specific mean the clever covariates contain
no empirical means, so both variants coincide whenever folds have equal
size. They differ only for the blip variance (VTE).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import FoldPlan, ParameterKind

__all__ = [
    "Variant",
    "CleverCovariates",
    "ICComponents",
    "blip",
    "clever_covariates",
    "plugin_estimate",
    "influence_curve",
]


class Variant(str, Enum):
    STACKED = "stacked"
    FOLDWISE = "foldwise"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown variant {value!r}; expected stacked or foldwise"
            ) from None


@dataclass(frozen=True, eq=False)
class CleverCovariates:
    h_A: np.ndarray
    h_1: np.ndarray
    h_0: np.ndarray


@dataclass(frozen=True, eq=False)
class ICComponents:
    d_Y: np.ndarray
    d_W: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.d_Y + self.d_W


def blip(Q1, Q0) -> np.ndarray:
    Q1 = np.asarray(Q1, dtype=float)
    Q0 = np.asarray(Q0, dtype=float)
    if Q1.shape != Q0.shape:
        raise ValueError(f"length mismatch: {Q1.shape} vs {Q0.shape}")
    return Q1 - Q0


def _centered_blip(variant: Variant, b: np.ndarray, plan: FoldPlan) -> np.ndarray:
    if variant is Variant.STACKED:
        return b - b.mean()
    return b - plan.fold_means(b)


def clever_covariates(
    kind, variant, b, g1, A, plan: FoldPlan
) -> CleverCovariates:
    """Clever covariate at the observed treatment and at a=1, a=0.

    ATE uses (2a-1)/g(a|W); TSM uses 1{a=1}/g(1|W). For VTE the ATE
    covariate is multiplied by 2(b - mean(b)), the mean being over all rows
    (stacked) or over the row's validation fold (foldwise).
    """
    kind, variant = ParameterKind.parse(kind), Variant.parse(variant)
    g1 = np.asarray(g1, dtype=float)
    A = np.asarray(A, dtype=float)
    if np.any(g1 <= 0) or np.any(g1 >= 1):
        raise ValueError("propensity scores must lie strictly inside (0, 1)")

    if kind is ParameterKind.TSM:
        h1 = 1.0 / g1
        h0 = np.zeros_like(g1)
    else:
        h1 = 1.0 / g1
        h0 = -1.0 / (1.0 - g1)
        if kind is ParameterKind.VTE:
            if b is None:
                raise ValueError("VTE clever covariate requires the blip")
            weight = 2.0 * _centered_blip(variant, np.asarray(b, dtype=float), plan)
            h1 = weight * h1
            h0 = weight * h0
    hA = np.where(A == 1, h1, h0)
    return CleverCovariates(h_A=hA, h_1=h1, h_0=h0)


def plugin_estimate(kind, variant, b, Q1, plan: FoldPlan) -> float:
    """Plug-in estimate in scaled outcome units.

    ``foldwise`` averages K per-fold plug-ins computed on validation folds;
    ``stacked`` computes a single plug-in over all n rows. VTE uses the
    divisor-n (empirical distribution) variance.
    """
    kind, variant = ParameterKind.parse(kind), Variant.parse(variant)
    x = np.asarray(Q1 if kind is ParameterKind.TSM else b, dtype=float)
    if x.size == 0:
        raise ValueError("plug-in estimate of an empty sample")

    if variant is Variant.STACKED:
        if kind is ParameterKind.VTE:
            return float(np.mean((x - x.mean()) ** 2))
        return float(x.mean())

    per_fold = []
    for k in range(1, plan.K + 1):
        xv = x[plan.validation(k)]
        if kind is ParameterKind.VTE:
            per_fold.append(np.mean((xv - xv.mean()) ** 2))
        else:
            per_fold.append(xv.mean())
    return float(np.mean(per_fold))


def influence_curve(
    kind, variant, cc: CleverCovariates, Q_A, Y, b, Q1, psi: float, plan: FoldPlan
) -> ICComponents:
    """Residual component h_A (Y - Q_A) and covariate component of the IC."""
    kind, variant = ParameterKind.parse(kind), Variant.parse(variant)
    if not np.isfinite(psi):
        raise ValueError("non-finite plug-in value in influence curve")
    d_Y = cc.h_A * (np.asarray(Y, dtype=float) - np.asarray(Q_A, dtype=float))
    if kind is ParameterKind.ATE:
        d_W = np.asarray(b, dtype=float) - psi
    elif kind is ParameterKind.TSM:
        d_W = np.asarray(Q1, dtype=float) - psi
    else:
        d_W = _centered_blip(variant, np.asarray(b, dtype=float), plan) ** 2 - psi
    return ICComponents(d_Y=d_Y, d_W=d_W)
