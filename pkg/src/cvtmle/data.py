"""Observed-data containers, CSV ingestion, outcome scaling and fold plans."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "CVTMLEError",
    "DataError",
    "FoldError",
    "ParameterKind",
    "OutcomeScale",
    "Dataset",
    "FoldPlan",
    "make_dataset",
    "load_csv",
    "make_folds",
    "scale_parameter",
    "unscale_parameter",
]


class CVTMLEError(Exception):
    """Base class for all package errors."""


class DataError(CVTMLEError, ValueError):
    """Raised when input data violate the observed-data contract."""


class FoldError(CVTMLEError, ValueError):
    """Raised when a fold plan cannot be built or is unusable."""


class ParameterKind(str, Enum):
    ATE = "ATE"
    TSM = "TSM"
    VTE = "VTE"

    @classmethod
    def parse(cls, value: "str | ParameterKind") -> "ParameterKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(
                f"unknown parameter {value!r}; expected one of ate, tsm, vte"
            ) from None


@dataclass(frozen=True)
class OutcomeScale:
    min: float
    max: float

    @property
    def degenerate(self) -> bool:
        return self.max == self.min

    @property
    def range(self) -> float:
        return self.max - self.min

    def transform(self, y_raw: np.ndarray) -> np.ndarray:
        y_raw = np.asarray(y_raw, dtype=float)
        if self.degenerate:
            return np.full(y_raw.shape, 0.5)
        return (y_raw - self.min) / self.range

    @classmethod
    def from_sample(cls, y_raw: np.ndarray) -> "OutcomeScale":
        y_raw = np.asarray(y_raw, dtype=float)
        return cls(float(np.min(y_raw)), float(np.max(y_raw)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """n observations of (W, A, Y) with the outcome min-max scaled to [0, 1].

    Build instances with :func:`make_dataset` or :func:`load_csv`; both
    validate the invariants. Arrays are marked read-only.
    """

    W: np.ndarray
    A: np.ndarray
    Y_raw: np.ndarray
    Y: np.ndarray
    scale: OutcomeScale
    covariate_names: tuple = field(default=())

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def p(self) -> int:
        return int(self.W.shape[1])


def _readonly(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float, copy=True)
    x.setflags(write=False)
    return x


def make_dataset(
    W, A, Y_raw, covariate_names: Optional[Sequence[str]] = None
) -> Dataset:
    """Validate arrays and build a :class:`Dataset` with a sample-derived scale."""
    A = np.asarray(A, dtype=float).ravel()
    Y_raw = np.asarray(Y_raw, dtype=float).ravel()
    n = A.shape[0]
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W.reshape(n, -1) if W.size else np.zeros((n, 0))
    if W.shape[0] != n or Y_raw.shape[0] != n:
        raise DataError(
            f"length mismatch: W has {W.shape[0]} rows, A {n}, Y {Y_raw.shape[0]}"
        )
    if n < 2:
        raise DataError(f"need at least 2 observations, got {n}")
    for name, arr in (("W", W), ("A", A), ("Y", Y_raw)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite entries in {name}")
    bad = np.flatnonzero((A != 0) & (A != 1))
    if bad.size:
        raise DataError(
            f"treatment not binary: value {A[bad[0]]:g} at row {bad[0] + 1}"
        )
    if A.min() == A.max():
        raise DataError("treatment takes a single value; both arms are required")
    scale = OutcomeScale.from_sample(Y_raw)
    if covariate_names is None:
        covariate_names = [f"W{j + 1}" for j in range(W.shape[1])]
    return Dataset(
        W=_readonly(W),
        A=_readonly(A),
        Y_raw=_readonly(Y_raw),
        Y=_readonly(scale.transform(Y_raw)),
        scale=scale,
        covariate_names=tuple(covariate_names),
    )


def load_csv(path, treatment_col: str = "A", outcome_col: str = "Y") -> Dataset:
    """Read a header-row CSV; every column other than treatment/outcome is a covariate.

    Raises
    ------
    DataError
        On a missing column, a non-numeric cell, a non-binary treatment
        value or fewer than two rows. Messages name the offending row
        (1-based, header excluded) and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        for col in (treatment_col, outcome_col):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite cell {cell!r} at row {lineno}, column {col!r}"
                    )
                values.append(v)
            rows.append(values)

    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    table = np.array(rows, dtype=float)
    ia, iy = header.index(treatment_col), header.index(outcome_col)
    A = table[:, ia]
    bad = np.flatnonzero((A != 0) & (A != 1))
    if bad.size:
        raise DataError(
            f"{path}: treatment not binary: value {A[bad[0]]:g} at row {bad[0] + 1}, "
            f"column {treatment_col!r}"
        )
    w_idx = [j for j in range(len(header)) if j not in (ia, iy)]
    return make_dataset(
        table[:, w_idx], A, table[:, iy], covariate_names=[header[j] for j in w_idx]
    )


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """A partition of ``n`` rows into ``K`` validation folds labelled 1..K."""

    K: int
    assignment: np.ndarray
    seed: int
    stratified: bool = False

    @property
    def n(self) -> int:
        return int(self.assignment.shape[0])

    def validation(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def training(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K + 1)[1:]

    @property
    def equal_sizes(self) -> bool:
        s = self.sizes()
        return bool(s.min() == s.max())

    def fold_means(self, x: np.ndarray) -> np.ndarray:
        """Per-row mean of ``x`` over the row's own validation fold."""
        sums = np.bincount(self.assignment, weights=x, minlength=self.K + 1)
        return (sums / np.maximum(np.bincount(self.assignment, minlength=self.K + 1), 1))[
            self.assignment
        ]


def make_folds(
    n: int, K: int = 10, seed: int = 0, stratify_by: Optional[np.ndarray] = None
) -> FoldPlan:
    """Balanced random partition of ``range(n)`` into K folds.

    Rows are shuffled (within strata when ``stratify_by`` is given), strata
    are laid end to end, and folds are dealt round-robin along that order.
    This keeps overall fold sizes within one of each other and, within each
    stratum, also within one.
    """
    n, K = int(n), int(K)
    if K < 2:
        raise FoldError(f"need K >= 2 folds, got {K}")
    if K > n:
        raise FoldError(f"K={K} exceeds the number of rows n={n}")
    rng = np.random.default_rng(seed)
    if stratify_by is None:
        order = rng.permutation(n)
    else:
        strata = np.asarray(stratify_by).ravel()
        if strata.shape[0] != n:
            raise FoldError("stratify_by length differs from n")
        parts = []
        for level in np.unique(strata):
            members = np.flatnonzero(strata == level)
            # a singleton stratum leaves the training set of its fold without that level
            if members.size < 2:
                raise FoldError(
                    f"stratum {level:g} has {members.size} row(s); some training fold "
                    "would lose that treatment arm"
                )
            parts.append(rng.permutation(members))
        order = np.concatenate(parts)
    assignment = np.empty(n, dtype=np.intp)
    assignment[order] = np.arange(n) % K + 1
    assignment.setflags(write=False)
    return FoldPlan(K=K, assignment=assignment, seed=int(seed), stratified=stratify_by is not None)


def unscale_parameter(psi_scaled: float, kind, scale: OutcomeScale) -> float:
    """Map a parameter from scaled-outcome units back to original units."""
    kind = ParameterKind.parse(kind)
    if scale.degenerate:
        return scale.min if kind is ParameterKind.TSM else 0.0
    r = scale.range
    if kind is ParameterKind.ATE:
        return psi_scaled * r
    if kind is ParameterKind.VTE:
        return psi_scaled * r * r
    return scale.min + psi_scaled * r


def scale_parameter(psi: float, kind, scale: OutcomeScale) -> float:
    """Inverse of :func:`unscale_parameter` on a non-degenerate scale."""
    kind = ParameterKind.parse(kind)
    if scale.degenerate:
        raise DataError("cannot scale a parameter on a degenerate outcome scale")
    r = scale.range
    if kind is ParameterKind.ATE:
        return psi / r
    if kind is ParameterKind.VTE:
        return psi / (r * r)
    return (psi - scale.min) / r


def scale_factor(kind, scale: OutcomeScale) -> float:
    """Linear factor relating scaled and original units (0 on a degenerate scale)."""
    kind = ParameterKind.parse(kind)
    if scale.degenerate:
        return 0.0
    return scale.range**2 if kind is ParameterKind.VTE else scale.range
