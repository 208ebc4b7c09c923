"""Known-truth data-generating processes and a Monte Carlo harness.

Replicate ``r`` of a run seeded with ``base_seed`` draws from a Philox
stream keyed by ``SeedSequence(base_seed, spawn_key=(r, ...))``, so a
replicate's data and fold split depend on ``(base_seed, r)`` only and not
on execution order or the number of worker processes.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import qmc

from .crossfit import DEFAULT_G_BOUNDS, crossfit_nuisances
from .data import CVTMLEError, Dataset, ParameterKind, make_dataset, make_folds
from .estimator import DEFAULT_G_LEARNERS, DEFAULT_Q_LEARNERS, as_specs, estimate
from .parameters import Variant
from .targeting import DEFAULT_MAX_ITER

__all__ = [
    "DGPSpec",
    "DGP_PRESETS",
    "get_dgp",
    "EstimatorConfig",
    "ReplicateResult",
    "MCResult",
    "PairedSummary",
    "replicate_rng",
    "draw_sample",
    "true_value",
    "run_monte_carlo",
    "compare_variants",
    "write_replicates_csv",
]

QMC_LOG2_POINTS = 20  # 1,048,576 Sobol points for continuous covariates
FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class DGPSpec:
    """Binary treatment / binary outcome law with expit-linear nuisances.

    ``w_law`` lists one entry per covariate: ``("bernoulli", p)`` or
    ``("uniform", None)`` for Uniform(0, 1); covariates are independent.
    g0(W) = expit(g_intercept + g_w·W) and
    Q0(A, W) = expit(q_intercept + q_a·A + q_w·W + q_aw·(A·W)).
    """

    name: str
    w_law: Tuple[Tuple[str, Optional[float]], ...]
    g_intercept: float = 0.0
    g_w: Tuple[float, ...] = ()
    q_intercept: float = 0.0
    q_a: float = 0.0
    q_w: Tuple[float, ...] = ()
    q_aw: Tuple[float, ...] = ()

    def __post_init__(self):
        p = len(self.w_law)
        for kind, prob in self.w_law:
            if kind == "bernoulli":
                if prob is None or not 0 < prob < 1:
                    raise ValueError(f"{self.name}: bernoulli probability must be in (0, 1)")
            elif kind != "uniform":
                raise ValueError(f"{self.name}: unknown covariate law {kind!r}")
        for label, coefs in (("g_w", self.g_w), ("q_w", self.q_w)):
            if len(coefs) != p:
                raise ValueError(f"{self.name}: {label} needs {p} coefficients")
        if self.q_aw and len(self.q_aw) != p:
            raise ValueError(f"{self.name}: q_aw needs 0 or {p} coefficients")
        values = [self.g_intercept, self.q_intercept, self.q_a, *self.g_w, *self.q_w, *self.q_aw]
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"{self.name}: coefficients must be finite")
        # g0 is monotone in each coordinate, so its range over [0, 1]^p is attained at vertices
        vertices = np.array(list(itertools.product((0.0, 1.0), repeat=p)), dtype=float).reshape(2**p, p)
        g = self.g0(vertices)
        if g.min() <= 0.01 or g.max() >= 0.99:
            raise ValueError(f"{self.name}: propensity leaves (0.01, 0.99) on the covariate support")

    @property
    def p(self) -> int:
        return len(self.w_law)

    def g0(self, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W, dtype=float).reshape(-1, self.p)
        return expit(self.g_intercept + W @ np.asarray(self.g_w, dtype=float))

    def Q0(self, A, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W, dtype=float).reshape(-1, self.p)
        A = np.broadcast_to(np.asarray(A, dtype=float), (W.shape[0],))
        eta = self.q_intercept + self.q_a * A + W @ np.asarray(self.q_w, dtype=float)
        if self.q_aw:
            eta = eta + A * (W @ np.asarray(self.q_aw, dtype=float))
        return expit(eta)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "DGPSpec":
        d = dict(d)
        d["w_law"] = tuple(tuple(x) if not isinstance(x, str) else (x, None) for x in d["w_law"])
        for key in ("g_w", "q_w", "q_aw"):
            d[key] = tuple(d.get(key, ()))
        return cls(**d)


DGP_PRESETS: Dict[str, DGPSpec] = {
    "dgp-a": DGPSpec(
        "dgp-a", (("bernoulli", 0.5),), g_intercept=0.0, g_w=(0.0,),
        q_intercept=-0.5, q_a=1.0, q_w=(1.0,),
    ),
    "dgp-b": DGPSpec(
        "dgp-b", (("bernoulli", 0.5),), g_intercept=-0.5, g_w=(1.0,),
        q_intercept=0.0, q_a=-1.0, q_w=(0.0,), q_aw=(2.0,),
    ),
    "dgp-c": DGPSpec(
        "dgp-c", (("uniform", None),), g_intercept=-0.4, g_w=(0.8,),
        q_intercept=-0.5, q_a=0.5, q_w=(1.0,), q_aw=(0.5,),
    ),
}


def get_dgp(name: str) -> DGPSpec:
    try:
        return DGP_PRESETS[name.lower()]
    except KeyError:
        raise KeyError(
            f"unknown DGP {name!r}; presets are {', '.join(sorted(DGP_PRESETS))}"
        ) from None


def replicate_rng(base_seed: int, replicate: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(replicate), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def _replicate_fold_seed(base_seed: int, replicate: int) -> int:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(replicate), 1))
    return int(ss.generate_state(1)[0])


def draw_sample(dgp: DGPSpec, n: int, rng: np.random.Generator) -> Dataset:
    if n < 2:
        raise ValueError("need n >= 2")
    W = np.empty((n, dgp.p))
    for j, (law, prob) in enumerate(dgp.w_law):
        u = rng.random(n)
        W[:, j] = (u < prob).astype(float) if law == "bernoulli" else u
    A = (rng.random(n) < dgp.g0(W)).astype(float)
    Y = (rng.random(n) < dgp.Q0(A, W)).astype(float)
    return make_dataset(W, A, Y)


def _w_support(dgp: DGPSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Integration nodes and weights for the covariate law.

    Bernoulli coordinates are enumerated exactly; uniform coordinates use an
    unscrambled Sobol point set, crossed with the discrete atoms.
    """
    disc = [j for j, (law, _) in enumerate(dgp.w_law) if law == "bernoulli"]
    cont = [j for j, (law, _) in enumerate(dgp.w_law) if law == "uniform"]
    atoms = np.array(list(itertools.product((0.0, 1.0), repeat=len(disc))), dtype=float).reshape(
        2 ** len(disc), len(disc)
    )
    atom_w = np.ones(atoms.shape[0])
    for c, j in enumerate(disc):
        prob = dgp.w_law[j][1]
        atom_w *= np.where(atoms[:, c] == 1.0, prob, 1.0 - prob)
    if cont:
        pts = qmc.Sobol(len(cont), scramble=False).random_base2(QMC_LOG2_POINTS)
    else:
        pts = np.zeros((1, 0))
    nodes = np.empty((atoms.shape[0] * pts.shape[0], dgp.p))
    weights = np.repeat(atom_w, pts.shape[0]) / pts.shape[0]
    nodes[:, disc] = np.repeat(atoms, pts.shape[0], axis=0)
    nodes[:, cont] = np.tile(pts, (atoms.shape[0], 1))
    return nodes, weights


def true_value(dgp: DGPSpec, kind) -> float:
    """Ψ(P0) by exact enumeration (discrete W) or 2^20-point Sobol averaging.

    For the smooth integrands here the Sobol average is accurate to well
    below 1e-5.
    """
    kind = ParameterKind.parse(kind)
    nodes, weights = _w_support(dgp)
    q1, q0 = dgp.Q0(1.0, nodes), dgp.Q0(0.0, nodes)
    if kind is ParameterKind.TSM:
        return float(weights @ q1)
    b = q1 - q0
    mean_b = float(weights @ b)
    if kind is ParameterKind.ATE:
        return mean_b
    return float(weights @ (b - mean_b) ** 2)


@dataclass(frozen=True)
class EstimatorConfig:
    K: int = 10
    q_learners: Tuple[str, ...] = DEFAULT_Q_LEARNERS
    g_learners: Tuple[str, ...] = DEFAULT_G_LEARNERS
    g_bounds: Tuple[float, float] = DEFAULT_G_BOUNDS
    max_iter: int = DEFAULT_MAX_ITER
    alpha: float = 0.05
    stratify: bool = True


@dataclass
class ReplicateResult:
    replicate: int
    psi: float = math.nan
    se: float = math.nan
    ci_lo: float = math.nan
    ci_hi: float = math.nan
    hit: bool = False
    k_iterations: int = 0
    converged: bool = False
    reason: str = ""
    ic_mean_final: float = math.nan
    sigma_hat_final: float = math.nan
    eic_solved: bool = False
    loglik_max_drop: float = 0.0
    scale_min: float = math.nan
    scale_max: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


REPLICATE_COLUMNS = tuple(f for f in ReplicateResult.__dataclass_fields__)


def _replicate_from_report(r: int, rep, truth: float, n: int) -> ReplicateResult:
    ll = np.asarray(rep.loglik_trace)
    drop = float(np.max(ll[:-1] - ll[1:])) if ll.size > 1 else 0.0
    return ReplicateResult(
        replicate=r,
        psi=rep.psi,
        se=rep.se,
        ci_lo=rep.ci_lo,
        ci_hi=rep.ci_hi,
        hit=bool(rep.ci_lo <= truth <= rep.ci_hi),
        k_iterations=rep.k_iterations,
        converged=rep.converged,
        reason=rep.reason,
        ic_mean_final=rep.ic_mean_final,
        sigma_hat_final=rep.sigma_hat_final,
        eic_solved=bool(abs(rep.ic_mean_final) <= rep.sigma_hat_final / n),
        loglik_max_drop=max(drop, 0.0),
        scale_min=rep.scale_min,
        scale_max=rep.scale_max,
    )


_RECOVERABLE = (CVTMLEError, ValueError, ArithmeticError, np.linalg.LinAlgError)


def _run_replicate(args) -> Dict[str, ReplicateResult]:
    dgp, kinds, variants, n, base_seed, r, cfg, truths = args
    out = {}
    try:
        data = draw_sample(dgp, n, replicate_rng(base_seed, r))
        plan = make_folds(
            n, cfg.K, _replicate_fold_seed(base_seed, r),
            stratify_by=data.A if cfg.stratify else None,
        )
        nuis = crossfit_nuisances(
            data, plan, as_specs(cfg.q_learners), as_specs(cfg.g_learners), cfg.g_bounds
        )
    except _RECOVERABLE as exc:
        err = f"{type(exc).__name__}: {exc}"
        return {(k, v): ReplicateResult(r, error=err) for k in kinds for v in variants}
    for k in kinds:
        for v in variants:
            try:
                fit = estimate(
                    data, k, v, max_iter=cfg.max_iter, alpha=cfg.alpha, nuisances=nuis
                )
                out[(k, v)] = _replicate_from_report(r, fit.report, truths[k], n)
            except _RECOVERABLE as exc:
                out[(k, v)] = ReplicateResult(r, error=f"{type(exc).__name__}: {exc}")
    return out


def _map_replicates(tasks, jobs: int):
    if jobs <= 1:
        return [_run_replicate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_replicate, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


@dataclass
class MCResult:
    dgp: str
    parameter: str
    variant: str
    n: int
    reps: int
    base_seed: int
    truth: float
    replicates: List[ReplicateResult] = field(default_factory=list)

    @property
    def successes(self) -> List[ReplicateResult]:
        return [r for r in self.replicates if r.ok]

    @property
    def failure_rate(self) -> float:
        return 1.0 - len(self.successes) / max(len(self.replicates), 1)

    @property
    def valid(self) -> bool:
        return self.failure_rate <= FAILURE_LIMIT

    def _psi(self) -> np.ndarray:
        return np.array([r.psi for r in self.successes])

    @property
    def mean_bias(self) -> float:
        return float(np.mean(self._psi()) - self.truth)

    @property
    def mc_sd(self) -> float:
        """Monte Carlo standard deviation of the estimates (divisor = reps)."""
        return float(np.std(self._psi(), ddof=0))

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self._psi() - self.truth) ** 2)))

    @property
    def coverage(self) -> float:
        return float(np.mean([r.hit for r in self.successes]))

    @property
    def mean_ci_width(self) -> float:
        return float(np.mean([r.ci_hi - r.ci_lo for r in self.successes]))

    @property
    def converged_rate(self) -> float:
        return float(np.mean([r.converged for r in self.successes]))

    @property
    def eic_solved_rate(self) -> float:
        conv = [r for r in self.successes if r.converged]
        return float(np.mean([r.eic_solved for r in conv])) if conv else math.nan

    def aggregate(self) -> Dict[str, Any]:
        return {
            "dgp": self.dgp,
            "parameter": self.parameter,
            "variant": self.variant,
            "n": self.n,
            "reps": self.reps,
            "base_seed": self.base_seed,
            "truth": self.truth,
            "successes": len(self.successes),
            "failure_rate": self.failure_rate,
            "valid": self.valid,
            "mean_bias": self.mean_bias,
            "mc_sd": self.mc_sd,
            "rmse": self.rmse,
            "coverage": self.coverage,
            "mean_ci_width": self.mean_ci_width,
            "converged_rate": self.converged_rate,
            "eic_solved_rate": self.eic_solved_rate,
            "mean_k_iterations": float(np.mean([r.k_iterations for r in self.successes])),
        }


def _truths(dgp, kinds):
    return {k: true_value(dgp, k) for k in kinds}


def run_monte_carlo(
    dgp: DGPSpec,
    kind,
    variant,
    n: int,
    reps: int,
    base_seed: int = 0,
    config: EstimatorConfig = EstimatorConfig(),
    jobs: int = 1,
) -> MCResult:
    kind, variant = ParameterKind.parse(kind), Variant.parse(variant)
    if reps < 1:
        raise ValueError("reps must be >= 1")
    truths = _truths(dgp, [kind])
    tasks = [(dgp, (kind,), (variant,), n, base_seed, r, config, truths) for r in range(reps)]
    rows = [res[(kind, variant)] for res in _map_replicates(tasks, jobs)]
    return MCResult(dgp.name, kind.value, variant.value, n, reps, base_seed, truths[kind], rows)


@dataclass
class PairedSummary:
    stacked: MCResult
    foldwise: MCResult

    @property
    def differences(self) -> np.ndarray:
        pairs = [
            (s.psi, f.psi)
            for s, f in zip(self.stacked.replicates, self.foldwise.replicates)
            if s.ok and f.ok
        ]
        return np.array([s - f for s, f in pairs])

    @property
    def rmse_ratio(self) -> float:
        return self.stacked.rmse / self.foldwise.rmse

    @property
    def coverage_difference(self) -> float:
        return self.stacked.coverage - self.foldwise.coverage

    def to_dict(self) -> Dict[str, Any]:
        d = self.differences
        return {
            "dgp": self.stacked.dgp,
            "parameter": self.stacked.parameter,
            "n": self.stacked.n,
            "reps": self.stacked.reps,
            "pairs": int(d.size),
            "mean_difference": float(d.mean()) if d.size else math.nan,
            "max_abs_difference": float(np.max(np.abs(d))) if d.size else math.nan,
            "rmse_stacked": self.stacked.rmse,
            "rmse_foldwise": self.foldwise.rmse,
            "rmse_ratio": self.rmse_ratio,
            "coverage_stacked": self.stacked.coverage,
            "coverage_foldwise": self.foldwise.coverage,
            "coverage_difference": self.coverage_difference,
            "stacked": self.stacked.aggregate(),
            "foldwise": self.foldwise.aggregate(),
        }


def compare_variants(
    dgp: DGPSpec,
    kind,
    n: int,
    reps: int,
    base_seed: int = 0,
    config: EstimatorConfig = EstimatorConfig(),
    jobs: int = 1,
) -> PairedSummary:
    """Run both variants on the same replicate datasets and initial fits."""
    kind = ParameterKind.parse(kind)
    if reps < 2:
        raise ValueError("a paired comparison needs reps >= 2")
    truths = _truths(dgp, [kind])
    variants = (Variant.STACKED, Variant.FOLDWISE)
    tasks = [(dgp, (kind,), variants, n, base_seed, r, config, truths) for r in range(reps)]
    results = _map_replicates(tasks, jobs)
    out = {
        v: MCResult(
            dgp.name, kind.value, v.value, n, reps, base_seed, truths[kind],
            [res[(kind, v)] for res in results],
        )
        for v in variants
    }
    return PairedSummary(out[Variant.STACKED], out[Variant.FOLDWISE])


def write_replicates_csv(path, result: MCResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATE_COLUMNS)
        for rep in result.replicates:
            d = asdict(rep)
            w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in REPLICATE_COLUMNS])


def aggregate_json(result: "MCResult | PairedSummary") -> str:
    d = result.to_dict() if isinstance(result, PairedSummary) else result.aggregate()
    return json.dumps(d, indent=2)
