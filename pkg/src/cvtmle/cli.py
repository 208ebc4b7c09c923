"""Command-line entry point: ``cvtmle estimate`` and ``cvtmle simulate``.

Every flag can also be given in a flat YAML/JSON config file (``--config``)
using the flag name with dashes or underscores as key. Flags given on the
command line override the file; ``CVTMLE_SEED`` overrides only the default
seed. Exit codes: 0 success, 2 configuration or data error, 3 estimation
failure, 4 too many failed simulation replicates.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .crossfit import DEFAULT_G_BOUNDS, write_nuisances_csv
from .data import CVTMLEError, DataError, ParameterKind, load_csv
from .estimator import DEFAULT_G_LEARNERS, DEFAULT_Q_LEARNERS, estimate
from .inference import summary_csv
from .learners import parse_learner
from .parameters import Variant
from .simulator import (
    DGPSpec,
    EstimatorConfig,
    aggregate_json,
    compare_variants,
    get_dgp,
    run_monte_carlo,
    write_replicates_csv,
)
from .targeting import DEFAULT_MAX_ITER, evaluate, write_trace_csv

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_REPLICATES = 0, 2, 3, 4

DEFAULTS: Dict[str, Any] = {
    "param": "ate",
    "variant": "stacked",
    "folds": 10,
    "seed": 0,
    "q_learners": ",".join(DEFAULT_Q_LEARNERS),
    "g_learners": ",".join(DEFAULT_G_LEARNERS),
    "g_bounds": f"{DEFAULT_G_BOUNDS[0]},{DEFAULT_G_BOUNDS[1]}",
    "max_iter": DEFAULT_MAX_ITER,
    "alpha": 0.05,
    "treatment": "A",
    "outcome": "Y",
    "n": 1000,
    "reps": 100,
    "jobs": 1,
    "compare_variants": False,
    "no_stratify": False,
}


class ConfigError(CVTMLEError, ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    parameter: ParameterKind
    variant: Variant
    K: int
    seed: int
    q_candidates: Tuple[str, ...]
    g_candidates: Tuple[str, ...]
    g_bounds: Tuple[float, float]
    max_iter: int
    alpha: float
    stratify: bool = True
    data: Optional[str] = None
    treatment: str = "A"
    outcome: str = "Y"
    dgp: Optional[DGPSpec] = None
    n: int = 1000
    reps: int = 100
    jobs: int = 1
    compare_variants: bool = False
    out: Optional[str] = None
    out_csv: Optional[str] = None
    summary_csv: Optional[str] = None
    dump_nuisances: Optional[str] = None
    dump_trace: Optional[str] = None
    dump_ic: Optional[str] = None
    effective: Dict[str, Any] = field(default_factory=dict)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML/JSON file of flag values")
    p.add_argument("--param", help="ate, tsm or vte (default ate)")
    p.add_argument("--variant", help="stacked or foldwise (default stacked)")
    p.add_argument("--folds", "-K", type=int, help="number of folds (default 10)")
    p.add_argument("--seed", type=int, help="fold / simulation seed (default 0 or $CVTMLE_SEED)")
    p.add_argument("--q-learners", help="comma-separated outcome learners, e.g. mean,glm,glm-interact")
    p.add_argument("--g-learners", help="comma-separated propensity learners, e.g. mean,glm")
    p.add_argument("--g-bounds", help="propensity truncation bounds lo,hi (default 0.025,0.975)")
    p.add_argument("--max-iter", type=int, help="maximum targeting iterations (default 100)")
    p.add_argument("--alpha", type=float, help="1 - confidence level (default 0.05)")
    p.add_argument("--no-stratify", action="store_true", default=None,
                   help="do not stratify folds by treatment arm")
    p.add_argument("--out", help="write the JSON report/aggregate here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvtmle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate a parameter from a CSV file")
    _common(est)
    est.add_argument("--data", help="CSV file with a header row")
    est.add_argument("--treatment", help="treatment column name (default A)")
    est.add_argument("--outcome", help="outcome column name (default Y)")
    est.add_argument("--summary-csv", help="append a one-line CSV summary to this file")
    est.add_argument("--dump-nuisances", help="CSV of stacked initial predictions")
    est.add_argument("--dump-trace", help="CSV of the targeting trace")
    est.add_argument("--dump-ic", help="CSV of per-row influence-curve components")

    sim = sub.add_parser("simulate", help="Monte Carlo study on a known-truth DGP")
    _common(sim)
    sim.add_argument("--dgp", help="preset name (dgp-a, dgp-b, dgp-c)")
    sim.add_argument("--n", type=int, help="sample size per replicate")
    sim.add_argument("--reps", type=int, help="number of replicates")
    sim.add_argument("--jobs", type=int, help="worker processes (default 1)")
    sim.add_argument("--compare-variants", action="store_true", default=None,
                     help="run stacked and foldwise on shared replicates")
    sim.add_argument("--out-csv", help="per-replicate CSV (stacked rows when comparing)")
    return parser


def _load_config_file(path: str) -> Dict[str, Any]:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must be a flat key-value mapping")
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def _split(value) -> Tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(str(v).strip() for v in value)
    return tuple(s.strip() for s in str(value).split(",") if s.strip())


def resolve_config(args: argparse.Namespace, env=None) -> RunConfig:
    """Merge defaults, environment, config file and flags, then validate everything."""
    env = os.environ if env is None else env
    merged = dict(DEFAULTS)
    if env.get("CVTMLE_SEED"):
        try:
            merged["seed"] = int(env["CVTMLE_SEED"])
        except ValueError:
            raise ConfigError(f"CVTMLE_SEED must be an integer, got {env['CVTMLE_SEED']!r}") from None
    if args.config:
        merged.update(_load_config_file(args.config))
    merged.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    merged["command"] = args.command

    try:
        kind = ParameterKind.parse(merged["param"])
        variant = Variant.parse(merged["variant"])
        q = _split(merged["q_learners"])
        g = _split(merged["g_learners"])
        for s in q + g:
            parse_learner(s)
        bounds = tuple(float(x) for x in _split(merged["g_bounds"]))
        K, seed, max_iter = int(merged["folds"]), int(merged["seed"]), int(merged["max_iter"])
        alpha = float(merged["alpha"])
        n, reps, jobs = int(merged["n"]), int(merged["reps"]), int(merged["jobs"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if not q or not g:
        raise ConfigError("learner lists must not be empty")
    if len(bounds) != 2 or not 0 < bounds[0] <= bounds[1] < 1:
        raise ConfigError(f"--g-bounds must be lo,hi with 0 < lo <= hi < 1, got {merged['g_bounds']}")
    if K < 2:
        raise ConfigError(f"--folds must be >= 2, got {K}")
    if max_iter < 1:
        raise ConfigError("--max-iter must be >= 1")
    if not 0 < alpha < 1:
        raise ConfigError(f"--alpha must lie in (0, 1), got {alpha}")

    cfg = RunConfig(
        command=args.command, parameter=kind, variant=variant, K=K, seed=seed,
        q_candidates=q, g_candidates=g, g_bounds=bounds, max_iter=max_iter, alpha=alpha,
        stratify=not bool(merged["no_stratify"]),
        treatment=str(merged["treatment"]), outcome=str(merged["outcome"]),
        n=n, reps=reps, jobs=jobs, compare_variants=bool(merged["compare_variants"]),
        out=merged.get("out"), out_csv=merged.get("out_csv"),
        summary_csv=merged.get("summary_csv"), dump_nuisances=merged.get("dump_nuisances"),
        dump_trace=merged.get("dump_trace"), dump_ic=merged.get("dump_ic"),
    )

    if args.command == "estimate":
        if not merged.get("data"):
            raise ConfigError("--data is required for estimate")
        cfg.data = str(merged["data"])
        if not Path(cfg.data).is_file():
            raise ConfigError(f"data file not found: {cfg.data}")
    else:
        if merged.get("dgp_spec") is not None:
            try:
                cfg.dgp = DGPSpec.from_dict(merged["dgp_spec"])
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"invalid dgp_spec: {exc}") from None
        elif merged.get("dgp"):
            try:
                cfg.dgp = get_dgp(str(merged["dgp"]))
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
        else:
            raise ConfigError("--dgp (or dgp_spec in the config file) is required for simulate")
        if n < 2 or K > n:
            raise ConfigError(f"--n must be >= max(2, folds), got {n}")
        if reps < (2 if cfg.compare_variants else 1):
            raise ConfigError("--reps too small")
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")

    cfg.effective = {
        "command": cfg.command, "param": kind.value.lower(), "variant": variant.value,
        "folds": K, "seed": seed, "q_learners": list(q), "g_learners": list(g),
        "g_bounds": list(bounds), "max_iter": max_iter, "alpha": alpha,
        "stratify": cfg.stratify,
    }
    if cfg.command == "estimate":
        cfg.effective.update(data=cfg.data, treatment=cfg.treatment, outcome=cfg.outcome)
    else:
        cfg.effective.update(dgp=cfg.dgp.to_dict(), n=n, reps=reps, jobs=jobs,
                             compare_variants=cfg.compare_variants)
    return cfg


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _write_ic_csv(path: str, fit, data) -> None:
    ev = evaluate(fit.state, data.Y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "fold", "d_Y", "d_W", "total"])
        total = ev.ic.total
        for i in range(data.n):
            w.writerow([i + 1, int(fit.state.plan.assignment[i]), repr(float(ev.ic.d_Y[i])),
                        repr(float(ev.ic.d_W[i])), repr(float(total[i]))])


def cmd_estimate(cfg: RunConfig) -> int:
    try:
        data = load_csv(cfg.data, cfg.treatment, cfg.outcome)
    except DataError as exc:
        print(f"cvtmle: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        fit = estimate(
            data, cfg.parameter, cfg.variant, K=cfg.K, seed=cfg.seed,
            q_learners=cfg.q_candidates, g_learners=cfg.g_candidates, g_bounds=cfg.g_bounds,
            max_iter=cfg.max_iter, alpha=cfg.alpha, stratify=cfg.stratify, config=cfg.effective,
        )
    except (CVTMLEError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cvtmle: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    _emit(fit.report.to_json(), cfg.out)
    if cfg.summary_csv:
        path = Path(cfg.summary_csv)
        new = not path.exists() or path.stat().st_size == 0
        with path.open("a", encoding="utf-8") as fh:
            fh.write(summary_csv(fit.report, header=new))
    if cfg.dump_nuisances:
        write_nuisances_csv(cfg.dump_nuisances, fit.nuisances)
    if cfg.dump_trace:
        write_trace_csv(cfg.dump_trace, fit.trace)
    if cfg.dump_ic:
        _write_ic_csv(cfg.dump_ic, fit, data)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    est = EstimatorConfig(
        K=cfg.K, q_learners=cfg.q_candidates, g_learners=cfg.g_candidates,
        g_bounds=cfg.g_bounds, max_iter=cfg.max_iter, alpha=cfg.alpha, stratify=cfg.stratify,
    )
    if cfg.compare_variants:
        res = compare_variants(cfg.dgp, cfg.parameter, cfg.n, cfg.reps, cfg.seed, est, cfg.jobs)
        runs = [res.stacked, res.foldwise]
        payload = res.to_dict()
        if cfg.out_csv:
            write_replicates_csv(cfg.out_csv, res.stacked)
            stem = Path(cfg.out_csv)
            write_replicates_csv(stem.with_name(stem.stem + "_foldwise" + stem.suffix), res.foldwise)
    else:
        res = run_monte_carlo(cfg.dgp, cfg.parameter, cfg.variant, cfg.n, cfg.reps, cfg.seed,
                              est, cfg.jobs)
        runs = [res]
        payload = res.aggregate()
        if cfg.out_csv:
            write_replicates_csv(cfg.out_csv, res)
    payload["config"] = cfg.effective
    _emit(json.dumps(payload, indent=2), cfg.out)
    return EXIT_OK if all(r.valid for r in runs) else EXIT_REPLICATES


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"cvtmle: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.command == "estimate":
        return cmd_estimate(cfg)
    return cmd_simulate(cfg)


if __name__ == "__main__":
    sys.exit(main())
