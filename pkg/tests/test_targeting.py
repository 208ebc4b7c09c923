from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit, logit

from cvtmle.crossfit import CrossFittedNuisances, crossfit_nuisances
from cvtmle.data import make_dataset, make_folds
from cvtmle.estimator import as_specs
from cvtmle.parameters import CleverCovariates
from cvtmle.simulator import draw_sample, get_dgp, replicate_rng
from cvtmle.targeting import (
    FluctuationTrace,
    TargetingState,
    apply_fluctuation,
    evaluate,
    fit_epsilon,
    fluctuation_loglik,
    run_targeting,
    stopping_check,
    write_trace_csv,
)

from conftest import fluctuation_instance, grid_argmax_1d, prepared


def test_fit_epsilon_zero_when_score_vanishes():
    Y = np.array([1.0, 0.0, 1.0, 0.0])
    offset = np.zeros(4)
    h = np.array([1.0, 1.0, -1.0, -1.0])
    # expit(0) = 0.5 and sum h (Y - 0.5) = 0
    assert fit_epsilon(Y, offset, h) == 0.0


def test_fit_epsilon_zero_covariate():
    assert fit_epsilon(np.array([1.0, 0.0]), np.array([0.3, -0.2]), np.zeros(2)) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_fit_epsilon_matches_grid(seed):
    Y, off, h = fluctuation_instance(seed)
    eps = fit_epsilon(Y, off, h)
    oracle = grid_argmax_1d(lambda e: fluctuation_loglik(Y, off, h, e))
    assert abs(eps - oracle) <= 1e-5


def test_fit_epsilon_golden_fallback_on_extreme_instance():
    # Newton's first step from 0 overshoots wildly on this near-separated instance
    # MLE is eps = 8 (mean 0.5) but the score/information ratio at 0 is ~1500
    Y = np.array([1.0] * 5 + [0.0] * 5)
    off = np.full(10, -8.0)
    h = np.ones(10)
    eps = fit_epsilon(Y, off, h)
    assert eps == pytest.approx(8.0, abs=1e-6)
    oracle = grid_argmax_1d(lambda e: fluctuation_loglik(Y, off, h, e))
    assert abs(eps - oracle) <= 1e-5


def test_score_identity_after_fit():
    Y, off, h = fluctuation_instance(9)
    eps = fit_epsilon(Y, off, h)
    assert abs(np.mean(h * (Y - expit(off + eps * h)))) <= 1e-8


def _toy_state(n=8, seed=0):
    rng = np.random.default_rng(seed)
    q1, q0, g = rng.uniform(0.1, 0.9, (3, n))
    A = (np.arange(n) % 2).astype(float)
    return TargetingState(
        Q_A=np.where(A == 1, q1, q0), Q_1=q1, Q_0=q0, g1=g, A=A,
        kind="ATE", variant="stacked", plan=make_folds(n, 2, seed=0),
    )


def test_apply_fluctuation_identity_and_inverse():
    st = _toy_state()
    rng = np.random.default_rng(1)
    cc = CleverCovariates(*rng.normal(size=(3, 8)))
    assert apply_fluctuation(st, 0.0, cc) is st
    back = apply_fluctuation(apply_fluctuation(st, 0.37, cc), -0.37, cc)
    for name in ("Q_A", "Q_1", "Q_0"):
        np.testing.assert_allclose(getattr(back, name), getattr(st, name), atol=1e-10)


def test_apply_fluctuation_zero_covariate_rows_unchanged():
    st = _toy_state()
    h1 = np.r_[np.zeros(4), np.ones(4)]
    cc = CleverCovariates(np.ones(8), h1, np.ones(8))
    new = apply_fluctuation(st, 0.3, cc)
    np.testing.assert_array_equal(new.Q_1[:4], st.Q_1[:4])
    np.testing.assert_allclose(new.Q_1[4:], expit(logit(st.Q_1[4:]) + 0.3))


@pytest.mark.parametrize(
    "d_Y, sigma, n, expected",
    [
        (np.zeros(50), 1.0, 50, True),
        (np.zeros(50), 0.0, 50, True),
        (np.full(50, 0.01), 1.0, 50, True),
        (np.full(50, 0.05), 1.0, 50, False),
        (np.full(50, -0.05), 1.0, 50, False),
        (np.full(50, 0.001), 0.0, 50, False),
    ],
)
def test_stopping_check_table(d_Y, sigma, n, expected):
    assert stopping_check(d_Y, sigma, n) is expected


def test_already_at_tolerance_means_no_fluctuation():
    n = 20
    A = (np.arange(n) % 2).astype(float)
    # both arms have outcome mean 0.5, so Q = 0.5 leaves a residual IC with mean exactly 0
    Y = np.tile([1.0, 1.0, 0.0, 0.0], n // 4)
    data = make_dataset(np.random.default_rng(3).random((n, 1)), A, Y)
    q = np.full(n, 0.5)
    nuis = CrossFittedNuisances(q, q, q, np.full(n, 0.5), make_folds(n, 2, seed=0))
    _, trace = run_targeting(nuis, data, "ate", "stacked")
    assert trace.converged and trace.reason == "tolerance-met"
    assert trace.eps == [] and trace.k == 0


def test_ate_trace_identical_across_variants(dgp_b_1000):
    data, nuis = dgp_b_1000
    _, ts = run_targeting(nuis, data, "ate", "stacked")
    _, tf = run_targeting(nuis, data, "ate", "foldwise")
    np.testing.assert_allclose(ts.eps, tf.eps, atol=1e-12, rtol=0)
    np.testing.assert_allclose(ts.psi, tf.psi, atol=1e-12, rtol=0)


@pytest.mark.parametrize("kind", ["ate", "tsm", "vte"])
@pytest.mark.parametrize("variant", ["stacked", "foldwise"])
def test_targeting_invariants(dgp_b_1000, kind, variant):
    data, nuis = dgp_b_1000
    state, trace = run_targeting(nuis, data, kind, variant)
    assert trace.converged
    ev = evaluate(state, data.Y)
    assert abs(ev.ic.d_Y.mean()) <= ev.sigma_hat / data.n
    assert len(trace.ic_mean) == len(trace.loglik) == len(trace.psi) == trace.k + 1
    assert np.all(np.diff(trace.loglik) >= -1e-9)
    for q in (state.Q_A, state.Q_1, state.Q_0):
        assert np.all((q > 0) & (q < 1))


def test_max_iter_is_flagged_not_raised():
    # this VTE instance needs three fluctuations to reach the tolerance
    data = draw_sample(get_dgp("dgp-c"), 500, replicate_rng(9, 0))
    plan = make_folds(500, 10, seed=9, stratify_by=data.A)
    nuis = crossfit_nuisances(data, plan, as_specs(["glm-poly:3"]), as_specs(["glm"]))
    _, full = run_targeting(nuis, data, "vte", "stacked")
    assert full.converged and full.k == 3
    _, capped = run_targeting(nuis, data, "vte", "stacked", max_iter=1)
    assert not capped.converged and capped.reason == "max-iter"
    assert capped.eps == full.eps[:1] and len(capped.ic_mean) == 2
    with pytest.raises(ValueError):
        run_targeting(nuis, data, "ate", "stacked", max_iter=0)


def test_convergence_rate_on_dgp_a():
    converged = 0
    for r in range(100):
        data, nuis = prepared("dgp-a", 1000, 1000 + r)
        _, trace = run_targeting(nuis, data, "ate", "stacked")
        converged += trace.converged and trace.k <= 20
    assert converged >= 99


def test_trace_dump(tmp_path):
    trace = FluctuationTrace(eps=[0.1], ic_mean=[0.2, 0.0], sigma_hat=[1.0, 1.0],
                             loglik=[-5.0, -4.0], psi=[0.3, 0.31], converged=True,
                             reason="tolerance-met")
    path = tmp_path / "t.csv"
    write_trace_csv(path, trace)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,eps,ic_mean,sigma_hat,loglik"
    assert lines[1] == "0,0.1,0.2,1.0,-5.0" and lines[2] == "1,,0.0,1.0,-4.0"
