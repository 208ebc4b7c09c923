import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cvtmle.data import FoldPlan, make_folds
from cvtmle.parameters import (
    CleverCovariates,
    Variant,
    blip,
    clever_covariates,
    influence_curve,
    plugin_estimate,
)


def one_fold(n):
    return FoldPlan(K=1, assignment=np.ones(n, dtype=np.intp), seed=0)


def two_folds(assign):
    return FoldPlan(K=2, assignment=np.asarray(assign, dtype=np.intp), seed=0)


def test_blip_examples():
    np.testing.assert_array_equal(blip([0.3, 0.4], [0.3, 0.4]), [0, 0])
    np.testing.assert_allclose(blip([0.8, 0.6], [0.3, 0.5]), [0.5, 0.1])
    with pytest.raises(ValueError):
        blip([0.1], [0.1, 0.2])


@given(arrays(float, 10, elements=st.floats(0.01, 0.99)), arrays(float, 10, elements=st.floats(0.01, 0.99)))
def test_blip_antisymmetric(q1, q0):
    np.testing.assert_array_equal(blip(q0, q1), -blip(q1, q0))


def test_vte_stacked_constant_blip_kills_covariate():
    b = np.full(4, 0.3)
    cc = clever_covariates("vte", "stacked", b, np.full(4, 0.4), [1, 0, 1, 0], one_fold(4))
    np.testing.assert_array_equal(cc.h_A, 0)


def test_vte_stacked_hand_example():
    # 2(0.2-0.3)(+1)/0.5 and 2(0.4-0.3)(-1)/0.5
    cc = clever_covariates("vte", "stacked", np.array([0.2, 0.4]), np.array([0.5, 0.5]),
                           np.array([1, 0]), one_fold(2))
    np.testing.assert_allclose(cc.h_A, [-0.4, -0.4], atol=1e-15)


def test_ate_hand_example():
    cc = clever_covariates("ate", "stacked", None, np.array([0.25]), np.array([1]), one_fold(1))
    np.testing.assert_allclose(cc.h_A, [4.0])
    np.testing.assert_allclose(cc.h_0, [-4.0 / 3.0])


def test_tsm_covariate_vanishes_under_control():
    cc = clever_covariates("tsm", "foldwise", None, np.array([0.5, 0.2]), np.array([1, 0]), one_fold(2))
    np.testing.assert_allclose(cc.h_1, [2.0, 5.0])
    np.testing.assert_array_equal(cc.h_0, 0)
    np.testing.assert_allclose(cc.h_A, [2.0, 0.0])


def test_vte_foldwise_uses_fold_means():
    b = np.array([0.0, 1.0, 0.5, 0.9])
    plan = two_folds([1, 2, 1, 2])
    cc = clever_covariates("vte", "foldwise", b, np.full(4, 0.5), np.ones(4), plan)
    fold_mean = np.array([0.25, 0.95, 0.25, 0.95])
    np.testing.assert_allclose(cc.h_1, 2 * (b - fold_mean) / 0.5)


def test_vte_requires_blip():
    with pytest.raises(ValueError, match="blip"):
        clever_covariates("vte", "stacked", None, np.full(2, 0.5), [0, 1], one_fold(2))


def test_plugin_constant_blip():
    b = np.full(6, 0.2)
    plan = two_folds([1, 2] * 3)
    for v in Variant:
        assert plugin_estimate("ate", v, b, b, plan) == pytest.approx(0.2, abs=1e-15)
        assert plugin_estimate("vte", v, b, b, plan) == pytest.approx(0.0, abs=1e-15)


def test_plugin_vte_single_fold():
    b = np.array([0.2, 0.4])
    for v in Variant:
        assert plugin_estimate("vte", v, b, b, one_fold(2)) == pytest.approx(0.01, abs=1e-15)


def test_plugin_vte_two_folds_brute_force():
    b = np.array([0.0, 1.0, 0.0, 1.0])
    plan = two_folds([1, 1, 2, 2])
    fold_vars = [np.mean((b[:2] - b[:2].mean()) ** 2), np.mean((b[2:] - b[2:].mean()) ** 2)]
    assert fold_vars == [0.25, 0.25]
    assert plugin_estimate("vte", "foldwise", b, b, plan) == 0.25
    assert plugin_estimate("vte", "stacked", b, b, plan) == 0.25


def test_plugin_tsm_uses_treated_prediction():
    q1 = np.array([0.1, 0.5, 0.9, 0.3])
    assert plugin_estimate("tsm", "stacked", None, q1, one_fold(4)) == pytest.approx(0.45)


def test_plugin_empty_input():
    with pytest.raises(ValueError):
        plugin_estimate("ate", "stacked", np.zeros(0), np.zeros(0), one_fold(0))


def _random_case(seed, n=60, K=6):
    rng = np.random.default_rng(seed)
    q1, q0 = rng.uniform(0.05, 0.95, (2, n))
    g1 = rng.uniform(0.1, 0.9, n)
    A = (rng.random(n) < 0.5).astype(float)
    Y = (rng.random(n) < 0.5).astype(float)
    return q1, q0, g1, A, Y, make_folds(n, K, seed=seed)


def test_zero_residual_gives_zero_dY():
    q1, q0, g1, A, _, plan = _random_case(0)
    QA = np.where(A == 1, q1, q0)
    b = q1 - q0
    cc = clever_covariates("ate", "stacked", b, g1, A, plan)
    ic = influence_curve("ate", "stacked", cc, QA, QA, b, q1, b.mean(), plan)
    np.testing.assert_array_equal(ic.d_Y, 0)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("kind", ["ate", "tsm", "vte"])
def test_covariate_ic_component_is_centred(kind, variant):
    q1, q0, g1, A, Y, plan = _random_case(1)
    QA = np.where(A == 1, q1, q0)
    b = q1 - q0
    psi = plugin_estimate(kind, variant, b, q1, plan)
    cc = clever_covariates(kind, variant, b, g1, A, plan)
    ic = influence_curve(kind, variant, cc, QA, Y, b, q1, psi, plan)
    assert abs(ic.d_W.mean()) <= 1e-10
    np.testing.assert_allclose(ic.total, ic.d_Y + ic.d_W)
    assert ic.total.mean() == pytest.approx(ic.d_Y.mean(), abs=1e-10)


def test_influence_curve_rejects_non_finite_psi():
    cc = CleverCovariates(np.ones(2), np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        influence_curve("ate", "stacked", cc, [0.5, 0.5], [1, 0], [0, 0], [0.5, 0.5], np.nan,
                        one_fold(2))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), K=st.sampled_from([2, 3, 5, 10]), m=st.integers(2, 12))
def test_exact_overlap_for_ate_and_tsm(seed, K, m):
    n = K * m
    q1, q0, g1, A, Y, _ = _random_case(seed, n=n, K=K)
    plan = make_folds(n, K, seed=seed)
    b = q1 - q0
    for kind in ("ate", "tsm"):
        s = clever_covariates(kind, "stacked", b, g1, A, plan)
        f = clever_covariates(kind, "foldwise", b, g1, A, plan)
        np.testing.assert_array_equal(s.h_A, f.h_A)
        assert plugin_estimate(kind, "stacked", b, q1, plan) == pytest.approx(
            plugin_estimate(kind, "foldwise", b, q1, plan), abs=1e-12
        )


@settings(max_examples=100, deadline=None)
@given(
    b=arrays(float, st.integers(2, 40), elements=st.floats(-0.99, 0.99)),
    K=st.integers(1, 5),
)
def test_vte_plugin_nonnegative_and_centering(b, K):
    K = min(K, b.size)
    plan = FoldPlan(K=K, assignment=(np.arange(b.size) % K + 1).astype(np.intp), seed=0)
    for v in Variant:
        assert plugin_estimate("vte", v, b, b, plan) >= 0
    assert abs(np.mean(b - b.mean())) <= 1e-12
    centred = b - plan.fold_means(b)
    for k in range(1, K + 1):
        assert abs(centred[plan.assignment == k].mean()) <= 1e-12
