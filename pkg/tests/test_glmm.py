import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize
from scipy.special import expit, logit

from crowdnet.errors import SeparationDetected, SingularDesign
from crowdnet.glmm import (LATENT_VARIANCE, GlmmSpec, LaplaceObjective, composite_r2, fit_glmm, fit_logistic,
                           fit_logistic_bootstrap, predict_probability, variance_decomposition)

import oracles
from oracles import hundred_rows, simulate_two_level, twenty_rows


def test_irls_matches_textbook_oracle():
    y, x = twenty_rows()
    fit = fit_logistic(y, x)
    assert np.allclose(fit.beta, oracles.irls(y, x), atol=1e-6)
    nll = lambda b: -(y @ (x @ b) - np.logaddexp(0, x @ b).sum())
    ref = optimize.minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    assert np.allclose(fit.beta, ref, atol=1e-5)


def test_fit_glmm_without_factors_is_logistic():
    y, x = twenty_rows()
    fit = fit_glmm(GlmmSpec(y, x[:, 1:]))
    assert np.allclose(fit.beta, oracles.irls(y, x), atol=1e-6)
    assert fit.variance_components == {}


def test_intercept_only_closed_form():
    y = np.array([1.0] * 7 + [0.0] * 13)
    fit = fit_glmm(GlmmSpec(y, np.zeros((20, 0))))
    assert fit.beta[0] == pytest.approx(logit(0.35), abs=1e-6)
    assert fit.beta[0] == pytest.approx(-0.619, abs=1e-3)


def test_spec_validation():
    y = np.array([0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        GlmmSpec(y, np.zeros((3, 0)), {"set": ["a", "a", "a"]})
    with pytest.raises(ValueError):
        GlmmSpec(y, np.zeros((3, 0)), {"set": ["a", "b"]})
    with pytest.raises(ValueError):
        GlmmSpec(np.array([0.0, 2.0, 1.0]), np.zeros((3, 0)))


def test_singular_and_separated_designs():
    y = np.array([0.0, 1.0, 0.0, 1.0])
    x = np.column_stack([np.ones(4), [1.0, 2, 3, 4], [2.0, 4, 6, 8]])
    with pytest.raises(SingularDesign):
        fit_logistic(y, x)
    with pytest.raises(SeparationDetected):
        fit_logistic(np.array([0.0, 0, 1, 1]), np.column_stack([np.ones(4), [1.0, 2, 3, 4]]))


@pytest.mark.parametrize("sigma2", [0.05, 0.5, 3.0])
def test_laplace_matches_per_group_oracle(sigma2):
    y, xs, g = simulate_two_level(1, groups=12, per=8)
    x = np.column_stack([np.ones(y.size), xs])
    obj = LaplaceObjective(y, x, {"g": g})
    beta = np.array([0.2, 0.7])
    got = obj.evaluate(np.concatenate([beta, [math.log(sigma2)]]))
    assert got == pytest.approx(oracles.laplace_single_factor(y, x, g, beta, sigma2 + 1e-10), abs=1e-8)


def test_single_factor_fit_maximizes_oracle():
    y, xs, g = simulate_two_level(2, groups=15, per=10)
    x = np.column_stack([np.ones(y.size), xs])
    fit = fit_glmm(GlmmSpec(y, xs[:, None], {"g": g}))
    neg = lambda t: -oracles.laplace_single_factor(y, x, g, t[:2], math.exp(t[2]))
    start = np.concatenate([fit.beta, [math.log(max(fit.variance_components["g"], 1e-4))]])
    ref = optimize.minimize(neg, start + 0.05, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12,
                                                                              "maxiter": 4000})
    assert -ref.fun <= fit.log_likelihood + 1e-6
    assert np.allclose(fit.beta, ref.x[:2], atol=1e-3)


def test_gradient_matches_central_differences():
    y, x, factors = hundred_rows()
    obj = LaplaceObjective(y, x, factors)
    fit = fit_glmm(GlmmSpec(y, x[:, 1:], factors))
    comps = [max(fit.variance_components[k], 0.05) for k in factors]
    centre = np.concatenate([fit.beta, np.log(comps)])
    rng = np.random.default_rng(0)
    for _ in range(3):
        theta = centre + rng.normal(0, 0.1, centre.size)
        _, grad = obj.evaluate(theta, gradient=True)
        fd = oracles.central_difference_gradient(obj.evaluate, theta)
        assert np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd))) < 1e-4


def test_history_non_decreasing_and_aic_definition():
    y, x, factors = hundred_rows()
    fit = fit_glmm(GlmmSpec(y, x[:, 1:], factors))
    h = np.array(fit.history)
    assert np.all(np.diff(h) >= -1e-9)
    assert fit.aic == pytest.approx(2 * (3 + 2) - 2 * fit.log_likelihood)
    assert all(v >= 0 for v in fit.variance_components.values())
    assert fit.converged


def test_boundary_variance_reported_near_zero():
    rng = np.random.default_rng(3)
    n = 400
    x = rng.normal(size=n)
    y = (rng.random(n) < expit(0.5 * x)).astype(float)
    g = rng.integers(0, 10, n)
    fit = fit_glmm(GlmmSpec(y, x[:, None], {"g": g}))
    assert fit.variance_components["g"] < 0.05
    assert np.all(np.isfinite(fit.se))


def test_two_level_recovery_over_seeds():
    beta_ok, sig = [], []
    for seed in range(20):
        y, x, g = simulate_two_level(100 + seed)
        fit = fit_glmm(GlmmSpec(y, x[:, None], {"g": g}))
        beta_ok.append(abs(fit.beta[1] - 1.0) <= 3 * fit.se[1])
        sig.append(fit.variance_components["g"])
    sig = np.array(sig)
    assert all(beta_ok)
    assert abs(sig.mean() - 0.5) <= 0.25
    assert np.mean(np.abs(sig - 0.5) <= 0.25) >= 0.8


def test_decomposition_examples():
    d = variance_decomposition({"set": 0.04, "nation": 0.06})
    assert (round(d["individual"], 2), round(d["set"], 2), round(d["nation"], 2)) == (97.05, 1.18, 1.77)
    assert variance_decomposition({"set": 0.0})["individual"] == 100.0
    third = variance_decomposition({"a": LATENT_VARIANCE, "b": LATENT_VARIANCE})
    assert all(v == pytest.approx(100 / 3) for v in third.values())


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(0, 50), max_size=4))
def test_decomposition_sums_to_100(comps):
    assert sum(variance_decomposition(comps).values()) == pytest.approx(100.0, abs=1e-9)


def test_composite_r2():
    y = np.array([1.0] * 7 + [0.0] * 13)
    null = fit_glmm(GlmmSpec(y, np.zeros((20, 0))))
    assert composite_r2(null) == 0.0
    null.linear_predictor_variance = LATENT_VARIANCE
    assert composite_r2(null) == pytest.approx(0.5)
    ys, xs, g = simulate_two_level(5)
    fit = fit_glmm(GlmmSpec(ys, xs[:, None], {"g": g}))
    v = np.var(fit.beta[0] + fit.beta[1] * xs)
    assert fit.composite_r2 == pytest.approx(v / (v + fit.variance_components["g"] + LATENT_VARIANCE))


def test_noise_covariate_aic_band():
    deltas = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        g = np.repeat(np.arange(10), 15)
        y = (rng.random(g.size) < expit(-0.3 + rng.normal(0, 0.5, 10)[g])).astype(float)
        x = rng.normal(size=g.size)
        base = fit_glmm(GlmmSpec(y, np.zeros((g.size, 0)), {"g": g}))
        more = fit_glmm(GlmmSpec(y, x[:, None], {"g": g}))
        deltas.append(more.aic - base.aic)
    assert 0 <= np.mean(deltas) <= 4


def test_predict_probability():
    y = np.array([1.0] * 7 + [0.0] * 13)
    fit = fit_glmm(GlmmSpec(y, np.zeros((20, 0))))
    fit.beta = np.array([math.log(0.52)])
    assert predict_probability(fit, []) == pytest.approx(0.342, abs=5e-4)
    fit.beta = np.array([0.0])
    assert predict_probability(fit, []) == 0.5
    fit.beta = np.array([1e6])
    with pytest.warns(RuntimeWarning):
        p = predict_probability(fit, [])
    assert p == 1 - 1e-12


def test_bootstrap_identical_resamples_give_zero_se():
    y, x = twenty_rows()
    idx = np.tile(np.arange(20), (2, 1))
    fit = fit_logistic_bootstrap(y, x[:, 1:], b=2, indices=idx)
    assert np.all(fit.se == 0)
    with pytest.raises(ValueError):
        fit_logistic_bootstrap(y, x[:, 1:], b=1)


def test_bootstrap_point_estimates_and_pseudo_r2():
    y, x = twenty_rows()
    fit = fit_logistic_bootstrap(y, x[:, 1:], b=50, seed=1)
    assert np.allclose(fit.beta, oracles.irls(y, x), atol=1e-6)
    ll0 = 20 * (y.mean() * math.log(y.mean()) + (1 - y.mean()) * math.log(1 - y.mean()))
    assert fit.pseudo_r2 == pytest.approx(1 - fit.loglik / ll0)
    assert fit.aic == pytest.approx(6 - 2 * fit.loglik)


def test_bootstrap_null_slope():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y = rng.permutation(np.repeat([0.0, 1.0], 50))
        x = rng.normal(size=100)
        fit = fit_logistic_bootstrap(y, x[:, None], b=200, seed=seed)
        assert abs(fit.beta[1] / fit.se[1]) < 3


def test_bootstrap_deterministic_and_worker_independent():
    y, x = twenty_rows()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = fit_logistic_bootstrap(y, x[:, 1:], b=100, seed=5)
        b = fit_logistic_bootstrap(y, x[:, 1:], b=100, seed=5, workers=4)
    assert np.array_equal(a.replicates, b.replicates) and a.redrawn == b.redrawn
