import math

import numpy as np
import pytest

from adds import (GmmDenoiser, GmmEpsDenoiser, GmmModel, ZeroDenoiser,
                  build_linear_schedule, gmm_posterior_mean, mc_posterior_mean_oracle)
from adds.denoise import OracleError, ParseError, eps_to_x0, x0_to_eps
from adds.oracles import check_denoiser, random_gmm


def unit_gmm(d=1):
    return GmmModel(weights=[1.0], means=np.zeros((1, d)), scales=[1.0], labels=[0])


def test_zero_denoiser(two_step):
    out = ZeroDenoiser(3).predict(np.ones(3), 2, two_step)
    assert out.x0_hat.tolist() == [0.0, 0.0, 0.0]


def test_single_gaussian_posterior_mean():
    got = gmm_posterior_mean(unit_gmm(), np.array([2.0]), 0.5)
    assert got[0] == pytest.approx(math.sqrt(0.5) * 2.0, rel=1e-14)  # 1.41421
    x = np.array([1.0, -0.5, 3.0])
    np.testing.assert_allclose(gmm_posterior_mean(unit_gmm(3), x, 0.5), math.sqrt(0.5) * x, rtol=1e-14)


def test_alpha_bar_one_returns_input(task):
    x = np.array([0.3, -1.7])
    assert np.array_equal(gmm_posterior_mean(task, x, 1.0), x)


def test_symmetric_mixture_at_origin():
    g = GmmModel(weights=[0.5, 0.5], means=[[1.5, -0.5], [-1.5, 0.5]], scales=[0.7, 0.7], labels=[0, 1])
    np.testing.assert_allclose(gmm_posterior_mean(g, np.zeros(2), 0.3), 0.0, atol=1e-15)


def test_posterior_mean_limits(task):
    rng = np.random.default_rng(0)
    for x in rng.normal(0, 1.5, (20, 2)):
        near_clean = gmm_posterior_mean(task, x, 1 - 1e-9)
        np.testing.assert_allclose(near_clean, x, rtol=1e-3, atol=1e-6)
        near_noise = gmm_posterior_mean(task, x, 1e-9)
        np.testing.assert_allclose(near_noise, task.prior_mean(), atol=1e-3)


def test_posterior_mean_is_batched(task):
    rng = np.random.default_rng(1)
    xs = rng.normal(0, 1, (5, 4, 2))
    batched = gmm_posterior_mean(task, xs, 0.4)
    for idx in np.ndindex(5, 4):
        np.testing.assert_allclose(batched[idx], gmm_posterior_mean(task, xs[idx], 0.4), rtol=1e-13)


def test_posterior_mean_rejects_bad_alpha_bar(task):
    for ab in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            gmm_posterior_mean(task, np.zeros(2), ab)


def test_mc_oracle_agrees_on_random_cases():
    res = check_denoiser(seed=3, cases=50, n_samples=100_000)
    assert res.passed, res.failures


def test_mc_oracle_determinism_and_clean_limit(task):
    x = np.array([0.2, 0.1])
    a = mc_posterior_mean_oracle(task, x, 0.5, 5000, seed=9)
    b = mc_posterior_mean_oracle(task, x, 0.5, 5000, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    est, se = mc_posterior_mean_oracle(task, x, 1.0, 5000)
    assert np.array_equal(est, x) and np.all(se == 0)


def test_mc_oracle_ill_conditioned():
    g = GmmModel(weights=[1.0], means=[[0.0]], scales=[0.01], labels=[0])
    with pytest.raises(OracleError):
        mc_posterior_mean_oracle(g, np.array([1e6]), 1 - 1e-12, 1000)
    with pytest.raises(ValueError):
        mc_posterior_mean_oracle(g, np.array([0.0]), 0.5, 10)


def test_default_covariance_is_posterior_std(linear1000, task):
    out = GmmDenoiser(task).predict(np.zeros((4, 2)), 500, linear1000)
    assert np.all(out.sigma_diag == math.sqrt(linear1000.posterior_var(500)))
    assert np.all(GmmDenoiser(task, noise_std=0.0).predict(np.zeros(2), 5, linear1000).sigma_diag == 0)


def test_dimension_mismatch(two_step, task):
    with pytest.raises(ValueError):
        GmmDenoiser(task).predict(np.zeros(3), 1, two_step)


def test_eps_denoiser_matches_x0_denoiser(linear1000, task):
    rng = np.random.default_rng(5)
    x = rng.normal(0, 1, (10, 2))
    for t in (1, 17, 400, 999):
        a = GmmDenoiser(task).predict(x, t, linear1000).x0_hat
        b = GmmEpsDenoiser(task).predict(x, t, linear1000).x0_hat
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_eps_conversions_invert():
    rng = np.random.default_rng(2)
    x_t, x0 = rng.normal(0, 1, (2, 6))
    eps = x0_to_eps(x_t, x0, 0.37)
    np.testing.assert_allclose(eps_to_x0(x_t, eps, 0.37), x0, rtol=1e-13)


def test_gmm_validation():
    with pytest.raises(ValueError):
        GmmModel(weights=[0.5, 0.4], means=[[0.0], [1.0]], scales=[1, 1], labels=[0, 1])
    with pytest.raises(ValueError):
        GmmModel(weights=[1.0], means=[[0.0]], scales=[0.0], labels=[0])
    with pytest.raises(ValueError):
        GmmModel(weights=[1.0], means=[[0.0], [1.0]], scales=[1.0], labels=[0])


def test_gmm_text_round_trip():
    g = random_gmm(np.random.default_rng(0), 3, 4)
    back = GmmModel.from_text(g.to_text())
    for f in ("weights", "means", "scales", "labels"):
        assert np.array_equal(getattr(back, f), getattr(g, f))


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("gmm K=1 d=1\nweights\n1\nmeans\nx\nscales\n1\nlabels\n0\n", 5),
    ("gmm K=1 d=2\nweights\n1\nmeans\n0\nscales\n1\nlabels\n0\n", 5),
    ("hello\n", 1),
])
def test_gmm_parse_errors(text, line):
    with pytest.raises(ParseError) as err:
        GmmModel.from_text(text)
    assert err.value.lineno == line
