import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adds import (NoiseSchedule, build_linear_schedule, evenly_spaced_timesteps,
                  match_timestep, matching_alpha_bar, respace)
from adds.oracles import alpha_bar_product


def test_two_step_alpha_bars(two_step):
    np.testing.assert_allclose(two_step.alpha_bars, [0.9, 0.72], rtol=1e-15)
    assert two_step.alpha_bar(0) == 1.0


def test_single_step_posterior_var_is_zero():
    s = NoiseSchedule.from_betas([0.5])
    assert s.posterior_vars.tolist() == [0.0]


def test_linear_1000_against_exact_product(linear1000):
    exact = alpha_bar_product(np.linspace(1e-4, 0.02, 1000))
    np.testing.assert_allclose(linear1000.alpha_bars, exact, rtol=1e-13)
    # frozen from the rational-arithmetic oracle
    assert linear1000.alpha_bar(1000) == pytest.approx(4.035829765375685e-05, rel=1e-12)


def test_linear_schedule_invariants(linear1000):
    assert np.all(np.diff(linear1000.betas) >= 0)
    assert np.all(np.diff(linear1000.alpha_bars) < 0)
    prev = np.concatenate([[1.0], linear1000.alpha_bars[:-1]])
    np.testing.assert_allclose(linear1000.alpha_bars, prev * linear1000.alphas, rtol=1e-15)
    assert linear1000.posterior_vars[0] == 0.0
    assert np.all(linear1000.posterior_vars >= 0)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_linear_schedule_rejects_bad_ranges(args):
    with pytest.raises(ValueError):
        build_linear_schedule(*args)


def test_respace_identity(linear1000):
    r = respace(linear1000, range(1, 1001))
    np.testing.assert_allclose(r.alphas, linear1000.alphas, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(r.alpha_bars, linear1000.alpha_bars)


def test_respace_hand_example():
    s = NoiseSchedule.from_alphas([0.8] * 4)
    r = respace(s, [2, 4])
    np.testing.assert_allclose(r.alphas, [0.64, 0.64], rtol=1e-14)
    np.testing.assert_allclose(r.alpha_bars, [0.64, 0.4096], rtol=1e-14)
    assert r.timestep_map.tolist() == [2, 4]


def test_respace_twenty_steps(linear1000):
    sel = evenly_spaced_timesteps(1000, 20)
    assert sel[:3] == [50, 100, 150] and sel[-1] == 1000 and len(sel) == 20
    r = respace(linear1000, sel)
    np.testing.assert_allclose(r.alpha_bars, linear1000.alpha_bars[np.array(sel) - 1], rtol=1e-12)
    assert r.posterior_vars[0] == 0.0


@pytest.mark.parametrize("sel", [[3, 2], [0, 5], [5, 1001], [4, 4], []])
def test_respace_rejects_bad_selection(linear1000, sel):
    with pytest.raises(ValueError):
        respace(linear1000, sel)


def test_match_timestep_hand_example(const_08):
    # ratios 0.25, 0.5625, 0.953, 1.441, ...
    assert match_timestep(const_08, 1.0) == 4
    assert matching_alpha_bar(1.0) == 0.5


def test_match_timestep_tiny_sigma(linear1000):
    assert match_timestep(linear1000, 1e-9) == 1


def test_match_timestep_noise_exceeds_schedule(const_08):
    with pytest.raises(ValueError, match="noise exceeds schedule"):
        match_timestep(const_08, 10.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 30.0))
def test_match_timestep_brackets_sigma(sigma):
    s = build_linear_schedule(1000, 1e-4, 0.02)
    t = match_timestep(s, sigma)
    assert s.noise_ratio(t) >= sigma**2
    if t > 1:
        assert s.noise_ratio(t - 1) < sigma**2


def test_text_round_trip(two_step, linear1000):
    for s in (two_step, linear1000):
        back = NoiseSchedule.from_text(s.to_text())
        np.testing.assert_allclose(back.alpha_bars, s.alpha_bars, rtol=1e-15)
        np.testing.assert_array_equal(back.alphas, s.alphas)


def test_from_text_errors():
    with pytest.raises(ValueError, match="line 2"):
        NoiseSchedule.from_text("# header\n1 0.1 0.9\n")
    with pytest.raises(ValueError):
        NoiseSchedule.from_text("")


def test_schedule_is_immutable(two_step):
    with pytest.raises(ValueError):
        two_step.alphas[0] = 0.5
