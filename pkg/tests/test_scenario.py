import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from offgrid.errors import ConfigurationError, InvalidInputError
from offgrid.numerics import rng_stream
from offgrid.scenario import (
    DopplerCell, ScenarioConfig, base_covariance, clutter_covariance, draw_balanced, draw_batch,
    draw_observation, mf_gain, scenario_preset, steering, steering_derivative,
)


def test_steering_unit_norm_and_periodic():
    p = steering(0.123, 16)
    assert abs(np.linalg.norm(p) - 1.0) < 1e-14
    np.testing.assert_allclose(steering(1.123, 16), p, atol=1e-12)
    np.testing.assert_allclose(steering(0.0, 4), np.full(4, 0.5))


def test_steering_derivative_finite_difference():
    h = 1e-6
    fd = (steering(0.01 + h, 16) - steering(0.01 - h, 16)) / (2 * h)
    np.testing.assert_allclose(steering_derivative(0.01, 16), fd, atol=1e-6)


def test_presets():
    a, b, c = (scenario_preset(k) for k in "abc")
    assert a.clutter_kind == "gaussian" and a.include_awgn
    assert b.clutter_kind == "compound" and not b.include_awgn and b.noise_power == 0.0
    assert c.clutter_kind == "compound" and c.include_awgn
    with pytest.raises(ConfigurationError):
        scenario_preset("z")
    with pytest.raises(ConfigurationError):
        ScenarioConfig(rho=1.0)


def test_covariances():
    cfg = scenario_preset("a")
    C = clutter_covariance(cfg)
    assert C[0, 3] == pytest.approx(0.125)
    np.testing.assert_allclose(base_covariance(cfg), C + np.eye(16))
    np.testing.assert_allclose(base_covariance(scenario_preset("b")), C)


def test_cell_geometry():
    cell = DopplerCell.for_index(3, 16)
    assert cell.center == pytest.approx(3 / 16)
    lo, hi = cell.bounds
    assert hi - lo == pytest.approx(1 / 16)
    assert cell.offset_from_theta(hi) == pytest.approx(1.0)
    assert cell.theta_from_offset(-1.0) == pytest.approx(lo)


@pytest.mark.parametrize("name", ["a", "b", "c"])
def test_h0_second_moment(name):
    cfg = scenario_preset(name)
    z = draw_batch(cfg, 60000, rng_stream(11, name)).z
    C = z.T @ z.conj() / z.shape[0]
    np.testing.assert_allclose(C, base_covariance(cfg), atol=0.06)


def test_h1_snr_definition():
    cfg = scenario_preset("a")
    obs = draw_batch(cfg, 2000, rng_stream(3), snr_db=5.0)
    sigma_inv = np.linalg.inv(base_covariance(cfg))
    snr = np.abs(obs.alpha) ** 2 * mf_gain(obs.theta0, sigma_inv, 16)
    np.testing.assert_allclose(snr, 10 ** 0.5, rtol=1e-10)
    lo, hi = cfg.cell.bounds
    assert np.all((obs.theta0 >= lo) & (obs.theta0 <= hi))
    assert np.all(np.abs(obs.delta) <= 1.0)


def test_draws_deterministic():
    cfg = scenario_preset("c")
    a = draw_balanced(cfg, 100, rng_stream(9))
    b = draw_balanced(cfg, 100, rng_stream(9))
    np.testing.assert_array_equal(a.z, b.z)
    assert a.y.sum() == 50


def test_draw_observation_validates():
    cfg = scenario_preset("a")
    with pytest.raises(InvalidInputError):
        draw_observation(cfg, "H1", None, rng_stream(0))
    with pytest.raises(InvalidInputError):
        draw_observation(cfg, "H2", None, rng_stream(0))
    assert draw_observation(cfg, "H0", None, rng_stream(0)).y == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 32), st.floats(-3, 3))
def test_steering_property(m, theta):
    p = steering(theta, m)
    assert abs(np.linalg.norm(p) - 1) < 1e-12
