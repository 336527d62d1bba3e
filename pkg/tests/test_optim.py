"""Nesterov momentum update behavior."""

import numpy as np
import pytest

from spdnn.engine.network import NumericError
from spdnn.engine.optim import nesterov_step


def test_zero_gradient_zero_velocity_is_fixed_point():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    v = {"w": np.zeros(3)}
    nesterov_step(p, v, {"w": np.zeros(3)}, learning_rate=0.1, momentum=0.9)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0, 3.0])
    np.testing.assert_array_equal(v["w"], 0.0)


def test_zero_momentum_is_plain_gradient_descent():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(5)
    grad = rng.standard_normal(5)
    p = {"w": theta.copy()}
    v = {"w": np.zeros(5)}
    nesterov_step(p, v, {"w": grad}, learning_rate=0.05, momentum=0.0)
    np.testing.assert_allclose(p["w"], theta - 0.05 * grad, atol=1e-15)


def test_quadratic_bowl_converges():
    """On f(x) = x^2 from x=1, 200 steps at lr 0.1, momentum 0.9 must land
    within 1e-3 of the minimum; the engine must match an independent scalar
    simulation of the frozen update equations exactly."""
    theta_ref, vel_ref = 1.0, 0.0
    for _ in range(200):
        g = 2.0 * theta_ref
        vel_ref = 0.9 * vel_ref - 0.1 * g
        theta_ref = theta_ref + 0.9 * vel_ref - 0.1 * g

    p = {"w": np.array([1.0])}
    v = {"w": np.array([0.0])}
    for _ in range(200):
        nesterov_step(p, v, {"w": 2.0 * p["w"]}, learning_rate=0.1, momentum=0.9)

    assert abs(theta_ref) < 1e-3
    assert abs(p["w"][0]) < 1e-3
    np.testing.assert_allclose(p["w"][0], theta_ref, rtol=0, atol=1e-15)


def test_velocity_accumulates():
    p = {"w": np.array([0.0])}
    v = {"w": np.array([0.0])}
    nesterov_step(p, v, {"w": np.array([1.0])}, learning_rate=0.1, momentum=0.9)
    np.testing.assert_allclose(v["w"], [-0.1])
    np.testing.assert_allclose(p["w"], [0.9 * -0.1 - 0.1])


def test_non_finite_gradient_rejected():
    p = {"w": np.array([1.0])}
    v = {"w": np.array([0.0])}
    with pytest.raises(NumericError, match="w"):
        nesterov_step(p, v, {"w": np.array([np.nan])}, learning_rate=0.1, momentum=0.9)


def test_bad_momentum_rejected():
    with pytest.raises(ValueError):
        nesterov_step({}, {}, {}, learning_rate=0.1, momentum=1.0)
