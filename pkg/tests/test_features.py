"""Window features: residual values, scaling, and analytic Jacobians."""

import numpy as np
import pytest

from slgp.features import (AccelerationPenalty, AffineFeature, DriftPenalty,
                           check_jacobian, coordinate_target,
                           dynamics_feature, finite_diff_accel)


def test_constant_window_has_zero_acceleration():
    window = np.full((3, 4), 1.7)
    assert np.array_equal(finite_diff_accel(window, dt=0.1), np.zeros(4))


def test_linear_ramp_has_zero_acceleration():
    window = np.array([[0.0], [1.0], [2.0]])
    assert np.array_equal(finite_diff_accel(window, dt=1.0), np.zeros(1))


def test_quadratic_window_acceleration_value():
    window = np.array([[0.0], [1.0], [4.0]])
    assert finite_diff_accel(window, dt=1.0) == pytest.approx([2.0])


def test_acceleration_scales_with_inverse_dt_squared():
    rng = np.random.default_rng(3)
    window = rng.normal(size=(3, 2))
    a1 = finite_diff_accel(window, dt=0.5)
    a2 = finite_diff_accel(window, dt=1.0)
    assert np.allclose(a1, 4.0 * a2)


def test_window_shape_is_validated():
    with pytest.raises(ValueError):
        finite_diff_accel(np.zeros((2, 3)), dt=0.1)
    with pytest.raises(ValueError):
        finite_diff_accel(np.zeros(3), dt=0.1)
    with pytest.raises(ValueError):
        finite_diff_accel(np.zeros((3, 2)), dt=0.0)
    with pytest.raises(ValueError):
        finite_diff_accel(np.zeros((3, 2)), dt=-1.0)


def test_zero_acceleration_window_has_zero_residual():
    window = np.array([[0.2, -1.0], [0.5, -0.5], [0.8, 0.0]])
    r = dynamics_feature(window, dt=0.25, sigma=0.3)
    assert np.allclose(r, 0.0)


def test_unit_step_residual_and_transition_cost():
    # One unit of displacement in the last step at dt = sigma = 1.
    window = np.array([[0.0], [0.0], [1.0]])
    r = dynamics_feature(window, dt=1.0, sigma=1.0)
    assert r == pytest.approx([1.0])
    assert 0.5 * float(r @ r) == pytest.approx(0.5)


def test_doubling_sigma_halves_the_residual():
    rng = np.random.default_rng(11)
    for _ in range(20):
        window = rng.normal(size=(3, 3))
        r1 = dynamics_feature(window, dt=0.2, sigma=0.1)
        r2 = dynamics_feature(window, dt=0.2, sigma=0.2)
        assert np.allclose(r1, 2.0 * r2)


def test_dynamics_feature_coordinate_selection():
    window = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0]])
    r = dynamics_feature(window, dt=1.0, sigma=1.0, coords=[1])
    assert r == pytest.approx([2.0])


def test_dynamics_feature_rejects_bad_sigma():
    with pytest.raises(ValueError):
        dynamics_feature(np.zeros((3, 1)), dt=1.0, sigma=0.0)


def test_acceleration_penalty_matches_dynamics_feature():
    rng = np.random.default_rng(7)
    feat = AccelerationPenalty(3, dt=0.2, sigma=0.4)
    for _ in range(10):
        window = rng.normal(size=(3, 3))
        r, _ = feat.eval(window)
        assert np.allclose(r, dynamics_feature(window, dt=0.2, sigma=0.4))


def test_acceleration_penalty_jacobian_is_exact():
    rng = np.random.default_rng(19)
    for coords in (None, [0], [2, 0]):
        feat = AccelerationPenalty(3, dt=0.1, sigma=0.5, coords=coords)
        window = rng.normal(size=(3, 3))
        assert check_jacobian(feat, window) < 1e-6


def test_drift_penalty_residual_and_jacobian():
    feat = DriftPenalty(2, dt=0.25, sigma=0.5, coords=[1])
    window = np.array([[0.0, 1.0], [3.0, 2.0]])
    r, _ = feat.eval(window)
    assert r == pytest.approx([1.0 / (0.5 * 0.5)])
    rng = np.random.default_rng(23)
    assert check_jacobian(feat, rng.normal(size=(2, 2))) < 1e-6


def test_affine_feature_shapes_are_validated():
    with pytest.raises(ValueError):
        AffineFeature(np.zeros((2, 4)), np.zeros(3), window=2)
    with pytest.raises(ValueError):
        AffineFeature(np.zeros(4), np.zeros(1), window=1)


def test_coordinate_target_residual_vanishes_at_target():
    feat = coordinate_target(3, coords=[0, 2], values=[1.0, -2.0], weight=9.0)
    r, jac = feat.eval(np.array([[1.0, 5.0, -2.0]]))
    assert np.allclose(r, 0.0)
    # sqrt(weight) enters both the residual slope and the Jacobian.
    r2, _ = feat.eval(np.array([[2.0, 5.0, -2.0]]))
    assert r2 == pytest.approx([3.0, 0.0])
    assert jac[0, 0] == pytest.approx(3.0)
    rng = np.random.default_rng(29)
    assert check_jacobian(feat, rng.normal(size=(1, 3))) < 1e-6


def test_effort_and_task_groups_are_tagged():
    assert AccelerationPenalty(1, dt=1.0, sigma=1.0).group == "effort"
    assert DriftPenalty(1, dt=1.0, sigma=1.0).group == "effort"
    assert coordinate_target(1, [0], [0.0]).group == "task"
