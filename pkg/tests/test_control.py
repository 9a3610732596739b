import math

import numpy as np
import pytest

from quadswarm import kernels
from quadswarm.control import (
    AttitudeSetpoint,
    ControlGains,
    DegenerateThrustError,
    DerivativeFilter,
    FlatSetpoint,
    SingularHeadingError,
    attitude_control_geometric,
    filtered_derivative,
    hierarchical_step,
    position_control_acceleration,
    position_control_fullstate,
)
from quadswarm.dynamics import CommandFPQR, QuadParams, QuadState, euler_to_rotation, rk4_step

M = 0.027
G = 9.81
PARAMS = QuadParams()
GAINS = ControlGains()


def rest(pos=(0, 0, 0)):
    return QuadState.at_rest(np.array(pos, dtype=float))


def accel_sp(a, yaw=0.0):
    return FlatSetpoint(np.array(a, dtype=float), yaw=yaw)


class TestPositionControlAcceleration:
    def test_hover(self):
        out = position_control_acceleration(rest(), accel_sp([0, 0, 0]), PARAMS)
        assert abs(out.thrust - 0.26487) < 1e-9
        assert np.allclose(out.rotation_des, np.eye(3), atol=1e-12)

    def test_free_fall_degenerate(self):
        with pytest.raises(DegenerateThrustError):
            position_control_acceleration(rest(), accel_sp([0, 0, G]), PARAMS)

    def test_lateral_acceleration_oracle(self):
        # f = g z - a_des evaluated directly
        out = position_control_acceleration(rest(), accel_sp([0.5, 0, 0]), PARAMS)
        assert abs(out.thrust - M * math.sqrt(G * G + 0.25)) < 1e-12
        b3 = out.rotation_des[:, 2]
        tilt = math.acos(np.clip(b3[2], -1, 1))
        assert abs(tilt - math.atan2(0.5, G)) < 1e-12
        f = np.array([-0.5, 0.0, G])
        assert np.allclose(b3, f / np.linalg.norm(f), atol=1e-12)

    def test_thrust_axis_identity(self):
        # thrust * b3 = m * f holds algebraically for random setpoints
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = rng.uniform(-3, 3, 3)
            f = np.array([-a[0], -a[1], G - a[2]])
            if np.linalg.norm(f) < 1e-3:
                continue
            out = position_control_acceleration(rest(), accel_sp(a, yaw=rng.uniform(-3, 3)), PARAMS)
            assert np.allclose(out.thrust * out.rotation_des[:, 2], M * f, atol=1e-12)
            r = out.rotation_des
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9

    def test_singular_heading(self):
        # desired z-axis parallel to the heading vector
        with pytest.raises(SingularHeadingError):
            position_control_acceleration(rest(), accel_sp([-G, 0, G]), PARAMS)


class TestPositionControlFullstate:
    def test_zero_error_matches_hover(self):
        sp = FlatSetpoint(np.zeros(3), np.zeros(3), np.zeros(3))
        out = position_control_fullstate(rest(), sp, GAINS, PARAMS)
        ref = position_control_acceleration(rest(), accel_sp([0, 0, 0]), PARAMS)
        assert abs(out.thrust - ref.thrust) < 1e-15
        assert np.allclose(out.rotation_des, ref.rotation_des)

    def test_pure_position_offset(self):
        gains = ControlGains(kp_pos=1.0, kv_pos=1e-9, kr_att=1.0)
        sp = FlatSetpoint(np.zeros(3), np.array([1.0, 0, 0]), np.zeros(3))
        out = position_control_fullstate(rest(), sp, gains, PARAMS)
        ref = position_control_acceleration(rest(), accel_sp([1.0, 0, 0]), PARAMS)
        assert abs(out.thrust - ref.thrust) < 1e-9

    def test_mixed_error_two_stage_oracle(self):
        state = QuadState(np.array([0.2, -0.1, 0.9]), np.array([0.05, 0.02, -0.01]), np.zeros(3))
        sp = FlatSetpoint(
            np.array([0.3, -0.2, 0.1]),
            np.array([0.0, 0.1, 1.0]),
            np.array([0.0, 0.0, 0.1]),
            yaw=0.2,
        )
        a_cmd = (
            sp.acceleration
            + GAINS.kp_pos * (sp.position - state.position)
            + GAINS.kv_pos * (sp.velocity - state.velocity)
        )
        expected = position_control_acceleration(state, FlatSetpoint(a_cmd, yaw=0.2), PARAMS)
        out = position_control_fullstate(state, sp, GAINS, PARAMS)
        assert abs(out.thrust - expected.thrust) < 1e-12
        assert np.allclose(out.rotation_des, expected.rotation_des, atol=1e-12)

    def test_requires_full_state(self):
        with pytest.raises(ValueError):
            position_control_fullstate(rest(), accel_sp([0, 0, 0]), GAINS, PARAMS)


class TestAttitudeControlGeometric:
    def test_zero_error(self):
        r = euler_to_rotation([0.2, -0.1, 0.4])
        cmd = attitude_control_geometric(r, AttitudeSetpoint(r, 0.3), GAINS)
        assert np.allclose(cmd.rates, 0.0, atol=1e-14)
        assert cmd.thrust == 0.3

    def test_small_yaw_error(self):
        delta = 1e-3
        r = euler_to_rotation([0, 0, delta])
        cmd = attitude_control_geometric(r, AttitudeSetpoint(np.eye(3), 0.2), GAINS)
        assert abs(cmd.rates[2] + GAINS.kr_att * delta) < GAINS.kr_att * delta**3 * 10 + 1e-12
        assert abs(cmd.rates[0]) < 1e-9
        assert abs(cmd.rates[1]) < 1e-9

    def test_roll_error_vee_oracle(self):
        r = euler_to_rotation([0.3, 0, 0])
        cmd = attitude_control_geometric(r, AttitudeSetpoint(np.eye(3), 0.2), GAINS)
        # direct matrix evaluation of the error map
        m = np.eye(3).T @ r
        e = 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
        assert np.allclose(cmd.rates, -GAINS.kr_att * e, atol=1e-14)
        assert abs(cmd.rates[0] + GAINS.kr_att * math.sin(0.3)) < 1e-12

    def test_left_equivariance(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            r = euler_to_rotation(rng.uniform(-1.5, 1.5, 3))
            rd = euler_to_rotation(rng.uniform(-1.5, 1.5, 3))
            q = euler_to_rotation(rng.uniform(-1.5, 1.5, 3))
            base = attitude_control_geometric(r, AttitudeSetpoint(rd, 0.1), GAINS)
            moved = attitude_control_geometric(q @ r, AttitudeSetpoint(q @ rd, 0.1), GAINS)
            assert np.allclose(base.rates, moved.rates, atol=1e-10)


class TestHierarchicalStep:
    def test_hover(self):
        cmd = hierarchical_step(rest(), FlatSetpoint.hold(np.zeros(3)), GAINS, PARAMS)
        assert abs(cmd.thrust - M * G) < 1e-12
        assert np.allclose(cmd.rates, 0.0, atol=1e-12)

    def test_matches_fused_kernel(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            state = QuadState(rng.normal(size=3), rng.normal(size=3) * 0.3,
                              rng.uniform(-0.5, 0.5, 3))
            sp = FlatSetpoint(
                rng.uniform(-2, 2, 3), rng.normal(size=3), rng.normal(size=3) * 0.2,
                yaw=rng.uniform(-1, 1),
            )
            cmd = hierarchical_step(state, sp, GAINS, PARAMS)
            status, fused = kernels.hierarchical_ctrl(
                state.as_vector(), sp.as_vector(),
                GAINS.kp_pos, GAINS.kv_pos, GAINS.kr_att,
                PARAMS.mass, PARAMS.gravity, PARAMS.max_thrust,
            )
            assert status == kernels.CTRL_OK
            assert abs(cmd.thrust - fused[0]) < 1e-12
            assert np.allclose(cmd.rates, fused[1:], atol=1e-12)

    def test_thrust_saturation(self):
        sp = accel_sp([0, 0, -100.0])  # huge climb request
        cmd = hierarchical_step(rest(), sp, GAINS, PARAMS)
        assert cmd.thrust == PARAMS.max_thrust

    def test_degenerate_propagates(self):
        with pytest.raises(DegenerateThrustError):
            hierarchical_step(rest(), accel_sp([0, 0, G]), GAINS, PARAMS)

    def test_closed_loop_step_response(self):
        # 0.1 m offset: settle under 1 cm within 5 s, never exceed 0.3 m
        state = rest()
        target = FlatSetpoint.hold(np.array([0.1, 0.0, 0.0]))
        cmd = CommandFPQR(M * G)
        worst = 0.0
        settled_at = None
        for k in range(500):
            cmd = hierarchical_step(state, target, GAINS, PARAMS)
            state = rk4_step(state, cmd, PARAMS, 0.01)
            err = np.linalg.norm(state.position - target.position)
            worst = max(worst, err)
            if settled_at is None and err < 0.01:
                settled_at = (k + 1) * 0.01
        assert worst <= 0.3
        assert settled_at is not None and settled_at <= 5.0
        assert np.linalg.norm(state.position - target.position) < 0.01


class TestFilteredDerivative:
    def test_constant_samples_decay(self):
        est = np.array([1.0, -2.0, 0.5])
        sample = np.array([3.0, 3.0, 3.0])
        for _ in range(50):
            est = filtered_derivative(est, sample, sample, 0.01, 0.5)
        assert np.max(np.abs(est)) < 1e-9

    def test_ramp_geometric_convergence(self):
        # p_k = k*dt with alpha = 0.5: estimate e_k = 1 - 0.5^k exactly
        dt, alpha = 0.01, 0.5
        est = np.zeros(3)
        for k in range(1, 30):
            prev = np.full(3, (k - 1) * dt)
            cur = np.full(3, k * dt)
            est = filtered_derivative(est, prev, cur, dt, alpha)
            assert np.allclose(est, 1.0 - 0.5**k, atol=1e-12)

    def test_alpha_zero_plain_difference(self):
        out = filtered_derivative(np.array([9.0, 9, 9]), np.zeros(3), np.array([1.0, 2, 3]), 0.5, 0.0)
        assert np.allclose(out, [2.0, 4.0, 6.0])

    def test_contraction_for_linear_signals(self):
        # error from the true slope shrinks by exactly alpha each step
        dt, alpha, slope = 0.02, 0.7, 2.5
        est = np.zeros(3)
        prev_err = abs(slope)
        for k in range(1, 40):
            est = filtered_derivative(est, np.full(3, (k - 1) * dt * slope),
                                      np.full(3, k * dt * slope), dt, alpha)
            err = abs(float(est[0]) - slope)
            assert err < prev_err or err < 1e-12
            prev_err = err

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            filtered_derivative(np.zeros(3), np.zeros(3), np.zeros(3), 0.0, 0.5)

    def test_filter_state_helper(self):
        f = DerivativeFilter(alpha=0.0)
        f.update([0.0, 0, 0], 0.1)
        est = f.update([1.0, 0, 0], 0.1)
        assert np.allclose(est, [10.0, 0, 0])


class TestFlatSetpoint:
    def test_position_velocity_together(self):
        with pytest.raises(ValueError):
            FlatSetpoint(np.zeros(3), position=np.zeros(3))

    def test_rotation_validation(self):
        with pytest.raises(ValueError):
            AttitudeSetpoint(np.eye(3) * 1.001, 0.1)
        with pytest.raises(ValueError):
            AttitudeSetpoint(np.eye(3), -0.1)
