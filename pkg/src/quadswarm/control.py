"""Hierarchical off-board controller.

Two cascaded stages: a position stage turning desired accelerations (or
full position/velocity/acceleration references) into thrust plus a desired
attitude, and a geometric attitude stage turning attitude error into body
angular-rate commands. Also provides the filtered derivative used to
recover velocities from position-only measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import CommandFPQR, QuadParams, QuadState, euler_to_rotation

DEFAULT_KP_POS = 6.0
DEFAULT_KV_POS = 4.5
DEFAULT_KR_ATT = 15.0
DEFAULT_FILTER_ALPHA = 0.8


class ControlError(Exception):
    pass


class DegenerateThrustError(ControlError):
    """Requested acceleration leaves no thrust direction (free-fall request)."""


class SingularHeadingError(ControlError):
    """Desired body z-axis is parallel to the reference heading."""


@dataclass(frozen=True, eq=False)
class FlatSetpoint:
    """Flat-output reference: acceleration always, position/velocity optional.

    Position and velocity must be supplied together (full-state mode) or
    not at all (acceleration-only mode).
    """

    acceleration: np.ndarray
    position: Optional[np.ndarray] = None
    velocity: Optional[np.ndarray] = None
    yaw: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        acc = np.asarray(self.acceleration, dtype=np.float64)
        if acc.shape != (3,) or not np.all(np.isfinite(acc)):
            raise ValueError("acceleration must be a finite 3-vector")
        object.__setattr__(self, "acceleration", acc)
        if (self.position is None) != (self.velocity is None):
            raise ValueError("position and velocity must be present together or absent together")
        if self.position is not None:
            pos = np.asarray(self.position, dtype=np.float64)
            vel = np.asarray(self.velocity, dtype=np.float64)
            if pos.shape != (3,) or vel.shape != (3,):
                raise ValueError("position and velocity must be 3-vectors")
            object.__setattr__(self, "position", pos)
            object.__setattr__(self, "velocity", vel)

    @property
    def full_state(self) -> bool:
        return self.position is not None

    def as_vector(self) -> np.ndarray:
        """Kernel layout: [mode p3 v3 a3 yaw yaw_rate]."""
        out = np.zeros(12)
        if self.full_state:
            out[0] = 1.0
            out[1:4] = self.position
            out[4:7] = self.velocity
        out[7:10] = self.acceleration
        out[10] = self.yaw
        out[11] = self.yaw_rate
        return out

    @classmethod
    def hold(cls, position, yaw: float = 0.0) -> "FlatSetpoint":
        return cls(np.zeros(3), np.asarray(position, dtype=np.float64), np.zeros(3), yaw)


@dataclass(frozen=True, eq=False)
class AttitudeSetpoint:
    """Desired rotation plus collective thrust from the position stage."""

    rotation_des: np.ndarray
    thrust: float

    def __post_init__(self):
        rot = np.asarray(self.rotation_des, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError("rotation_des must be 3x3")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9:
            raise ValueError("rotation_des is not orthonormal within 1e-9")
        object.__setattr__(self, "rotation_des", rot)
        if not (self.thrust >= 0.0):
            raise ValueError(f"thrust must be >= 0, got {self.thrust}")


@dataclass(frozen=True)
class ControlGains:
    kp_pos: float = DEFAULT_KP_POS
    kv_pos: float = DEFAULT_KV_POS
    kr_att: float = DEFAULT_KR_ATT

    def __post_init__(self):
        for name in ("kp_pos", "kv_pos", "kr_att"):
            if not (getattr(self, name) > 0.0):
                raise ValueError(f"{name} must be > 0")


def _desired_rotation(b3: np.ndarray, yaw: float) -> np.ndarray:
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    b2 = np.cross(b3, heading)
    n = np.linalg.norm(b2)
    if n < 1e-6:
        raise SingularHeadingError(
            "desired z-axis is parallel to the reference heading; attitude undefined"
        )
    b2 = b2 / n
    b1 = np.cross(b2, b3)
    return np.column_stack([b1, b2, b3])


def position_control_acceleration(
    state: QuadState, setpoint: FlatSetpoint, params: QuadParams
) -> AttitudeSetpoint:
    """Map a desired acceleration to thrust plus desired attitude.

    The desired specific force is f = g*z_W - a_des, the thrust its norm
    scaled by mass, and the desired body z-axis its direction; yaw fixes
    the remaining rotation freedom.
    """
    a_des = setpoint.acceleration
    f = np.array([-a_des[0], -a_des[1], params.gravity - a_des[2]])
    fn = float(np.linalg.norm(f))
    if fn < 1e-6:
        raise DegenerateThrustError(
            "commanded acceleration cancels gravity; thrust direction undefined"
        )
    rotation = _desired_rotation(f / fn, setpoint.yaw)
    return AttitudeSetpoint(rotation, params.mass * fn)


def position_control_fullstate(
    state: QuadState, setpoint: FlatSetpoint, gains: ControlGains, params: QuadParams
) -> AttitudeSetpoint:
    """PD feedback on position/velocity folded into the acceleration stage."""
    if not setpoint.full_state:
        raise ValueError("full-state setpoint required (position and velocity)")
    a_cmd = (
        setpoint.acceleration
        + gains.kp_pos * (setpoint.position - state.position)
        + gains.kv_pos * (setpoint.velocity - state.velocity)
    )
    folded = FlatSetpoint(a_cmd, yaw=setpoint.yaw, yaw_rate=setpoint.yaw_rate)
    return position_control_acceleration(state, folded, params)


def attitude_control_geometric(
    rotation: np.ndarray, setpoint: AttitudeSetpoint, gains: ControlGains
) -> CommandFPQR:
    """Rotation-error rate law: rates = -kr * 0.5 * vee(Rd^T R - R^T Rd)."""
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape != (3, 3) or np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6:
        raise ValueError("rotation must be a 3x3 matrix in SO(3)")
    m = setpoint.rotation_des.T @ rot
    skew = m - m.T
    e_r = 0.5 * np.array([skew[2, 1], skew[0, 2], skew[1, 0]])
    return CommandFPQR(setpoint.thrust, -gains.kr_att * e_r)


def hierarchical_step(
    state: QuadState, setpoint: FlatSetpoint, gains: ControlGains, params: QuadParams
) -> CommandFPQR:
    """Position stage then attitude stage; thrust clamped to the actuator limit."""
    if setpoint.full_state:
        att_sp = position_control_fullstate(state, setpoint, gains, params)
    else:
        att_sp = position_control_acceleration(state, setpoint, params)
    if att_sp.thrust > params.max_thrust:
        att_sp = AttitudeSetpoint(att_sp.rotation_des, params.max_thrust)
    return attitude_control_geometric(euler_to_rotation(state.attitude), att_sp, gains)


def filtered_derivative(prev_estimate, prev_sample, new_sample, dt: float, alpha: float):
    """Low-pass filtered finite difference: alpha*prev + (1-alpha)*diff/dt."""
    if not (dt > 0.0):
        raise ValueError(f"dt must be > 0, got {dt}")
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    prev_estimate = np.asarray(prev_estimate, dtype=np.float64)
    prev_sample = np.asarray(prev_sample, dtype=np.float64)
    new_sample = np.asarray(new_sample, dtype=np.float64)
    return alpha * prev_estimate + (1.0 - alpha) * (new_sample - prev_sample) / dt


@dataclass
class DerivativeFilter:
    """Per-agent filter state for mocap-style velocity estimation."""

    alpha: float = DEFAULT_FILTER_ALPHA
    _estimate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _prev_sample: Optional[np.ndarray] = None

    def update(self, sample, dt: float) -> np.ndarray:
        sample = np.asarray(sample, dtype=np.float64)
        if self._prev_sample is not None:
            self._estimate = filtered_derivative(
                self._estimate, self._prev_sample, sample, dt, self.alpha
            )
        self._prev_sample = sample
        return self._estimate.copy()
