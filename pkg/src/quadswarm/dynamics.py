"""Rigid-body quadrotor model with rotor drag, stepped by classical RK4.

World frame convention: the translational dynamics are implemented exactly
as written, with the vertical unit axis z_W = (0, 0, 1) and gravity acting
along +z_W. Hover equilibrium is thrust = mass * gravity with the body
z-axis aligned to z_W; the rest of the stack (planning, geofence, guidance)
treats z as an ordinary coordinate, so no sign flip appears anywhere else.

Attitude is a (roll, pitch, yaw) Euler triple in yaw-pitch-roll order, and
the rate command integrates the Euler angles directly (kinematically exact
for this simplified model). Angles are kept wrapped to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

GRAVITY = 9.81

# Rotor drag magnitude is a placeholder: the diagonal coefficients below are
# the one place this constant lives; override per scenario when better data
# is available.
DEFAULT_DRAG = (9.2e-4, 9.2e-4, 1.0e-3)

DEFAULT_MASS = 0.027          # kg, stock nano-quadrotor
DEFAULT_MAX_THRUST = 0.59     # N, ~2.2x hover weight


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def wrap_angle(x: float) -> float:
    """Wrap an angle into (-pi, pi]; in-range values pass through untouched."""
    if x > math.pi or x <= -math.pi:
        y = math.fmod(math.pi - x, 2.0 * math.pi)
        if y < 0.0:
            y += 2.0 * math.pi
        return math.pi - y
    return x


@dataclass(frozen=True, eq=False)
class QuadState:
    """World-frame position/velocity plus Euler attitude of one quadrotor."""

    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "velocity", _vec3(self.velocity, "velocity"))
        att = _vec3(self.attitude, "attitude")
        att = np.array([wrap_angle(a) for a in att])
        object.__setattr__(self, "attitude", att)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude])

    @classmethod
    def from_vector(cls, vec) -> "QuadState":
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (9,):
            raise ValueError(f"state vector must have length 9, got {v.shape}")
        return cls(v[0:3], v[3:6], v[6:9])

    @classmethod
    def at_rest(cls, position, yaw: float = 0.0) -> "QuadState":
        return cls(position, np.zeros(3), np.array([0.0, 0.0, yaw]))


@dataclass(frozen=True)
class CommandFPQR:
    """Thrust (N) plus body angular-rate setpoint (rad/s)."""

    thrust: float
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not math.isfinite(self.thrust):
            raise ValueError("thrust must be finite")
        if self.thrust < 0.0:
            raise ValueError(f"thrust must be >= 0, got {self.thrust}")
        object.__setattr__(self, "rates", _vec3(self.rates, "rates"))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.thrust], self.rates])


@dataclass(frozen=True)
class QuadParams:
    """Physical parameters: mass, gravity, diagonal drag, thrust ceiling."""

    mass: float = DEFAULT_MASS
    gravity: float = GRAVITY
    drag: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_DRAG))
    max_thrust: float = DEFAULT_MAX_THRUST

    def __post_init__(self):
        if not (self.mass > 0.0):
            raise ValueError(f"mass must be > 0, got {self.mass}")
        if not (self.gravity > 0.0):
            raise ValueError(f"gravity must be > 0, got {self.gravity}")
        drag = _vec3(self.drag, "drag")
        if np.any(drag < 0.0):
            raise ValueError(f"drag coefficients must be >= 0, got {drag}")
        object.__setattr__(self, "drag", drag)
        if not (self.max_thrust > 0.0):
            raise ValueError(f"max_thrust must be > 0, got {self.max_thrust}")

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity


@dataclass(frozen=True, eq=False)
class StateDerivative:
    d_position: np.ndarray
    d_velocity: np.ndarray
    d_attitude: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_position", _vec3(self.d_position, "d_position"))
        object.__setattr__(self, "d_velocity", _vec3(self.d_velocity, "d_velocity"))
        object.__setattr__(self, "d_attitude", _vec3(self.d_attitude, "d_attitude"))


def euler_to_rotation(attitude) -> np.ndarray:
    """Rotation matrix for a (roll, pitch, yaw) triple; always in SO(3)."""
    att = _vec3(attitude, "attitude")
    return kernels.rot_from_euler(att)


def _clamped_cmd_vector(cmd: CommandFPQR, params: QuadParams) -> np.ndarray:
    # actuator saturation lives with the actuator: excess thrust is clamped
    vec = cmd.as_vector()
    if vec[0] > params.max_thrust:
        vec[0] = params.max_thrust
    return vec


def state_derivative(state: QuadState, cmd: CommandFPQR, params: QuadParams) -> StateDerivative:
    """Continuous-time derivative of the nine-component state."""
    d = kernels.state_derivative(
        state.as_vector(),
        _clamped_cmd_vector(cmd, params),
        params.mass,
        params.gravity,
        params.drag,
    )
    return StateDerivative(d[0:3], d[3:6], d[6:9])


def rk4_step(state: QuadState, cmd: CommandFPQR, params: QuadParams, dt: float) -> QuadState:
    """One fixed-step RK4 update with the command held over the step."""
    if not (dt > 0.0) or not math.isfinite(dt):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    nxt = kernels.rk4_step(
        state.as_vector(),
        _clamped_cmd_vector(cmd, params),
        params.mass,
        params.gravity,
        params.drag,
        dt,
    )
    return QuadState.from_vector(nxt)
