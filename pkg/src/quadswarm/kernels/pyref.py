"""Pure-Python reference kernels.

These are the fallback implementations of the hot numeric kernels; the
compiled extension (``_core``) mirrors them operation for operation so both
backends produce the same trajectories. Scalar math is written out
explicitly (no BLAS calls) to keep the floating-point evaluation order
identical across backends.

State layout (length 9):   [px py pz vx vy vz roll pitch yaw]
Command layout (length 4): [thrust wx wy wz]
Setpoint layout (length 12):
    [mode px py pz vx vy vz ax ay az yaw yaw_rate], mode 0 = acceleration
    reference only, mode 1 = full state (PD feedback on position/velocity).
"""

import math

import numpy as np

BACKEND_NAME = "python"

# hierarchical_ctrl status codes
CTRL_OK = 0
CTRL_DEGENERATE_THRUST = 1
CTRL_SINGULAR_HEADING = 2

_TWO_PI = 2.0 * math.pi


def _wrap_angle(x: float) -> float:
    # maps into (-pi, pi]; leaves already-wrapped values bit-identical
    if x > math.pi or x <= -math.pi:
        y = math.fmod(math.pi - x, _TWO_PI)
        if y < 0.0:
            y += _TWO_PI
        return math.pi - y
    return x


def _rot_entries(roll: float, pitch: float, yaw: float):
    """Row-major entries of R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr = math.cos(roll)
    sr = math.sin(roll)
    cp = math.cos(pitch)
    sp = math.sin(pitch)
    cy = math.cos(yaw)
    sy = math.sin(yaw)
    return (
        cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
        sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
        -sp, cp * sr, cp * cr,
    )


def rot_from_euler(attitude) -> np.ndarray:
    """3x3 rotation matrix from (roll, pitch, yaw), yaw-pitch-roll order."""
    e = _rot_entries(float(attitude[0]), float(attitude[1]), float(attitude[2]))
    return np.array(e, dtype=np.float64).reshape(3, 3)


def _deriv(s, thrust, wx, wy, wz, mass, gravity, dx, dy, dz):
    """Time derivative of the 9-state; returns a tuple."""
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = _rot_entries(s[6], s[7], s[8])
    vx, vy, vz = s[3], s[4], s[5]
    # body-frame velocity b = R^T v, drag force R A b back in world frame
    bx = r00 * vx + r10 * vy + r20 * vz
    by = r01 * vx + r11 * vy + r21 * vz
    bz = r02 * vx + r12 * vy + r22 * vz
    fdx = r00 * dx * bx + r01 * dy * by + r02 * dz * bz
    fdy = r10 * dx * bx + r11 * dy * by + r12 * dz * bz
    fdz = r20 * dx * bx + r21 * dy * by + r22 * dz * bz
    tm = thrust / mass
    return (
        vx, vy, vz,
        -tm * r02 - fdx / mass,
        -tm * r12 - fdy / mass,
        gravity - tm * r22 - fdz / mass,
        wx, wy, wz,
    )


def state_derivative(state, cmd, mass, gravity, drag) -> np.ndarray:
    s = tuple(float(state[i]) for i in range(9))
    d = _deriv(
        s,
        float(cmd[0]), float(cmd[1]), float(cmd[2]), float(cmd[3]),
        mass, gravity,
        float(drag[0]), float(drag[1]), float(drag[2]),
    )
    return np.array(d, dtype=np.float64)


def rk4_step(state, cmd, mass, gravity, drag, dt) -> np.ndarray:
    """Classical RK4 update with the command held constant over the step."""
    s = tuple(float(state[i]) for i in range(9))
    thrust = float(cmd[0])
    wx, wy, wz = float(cmd[1]), float(cmd[2]), float(cmd[3])
    dx, dy, dz = float(drag[0]), float(drag[1]), float(drag[2])

    k1 = _deriv(s, thrust, wx, wy, wz, mass, gravity, dx, dy, dz)
    h2 = 0.5 * dt
    s2 = tuple(s[i] + h2 * k1[i] for i in range(9))
    k2 = _deriv(s2, thrust, wx, wy, wz, mass, gravity, dx, dy, dz)
    s3 = tuple(s[i] + h2 * k2[i] for i in range(9))
    k3 = _deriv(s3, thrust, wx, wy, wz, mass, gravity, dx, dy, dz)
    s4 = tuple(s[i] + dt * k3[i] for i in range(9))
    k4 = _deriv(s4, thrust, wx, wy, wz, mass, gravity, dx, dy, dz)

    sixth = dt / 6.0
    out = np.empty(9, dtype=np.float64)
    for i in range(9):
        out[i] = s[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
    out[6] = _wrap_angle(out[6])
    out[7] = _wrap_angle(out[7])
    out[8] = _wrap_angle(out[8])
    return out


def hierarchical_ctrl(state, setpoint, kp, kv, kr, mass, gravity, max_thrust):
    """Position stage + geometric attitude stage fused into one call.

    Returns (status, command array). On a nonzero status the command is a
    zero-thrust, zero-rate placeholder and must not be used.
    """
    cmd = np.zeros(4, dtype=np.float64)

    ax = float(setpoint[7])
    ay = float(setpoint[8])
    az = float(setpoint[9])
    if float(setpoint[0]) != 0.0:
        ax += kp * (float(setpoint[1]) - float(state[0])) + kv * (float(setpoint[4]) - float(state[3]))
        ay += kp * (float(setpoint[2]) - float(state[1])) + kv * (float(setpoint[5]) - float(state[4]))
        az += kp * (float(setpoint[3]) - float(state[2])) + kv * (float(setpoint[6]) - float(state[5]))

    # desired specific force and body z-axis
    fx = -ax
    fy = -ay
    fz = gravity - az
    fn = math.sqrt(fx * fx + fy * fy + fz * fz)
    if fn < 1e-6:
        return CTRL_DEGENERATE_THRUST, cmd
    b3x, b3y, b3z = fx / fn, fy / fn, fz / fn

    yaw_ref = float(setpoint[10])
    hx = math.cos(yaw_ref)
    hy = math.sin(yaw_ref)
    # b2 = b3 x heading, b1 = b2 x b3
    b2x = -b3z * hy
    b2y = b3z * hx
    b2z = b3x * hy - b3y * hx
    b2n = math.sqrt(b2x * b2x + b2y * b2y + b2z * b2z)
    if b2n < 1e-6:
        return CTRL_SINGULAR_HEADING, cmd
    b2x /= b2n
    b2y /= b2n
    b2z /= b2n
    b1x = b2y * b3z - b2z * b3y
    b1y = b2z * b3x - b2x * b3z
    b1z = b2x * b3y - b2y * b3x

    thrust = mass * fn
    if thrust > max_thrust:
        thrust = max_thrust

    # attitude error e = 0.5 * vee(Rd^T R - R^T Rd), M = Rd^T R
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = _rot_entries(
        float(state[6]), float(state[7]), float(state[8])
    )
    m00 = b1x * r00 + b1y * r10 + b1z * r20
    m01 = b1x * r01 + b1y * r11 + b1z * r21
    m02 = b1x * r02 + b1y * r12 + b1z * r22
    m10 = b2x * r00 + b2y * r10 + b2z * r20
    m11 = b2x * r01 + b2y * r11 + b2z * r21
    m12 = b2x * r02 + b2y * r12 + b2z * r22
    m20 = b3x * r00 + b3y * r10 + b3z * r20
    m21 = b3x * r01 + b3y * r11 + b3z * r21
    m22 = b3x * r02 + b3y * r12 + b3z * r22
    ex = 0.5 * (m21 - m12)
    ey = 0.5 * (m02 - m20)
    ez = 0.5 * (m10 - m01)

    cmd[0] = thrust
    cmd[1] = -kr * ex
    cmd[2] = -kr * ey
    cmd[3] = -kr * ez
    return CTRL_OK, cmd
