"""Compiled kernels; mirrors pyref.py operation for operation."""

from libc.math cimport sin, cos, sqrt, fmod, M_PI

import numpy as np

BACKEND_NAME = "compiled"

CTRL_OK = 0
CTRL_DEGENERATE_THRUST = 1
CTRL_SINGULAR_HEADING = 2

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _wrap_angle(double x) noexcept nogil:
    cdef double y
    if x > M_PI or x <= -M_PI:
        y = fmod(M_PI - x, TWO_PI)
        if y < 0.0:
            y += TWO_PI
        return M_PI - y
    return x


cdef inline void _rot(double roll, double pitch, double yaw, double* r) noexcept nogil:
    cdef double cr = cos(roll)
    cdef double sr = sin(roll)
    cdef double cp = cos(pitch)
    cdef double sp = sin(pitch)
    cdef double cy = cos(yaw)
    cdef double sy = sin(yaw)
    r[0] = cy * cp
    r[1] = cy * sp * sr - sy * cr
    r[2] = cy * sp * cr + sy * sr
    r[3] = sy * cp
    r[4] = sy * sp * sr + cy * cr
    r[5] = sy * sp * cr - cy * sr
    r[6] = -sp
    r[7] = cp * sr
    r[8] = cp * cr


cdef inline void _deriv(const double* s, double thrust, double wx, double wy,
                        double wz, double mass, double gravity,
                        double dx, double dy, double dz, double* out) noexcept nogil:
    cdef double r[9]
    cdef double vx, vy, vz, bx, by, bz, fdx, fdy, fdz, tm
    _rot(s[6], s[7], s[8], r)
    vx = s[3]
    vy = s[4]
    vz = s[5]
    bx = r[0] * vx + r[3] * vy + r[6] * vz
    by = r[1] * vx + r[4] * vy + r[7] * vz
    bz = r[2] * vx + r[5] * vy + r[8] * vz
    fdx = r[0] * dx * bx + r[1] * dy * by + r[2] * dz * bz
    fdy = r[3] * dx * bx + r[4] * dy * by + r[5] * dz * bz
    fdz = r[6] * dx * bx + r[7] * dy * by + r[8] * dz * bz
    tm = thrust / mass
    out[0] = vx
    out[1] = vy
    out[2] = vz
    out[3] = -tm * r[2] - fdx / mass
    out[4] = -tm * r[5] - fdy / mass
    out[5] = gravity - tm * r[8] - fdz / mass
    out[6] = wx
    out[7] = wy
    out[8] = wz


def rot_from_euler(attitude):
    """3x3 rotation matrix from (roll, pitch, yaw), yaw-pitch-roll order."""
    cdef double r[9]
    cdef double[::1] att = np.ascontiguousarray(attitude, dtype=np.float64)
    _rot(att[0], att[1], att[2], r)
    out = np.empty((3, 3), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef int i, j
    for i in range(3):
        for j in range(3):
            o[i, j] = r[3 * i + j]
    return out


def state_derivative(state, cmd, double mass, double gravity, drag):
    cdef double[::1] s = np.ascontiguousarray(state, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(cmd, dtype=np.float64)
    cdef double[::1] d = np.ascontiguousarray(drag, dtype=np.float64)
    out = np.empty(9, dtype=np.float64)
    cdef double[::1] o = out
    _deriv(&s[0], c[0], c[1], c[2], c[3], mass, gravity, d[0], d[1], d[2], &o[0])
    return out


def rk4_step(state, cmd, double mass, double gravity, drag, double dt):
    """Classical RK4 update with the command held constant over the step."""
    cdef double[::1] s = np.ascontiguousarray(state, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(cmd, dtype=np.float64)
    cdef double[::1] d = np.ascontiguousarray(drag, dtype=np.float64)
    out = np.empty(9, dtype=np.float64)
    cdef double[::1] o = out
    cdef double k1[9]
    cdef double k2[9]
    cdef double k3[9]
    cdef double k4[9]
    cdef double tmp[9]
    cdef double h2 = 0.5 * dt
    cdef double sixth = dt / 6.0
    cdef double thrust = c[0]
    cdef double wx = c[1]
    cdef double wy = c[2]
    cdef double wz = c[3]
    cdef double dx = d[0]
    cdef double dy = d[1]
    cdef double dz = d[2]
    cdef int i

    _deriv(&s[0], thrust, wx, wy, wz, mass, gravity, dx, dy, dz, k1)
    for i in range(9):
        tmp[i] = s[i] + h2 * k1[i]
    _deriv(tmp, thrust, wx, wy, wz, mass, gravity, dx, dy, dz, k2)
    for i in range(9):
        tmp[i] = s[i] + h2 * k2[i]
    _deriv(tmp, thrust, wx, wy, wz, mass, gravity, dx, dy, dz, k3)
    for i in range(9):
        tmp[i] = s[i] + dt * k3[i]
    _deriv(tmp, thrust, wx, wy, wz, mass, gravity, dx, dy, dz, k4)

    for i in range(9):
        o[i] = s[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
    o[6] = _wrap_angle(o[6])
    o[7] = _wrap_angle(o[7])
    o[8] = _wrap_angle(o[8])
    return out


def hierarchical_ctrl(state, setpoint, double kp, double kv, double kr,
                      double mass, double gravity, double max_thrust):
    """Position stage + geometric attitude stage fused into one call."""
    cdef double[::1] s = np.ascontiguousarray(state, dtype=np.float64)
    cdef double[::1] sp = np.ascontiguousarray(setpoint, dtype=np.float64)
    cmd = np.zeros(4, dtype=np.float64)
    cdef double[::1] o = cmd

    cdef double ax = sp[7]
    cdef double ay = sp[8]
    cdef double az = sp[9]
    if sp[0] != 0.0:
        ax += kp * (sp[1] - s[0]) + kv * (sp[4] - s[3])
        ay += kp * (sp[2] - s[1]) + kv * (sp[5] - s[4])
        az += kp * (sp[3] - s[2]) + kv * (sp[6] - s[5])

    cdef double fx = -ax
    cdef double fy = -ay
    cdef double fz = gravity - az
    cdef double fn = sqrt(fx * fx + fy * fy + fz * fz)
    if fn < 1e-6:
        return CTRL_DEGENERATE_THRUST, cmd
    cdef double b3x = fx / fn
    cdef double b3y = fy / fn
    cdef double b3z = fz / fn

    cdef double hx = cos(sp[10])
    cdef double hy = sin(sp[10])
    cdef double b2x = -b3z * hy
    cdef double b2y = b3z * hx
    cdef double b2z = b3x * hy - b3y * hx
    cdef double b2n = sqrt(b2x * b2x + b2y * b2y + b2z * b2z)
    if b2n < 1e-6:
        return CTRL_SINGULAR_HEADING, cmd
    b2x /= b2n
    b2y /= b2n
    b2z /= b2n
    cdef double b1x = b2y * b3z - b2z * b3y
    cdef double b1y = b2z * b3x - b2x * b3z
    cdef double b1z = b2x * b3y - b2y * b3x

    cdef double thrust = mass * fn
    if thrust > max_thrust:
        thrust = max_thrust

    cdef double r[9]
    _rot(s[6], s[7], s[8], r)
    cdef double m01 = b1x * r[1] + b1y * r[4] + b1z * r[7]
    cdef double m02 = b1x * r[2] + b1y * r[5] + b1z * r[8]
    cdef double m10 = b2x * r[0] + b2y * r[3] + b2z * r[6]
    cdef double m12 = b2x * r[2] + b2y * r[5] + b2z * r[8]
    cdef double m20 = b3x * r[0] + b3y * r[3] + b3z * r[6]
    cdef double m21 = b3x * r[1] + b3y * r[4] + b3z * r[7]

    o[0] = thrust
    o[1] = -kr * (0.5 * (m21 - m12))
    o[2] = -kr * (0.5 * (m02 - m20))
    o[3] = -kr * (0.5 * (m10 - m01))
    return CTRL_OK, cmd
