"""Flat-output trajectory generation.

Trajectories are piecewise quintic polynomials over four channels
(x, y, z, yaw). Knot positions are interpolated exactly; knot velocities
and accelerations are shared unknowns solved from jerk/snap continuity,
which makes every spline C2 (in fact C4) across knots. End velocities and
accelerations are clamped, to zero by default or to a supplied boundary
state when replanning mid-flight.

Sampling outside the time range holds the nearest endpoint with zero
derivatives, so a finished trajectory degrades to a hover setpoint.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .control import FlatSetpoint

MAX_POLYLINE_KNOTS = 25


class PlanningError(Exception):
    pass


@dataclass(frozen=True, eq=False)
class Waypoint:
    position: np.ndarray
    yaw: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ValueError("waypoint position must be a finite 3-vector")
        object.__setattr__(self, "position", pos)
        if not math.isfinite(self.yaw) or not math.isfinite(self.time):
            raise ValueError("waypoint yaw/time must be finite")


def _hermite_coeffs(p0, v0, a0, p1, v1, a1, h):
    """Monomial coefficients of the quintic matching (p, v, a) at both ends.

    Vectorized over the last axis (channels); local time runs over [0, h].
    """
    dp = p1 - p0
    h2 = h * h
    c3 = (20.0 * dp - (12.0 * v0 + 8.0 * v1) * h - (3.0 * a0 - a1) * h2) / (2.0 * h**3)
    c4 = (-30.0 * dp + (16.0 * v0 + 14.0 * v1) * h + (3.0 * a0 - 2.0 * a1) * h2) / (2.0 * h**4)
    c5 = (12.0 * dp - 6.0 * (v0 + v1) * h + (a1 - a0) * h2) / (2.0 * h**5)
    return np.stack([p0, v0, 0.5 * a0, c3, c4, c5])


def _solve_knot_derivatives(times, values, v_start, a_start, v_end, a_end):
    """Knot velocities/accelerations from jerk and snap continuity.

    ``values`` has shape (K, C). Returns (vel, acc) of the same shape.
    The 2K unknowns per channel are the knot derivatives; boundary rows pin
    the four end conditions and each interior knot contributes one jerk and
    one snap matching equation between its two adjacent quintics.
    """
    k = len(times)
    n = 2 * k
    a = np.zeros((n, n))
    b = np.zeros((n, values.shape[1]))
    a[0, 0] = 1.0
    b[0] = v_start
    a[1, 1] = 1.0
    b[1] = a_start
    a[2, n - 2] = 1.0
    b[2] = v_end
    a[3, n - 1] = 1.0
    b[3] = a_end
    row = 4
    for i in range(1, k - 1):
        g = times[i] - times[i - 1]
        h = times[i + 1] - times[i]
        pm, pk, pp = values[i - 1], values[i], values[i + 1]
        # jerk: d3 of the left quintic at g equals d3 of the right at 0
        a[row, 2 * i - 2] = -24.0 / g**2
        a[row, 2 * i - 1] = -3.0 / g
        a[row, 2 * i] = -36.0 / g**2 + 36.0 / h**2
        a[row, 2 * i + 1] = 9.0 / g + 9.0 / h
        a[row, 2 * i + 2] = 24.0 / h**2
        a[row, 2 * i + 3] = -3.0 / h
        b[row] = 60.0 * (pm - pk) / g**3 + 60.0 * (pp - pk) / h**3
        row += 1
        # snap: d4 continuity
        a[row, 2 * i - 2] = -168.0 / g**3
        a[row, 2 * i - 1] = -24.0 / g**2
        a[row, 2 * i] = -192.0 / g**3 - 192.0 / h**3
        a[row, 2 * i + 1] = 36.0 / g**2 - 36.0 / h**2
        a[row, 2 * i + 2] = -168.0 / h**3
        a[row, 2 * i + 3] = 24.0 / h**2
        b[row] = 360.0 * (pm - pk) / g**4 - 360.0 * (pp - pk) / h**4
        row += 1
    x = np.linalg.solve(a, b)
    return x[0::2], x[1::2]


class PolynomialSpline:
    """Immutable piecewise-quintic trajectory over (x, y, z, yaw).

    ``coeffs`` has shape (segments, 6, 4): monomial coefficients in local
    time for each channel. Built via the module-level constructors; not
    meant to be assembled by hand.
    """

    __slots__ = ("knot_times", "coeffs")

    def __init__(self, knot_times: np.ndarray, coeffs: np.ndarray):
        knot_times = np.asarray(knot_times, dtype=np.float64)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if knot_times.ndim != 1 or len(knot_times) < 2:
            raise PlanningError("spline needs at least two knots")
        if np.any(np.diff(knot_times) <= 0.0):
            raise PlanningError("knot times must be strictly increasing")
        if coeffs.shape != (len(knot_times) - 1, 6, 4):
            raise PlanningError(f"bad coefficient shape {coeffs.shape}")
        self.knot_times = knot_times
        self.coeffs = coeffs
        self.knot_times.setflags(write=False)
        self.coeffs.setflags(write=False)

    @property
    def start_time(self) -> float:
        return float(self.knot_times[0])

    @property
    def end_time(self) -> float:
        return float(self.knot_times[-1])

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def _eval_raw(self, t: float):
        """(value, d1, d2) over the four channels.

        Strictly outside the time range the nearest endpoint is held with
        zero derivatives; the boundary instants themselves evaluate the
        polynomial (so a replanned spline reports its true start state).
        """
        ts = self.knot_times
        if t < ts[0]:
            c = self.coeffs[0]
            return c[0].copy(), np.zeros(4), np.zeros(4)
        if t > ts[-1]:
            tau = ts[-1] - ts[-2]
            c = self.coeffs[-1]
            val = ((((c[5] * tau + c[4]) * tau + c[3]) * tau + c[2]) * tau + c[1]) * tau + c[0]
            return val, np.zeros(4), np.zeros(4)
        seg = min(bisect.bisect_right(ts, t) - 1, len(ts) - 2)
        tau = t - ts[seg]
        c = self.coeffs[seg]
        val = ((((c[5] * tau + c[4]) * tau + c[3]) * tau + c[2]) * tau + c[1]) * tau + c[0]
        d1 = (((5.0 * c[5] * tau + 4.0 * c[4]) * tau + 3.0 * c[3]) * tau + 2.0 * c[2]) * tau + c[1]
        d2 = ((20.0 * c[5] * tau + 12.0 * c[4]) * tau + 6.0 * c[3]) * tau + 2.0 * c[2]
        return val, d1, d2

    def sample_state(self, t: float):
        """(position, velocity, acceleration, yaw, yaw_rate, yaw_accel)."""
        val, d1, d2 = self._eval_raw(float(t))
        return val[:3], d1[:3], d2[:3], float(val[3]), float(d1[3]), float(d2[3])


def sample(spline: PolynomialSpline, t: float) -> FlatSetpoint:
    """Evaluate the spline as a full-state flat setpoint (clamped outside)."""
    pos, vel, acc, yaw, yaw_rate, _ = spline.sample_state(t)
    return FlatSetpoint(acc, pos, vel, yaw, yaw_rate)


def _fit(times, values, v_start=None, a_start=None):
    """Quintic spline through (times, values) with clamped boundaries.

    values: (K, 4). Start derivatives default to zero; end derivatives are
    always zero (come to rest).
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    v0 = np.zeros(4) if v_start is None else np.asarray(v_start, dtype=np.float64)
    a0 = np.zeros(4) if a_start is None else np.asarray(a_start, dtype=np.float64)
    vel, acc = _solve_knot_derivatives(times, values, v0, a0, np.zeros(4), np.zeros(4))
    segs = []
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        segs.append(
            _hermite_coeffs(values[i], vel[i], acc[i], values[i + 1], vel[i + 1], acc[i + 1], h)
        )
    return PolynomialSpline(times, np.stack(segs))


def point_to_point(start, goal, duration: float, yaw_start: float = 0.0,
                   yaw_goal: float | None = None, t0: float = 0.0) -> PolynomialSpline:
    """Single quintic from rest to rest between two points."""
    if not (duration > 0.0):
        raise PlanningError(f"duration must be > 0, got {duration}")
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if yaw_goal is None:
        yaw_goal = yaw_start
    values = np.array(
        [np.append(start, yaw_start), np.append(goal, yaw_goal)]
    )
    return _fit(np.array([t0, t0 + duration]), values)


def _waypoint_arrays(points):
    times = np.array([w.time for w in points], dtype=np.float64)
    if times[0] < 0.0:
        raise PlanningError(f"first waypoint time must be >= 0, got {times[0]}")
    if np.any(np.diff(times) <= 0.0):
        raise PlanningError("waypoint times must be strictly increasing")
    yaws = np.unwrap(np.array([w.yaw for w in points], dtype=np.float64))
    values = np.column_stack([np.array([w.position for w in points]), yaws])
    return times, values


def interpolate_waypoints(points) -> PolynomialSpline:
    """C2 spline through the waypoints, at rest at both ends."""
    points = list(points)
    if len(points) < 2:
        raise PlanningError(f"need at least 2 waypoints, got {len(points)}")
    times, values = _waypoint_arrays(points)
    return _fit(times, values)


def retime(spline: PolynomialSpline, factor: float) -> PolynomialSpline:
    """Scale the time axis about the start: duration multiplies by factor."""
    if not (factor > 0.0):
        raise PlanningError(f"retime factor must be > 0, got {factor}")
    t0 = spline.start_time
    new_times = t0 + factor * (spline.knot_times - t0)
    scale = factor ** np.arange(6.0)
    new_coeffs = spline.coeffs / scale[None, :, None]
    return PolynomialSpline(new_times, new_coeffs)


def replan(active: PolynomialSpline, t_switch: float, new_points) -> PolynomialSpline:
    """New spline taking over at t_switch with matching position/velocity/
    acceleration, passing through new_points and ending at rest."""
    if not (active.start_time <= t_switch <= active.end_time):
        raise PlanningError(
            f"t_switch {t_switch} outside the active range "
            f"[{active.start_time}, {active.end_time}]"
        )
    new_points = list(new_points)
    if not new_points:
        raise PlanningError("replan needs at least one new waypoint")
    times, values = _waypoint_arrays(new_points)
    if times[0] <= t_switch:
        raise PlanningError(
            f"new waypoint times must be > t_switch {t_switch}, first is {times[0]}"
        )
    pos, vel, acc, yaw, yaw_rate, yaw_acc = active.sample_state(t_switch)
    # keep the fitted yaw channel near the junction yaw to avoid +-pi jumps
    offsets = np.round((values[:, 3] - yaw) / (2.0 * math.pi))
    values = values.copy()
    values[:, 3] -= 2.0 * math.pi * offsets
    all_times = np.concatenate([[t_switch], times])
    all_values = np.vstack([np.append(pos, yaw), values])
    return _fit(
        all_times,
        all_values,
        v_start=np.append(vel, yaw_rate),
        a_start=np.append(acc, yaw_acc),
    )


def polyline_to_waypoints(points, total_time: float, altitude: float,
                          max_knots: int = MAX_POLYLINE_KNOTS):
    """Waypoints from a drawn polyline, times proportional to arc length.

    2D points are lifted to the given altitude. Dense polylines are
    resampled arc-length-uniformly down to max_knots knots; sparse ones
    keep their vertices.
    """
    pts = [np.asarray(p, dtype=np.float64) for p in points]
    if len(pts) < 2:
        raise PlanningError(f"polyline needs at least 2 points, got {len(pts)}")
    if not (total_time > 0.0):
        raise PlanningError(f"total_time must be > 0, got {total_time}")
    lifted = []
    for p in pts:
        if p.shape == (2,):
            lifted.append(np.array([p[0], p[1], altitude]))
        elif p.shape == (3,):
            lifted.append(p)
        else:
            raise PlanningError(f"polyline points must be 2D or 3D, got shape {p.shape}")
    # drop consecutive duplicates; they carry no path information
    dedup = [lifted[0]]
    for p in lifted[1:]:
        if np.linalg.norm(p - dedup[-1]) > 0.0:
            dedup.append(p)
    if len(dedup) == 1:
        p = dedup[0]
        return [Waypoint(p, 0.0, 0.0), Waypoint(p, 0.0, total_time)]
    xyz = np.array(dedup)
    seg_len = np.linalg.norm(np.diff(xyz, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total_len = cum[-1]
    if len(xyz) <= max_knots:
        knots = xyz
        arcs = cum
    else:
        arcs = np.linspace(0.0, total_len, max_knots)
        knots = np.column_stack(
            [np.interp(arcs, cum, xyz[:, i]) for i in range(3)]
        )
    times = total_time * arcs / total_len
    return [Waypoint(knots[i], 0.0, times[i]) for i in range(len(knots))]
