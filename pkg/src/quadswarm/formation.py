"""Bearing-based distributed formation control.

Followers steer so that the direction toward each neighbor matches a
prescribed unit bearing; leaders apply zero input and anchor the formation
in space. The per-agent law projects relative position/velocity errors
onto the orthogonal complement of each desired bearing:

    u_i = -sum_j P(g_ij) [kp (p_i - p_j) + kv (v_i - v_j)],  P(g) = I - g g^T

The output is an acceleration, directly usable by double-integrator plants
or fed to the quadrotor controller as an acceleration reference.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, FrozenSet, Mapping, Tuple

import numpy as np

from .netsim import AgentId

DEFAULT_KP = 1.2
DEFAULT_KV = 1.8


class FormationError(Exception):
    pass


class DegenerateBearingError(FormationError):
    """Bearing (or bearing source) vector too close to zero to normalize."""


class BearingSpecError(FormationError):
    """Neighbor data supplied for an edge the spec does not define."""


@dataclass(frozen=True, eq=False)
class NeighborState:
    """What one agent shares with its neighbors: position and velocity."""

    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        vel = np.asarray(self.velocity, dtype=np.float64)
        if pos.shape != (3,) or vel.shape != (3,):
            raise ValueError("position and velocity must be 3-vectors")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ValueError("neighbor state must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)


class BearingSpec:
    """Desired unit bearings per directed edge plus the leader set.

    ``bearings[(i, j)]`` is the desired direction from agent i toward
    agent j; its presence means j is an in-neighbor of i for the purpose
    of the control law.
    """

    def __init__(self, bearings: Mapping[Tuple[AgentId, AgentId], np.ndarray],
                 leaders: FrozenSet[AgentId] | set):
        checked = {}
        for (i, j), g in bearings.items():
            g = np.asarray(g, dtype=np.float64)
            if g.shape != (3,):
                raise ValueError(f"bearing ({i},{j}) must be a 3-vector")
            if abs(np.linalg.norm(g) - 1.0) > 1e-9:
                raise ValueError(f"bearing ({i},{j}) is not unit norm: |g|={np.linalg.norm(g)}")
            checked[(int(i), int(j))] = g
        self.bearings = checked
        self.leaders = frozenset(int(a) for a in leaders)

    @classmethod
    def from_targets(cls, targets: Mapping[AgentId, np.ndarray],
                     edges, leaders) -> "BearingSpec":
        """Derive bearings by normalizing target relative positions.

        ``edges`` lists (i, j) pairs meaning agent i observes agent j.
        """
        bearings = {}
        for i, j in edges:
            diff = np.asarray(targets[j], dtype=np.float64) - np.asarray(
                targets[i], dtype=np.float64
            )
            norm = np.linalg.norm(diff)
            if norm < 1e-9:
                raise DegenerateBearingError(
                    f"targets of agents {i} and {j} coincide; bearing undefined"
                )
            bearings[(i, j)] = diff / norm
        return cls(bearings, leaders)

    def in_neighbors(self, agent: AgentId):
        return sorted(j for (i, j) in self.bearings if i == agent)

    def agents(self):
        ids = set(self.leaders)
        for i, j in self.bearings:
            ids.add(i)
            ids.add(j)
        return sorted(ids)

    def check_against_graph(self, graph) -> None:
        """Every bearing edge (i observes j) needs the message edge j -> i."""
        for i, j in self.bearings:
            if not graph.has_edge(j, i):
                raise BearingSpecError(
                    f"bearing ({i},{j}) has no supporting communication edge {j} -> {i}"
                )


def projection_matrix(g) -> np.ndarray:
    """Orthogonal projector onto the complement of g: P = I - g g^T."""
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm < 1e-9:
        raise DegenerateBearingError(f"cannot project along a null bearing (|g|={norm})")
    g = g / norm
    return np.eye(3) - np.outer(g, g)


def bearing_control_input(self_state: NeighborState,
                          neighbors: Mapping[AgentId, NeighborState],
                          spec: BearingSpec, me: AgentId,
                          kp: float = DEFAULT_KP, kv: float = DEFAULT_KV) -> np.ndarray:
    """Acceleration command for one agent; zero for leaders.

    ``neighbors`` holds whatever states actually arrived this round;
    neighbors listed in the spec but missing here are skipped (lost
    messages), while states without a matching bearing are an error.
    """
    if me in spec.leaders:
        return np.zeros(3)
    u = np.zeros(3)
    for j, other in neighbors.items():
        g = spec.bearings.get((me, j))
        if g is None:
            raise BearingSpecError(f"agent {me} has no bearing for neighbor {j}")
        err = kp * (self_state.position - other.position) + kv * (
            self_state.velocity - other.velocity
        )
        u -= err - g * np.dot(g, err)  # P(g) @ err without forming P
    return u


def formation_error(positions, spec: BearingSpec) -> float:
    """Normalized bearing violation: sum of squared projected offsets over
    sum of squared edge lengths; zero exactly when all bearings match."""
    positions = [np.asarray(p, dtype=np.float64) for p in positions]
    num = 0.0
    den = 0.0
    for (i, j), g in spec.bearings.items():
        diff = positions[j] - positions[i]
        length = np.linalg.norm(diff)
        if length < 1e-12:
            warnings.warn(
                f"agents {i} and {j} coincide; edge excluded from formation error",
                stacklevel=2,
            )
            continue
        resid = diff - g * np.dot(g, diff)
        num += float(np.dot(resid, resid))
        den += float(length * length)
    if den == 0.0:
        return 0.0
    return num / den


def grid_formation_spec(rows: int, cols: int, spacing: float,
                        leaders) -> BearingSpec:
    """Bearing spec for an axis-aligned rows x cols grid in the xy-plane.

    Agent r*cols + c sits at (c*spacing, r*spacing, 0) in the target shape.
    Edges: 4-neighbor grid adjacency in both directions, plus an observing
    edge from every follower to every leader so the leaders anchor
    translation and scale.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ValueError(f"grid must contain at least 2 agents, got {rows}x{cols}")
    if not (spacing > 0.0):
        raise ValueError(f"spacing must be > 0, got {spacing}")
    leaders = frozenset(int(a) for a in leaders)
    n = rows * cols
    if not leaders:
        raise ValueError("leader set must be non-empty")
    for a in leaders:
        if not (0 <= a < n):
            raise ValueError(f"leader {a} outside the grid (n={n})")

    def pos(idx: int) -> np.ndarray:
        r, c = divmod(idx, cols)
        return np.array([c * spacing, r * spacing, 0.0])

    targets = {i: pos(i) for i in range(n)}
    edges = set()
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.add((i, i + 1))
                edges.add((i + 1, i))
            if r + 1 < rows:
                edges.add((i, i + cols))
                edges.add((i + cols, i))
    for i in range(n):
        if i not in leaders:
            for lead in leaders:
                edges.add((i, lead))
    return BearingSpec.from_targets(targets, sorted(edges), leaders)
