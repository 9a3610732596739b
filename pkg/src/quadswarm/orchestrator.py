"""Scenario runner: agents, fixed-rate lockstep loop, geofence and logs.

One tick advances the whole swarm by one physics step in agent-id order:
guidance (at its rate) -> control (at its rate) -> physics -> geofence ->
log. Simulated time is purely virtual; an optional wall-clock throttle in
the gateway only sleeps and never changes results, so two runs with the
same seed produce byte-identical logs.

Operator interaction goes through ``submit``: callables are queued and
applied at the next tick boundary, which keeps every mutation on the
simulation thread.
"""

from __future__ import annotations

import csv
import json
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import kernels, wire
from .dynamics import QuadState
from .formation import NeighborState
from .netsim import Network
from .planning import PolynomialSpline, interpolate_waypoints
from .scenario import ScenarioConfig
from .tasking import greedy_allocate_distributed, route_to_waypoints, solve_exact

FLYING = "flying"
SHUTDOWN = "shutdown"

LOG_COLUMNS = [
    "time", "agent", "px", "py", "pz", "vx", "vy", "vz",
    "roll", "pitch", "yaw", "thrust", "wx", "wy", "wz",
    "refx", "refy", "refz", "status",
]


class OrchestratorError(Exception):
    pass


def _hold_setpoint(position, yaw: float) -> np.ndarray:
    sp = np.zeros(12)
    sp[0] = 1.0
    sp[1:4] = position
    sp[10] = yaw
    return sp


def _accel_setpoint(accel) -> np.ndarray:
    sp = np.zeros(12)
    sp[7:10] = accel
    return sp


def _spline_setpoint(spline: PolynomialSpline, t: float) -> np.ndarray:
    pos, vel, acc, yaw, yaw_rate, _ = spline.sample_state(t)
    sp = np.empty(12)
    sp[0] = 1.0
    sp[1:4] = pos
    sp[4:7] = vel
    sp[7:10] = acc
    sp[10] = yaw
    sp[11] = yaw_rate
    return sp


@dataclass
class AgentRuntime:
    agent_id: int
    plant: str
    state: np.ndarray
    setpoint: np.ndarray
    command: np.ndarray = field(default_factory=lambda: np.zeros(4))
    di_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    guidance_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    status: str = FLYING
    landed: bool = False
    operator_spline: Optional[PolynomialSpline] = None
    operator_mode: Optional[str] = None
    neighbor_cache: Dict[int, tuple] = field(default_factory=dict)

    @property
    def position(self) -> np.ndarray:
        return self.state[0:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[3:6]

    @property
    def yaw(self) -> float:
        return float(self.state[8])

    def quad_state(self) -> QuadState:
        return QuadState.from_vector(self.state.copy())


class _IdleGuidance:
    """Hold every agent at its initial pose."""

    def __init__(self, host: "SimulationHost"):
        for agent, init in zip(host.agents, host.config.agents):
            agent.setpoint = _hold_setpoint(init.position, init.yaw)
            agent.guidance_ref = init.position.copy()

    def update(self, host: "SimulationHost", t: float, round_no: int) -> None:
        pass


class _FormationGuidance:
    """Bearing law over the fabric: exchange (p, v), steer followers."""

    def __init__(self, host: "SimulationHost"):
        settings = host.config.formation
        self.spec = settings.spec
        self.kp = settings.kp
        self.kv = settings.kv
        self.stale_after = settings.stale_after
        # per-agent stacked bearings for a vectorized control evaluation
        self.nbrs: Dict[int, List[int]] = {}
        self.gmat: Dict[int, np.ndarray] = {}
        for agent in host.agents:
            i = agent.agent_id
            nbrs = self.spec.in_neighbors(i)
            self.nbrs[i] = nbrs
            if nbrs:
                self.gmat[i] = np.stack([self.spec.bearings[(i, j)] for j in nbrs])
        for agent, init in zip(host.agents, host.config.agents):
            if agent.agent_id in self.spec.leaders:
                agent.setpoint = _hold_setpoint(init.position, init.yaw)
            else:
                agent.setpoint = _accel_setpoint(np.zeros(3))

    def update(self, host: "SimulationHost", t: float, round_no: int) -> None:
        net = host.net
        for agent in host.agents:
            payload = wire.serialize(agent.state[0:6].copy())
            net.exchange_send(agent.agent_id, payload, round_no)
        for agent in host.agents:
            i = agent.agent_id
            got = net.exchange_collect(i, round_no)
            for j, payload in got.items():
                vec = wire.deserialize(payload)
                agent.neighbor_cache[j] = (vec, t)
            u = self._control(agent, t)
            agent.guidance_ref = u
            if i in self.spec.leaders:
                continue  # leaders keep their hold setpoint (zero input)
            if agent.plant == "double_integrator":
                agent.di_accel = u
            else:
                agent.setpoint = _accel_setpoint(u)

    def _control(self, agent: AgentRuntime, t: float) -> np.ndarray:
        i = agent.agent_id
        if i in self.spec.leaders or not self.nbrs[i]:
            return np.zeros(3)
        rows = []
        gs = []
        for idx, j in enumerate(self.nbrs[i]):
            cached = agent.neighbor_cache.get(j)
            if cached is None or t - cached[1] > self.stale_after:
                continue  # lost and too stale: skip this neighbor
            rows.append(cached[0])
            gs.append(self.gmat[i][idx])
        if not rows:
            return np.zeros(3)
        data = np.stack(rows)
        g = np.stack(gs)
        err = self.kp * (agent.state[0:3] - data[:, 0:3]) + self.kv * (
            agent.state[3:6] - data[:, 3:6]
        )
        dots = np.einsum("ij,ij->i", g, err)
        return -(err.sum(axis=0) - g.T @ dots)


class _TrajectoryGuidance:
    """Each listed agent tracks its configured spline; others hold."""

    def __init__(self, host: "SimulationHost"):
        self.splines: Dict[int, PolynomialSpline] = {}
        for agent_id, waypoints in host.config.trajectory.waypoints.items():
            self.splines[agent_id] = interpolate_waypoints(waypoints)
        for agent, init in zip(host.agents, host.config.agents):
            if agent.agent_id not in self.splines:
                agent.setpoint = _hold_setpoint(init.position, init.yaw)

    def update(self, host: "SimulationHost", t: float, round_no: int) -> None:
        for agent in host.agents:
            spline = self.splines.get(agent.agent_id)
            if spline is None:
                continue
            agent.setpoint = _spline_setpoint(spline, t)
            agent.guidance_ref = agent.setpoint[1:4].copy()


class _PdvrpGuidance:
    """Solve the routing instance up front, then fly the routes as splines."""

    def __init__(self, host: "SimulationHost"):
        settings = host.config.pdvrp
        if settings.solver == "exact":
            self.plan = solve_exact(settings.instance)
        else:
            self.plan = greedy_allocate_distributed(host.net, settings.instance)
        self.splines: Dict[int, PolynomialSpline] = {}
        for agent, init in zip(host.agents, host.config.agents):
            stops = self.plan.routes[agent.agent_id]
            if stops:
                waypoints = route_to_waypoints(
                    init.position, stops, settings.cruise_altitude,
                    settings.seconds_per_meter,
                )
                self.splines[agent.agent_id] = interpolate_waypoints(waypoints)
            else:
                agent.setpoint = _hold_setpoint(init.position, init.yaw)

    def update(self, host: "SimulationHost", t: float, round_no: int) -> None:
        for agent in host.agents:
            spline = self.splines.get(agent.agent_id)
            if spline is None:
                continue
            agent.setpoint = _spline_setpoint(spline, t)
            agent.guidance_ref = agent.setpoint[1:4].copy()


_GUIDANCE = {
    "idle": _IdleGuidance,
    "formation": _FormationGuidance,
    "trajectory": _TrajectoryGuidance,
    "pdvrp": _PdvrpGuidance,
}


@dataclass
class RunSummary:
    name: str
    ticks: int
    sim_time: float
    final_states: Dict[int, QuadState]
    statuses: Dict[int, str]
    metrics: Dict[str, float]
    log_path: Optional[str] = None
    config_digest: str = ""


class _FlightLog:
    def __init__(self, directory: Path, config: ScenarioConfig):
        directory.mkdir(parents=True, exist_ok=True)
        self.path = directory / "flight_log.csv"
        self._file = open(self.path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(LOG_COLUMNS)
        meta = {
            "scenario": config.name,
            "seed": config.seed,
            "schema_version": 1,
            "config_digest": config.digest(),
            "physics_hz": config.physics_hz,
            "kernel_backend": kernels.BACKEND,
        }
        (directory / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    def record(self, t: float, agent: AgentRuntime) -> None:
        s = agent.state
        c = agent.command
        r = agent.guidance_ref
        self._writer.writerow(
            [repr(float(t)), agent.agent_id]
            + [repr(float(v)) for v in (s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8])]
            + [repr(float(v)) for v in (c[0], c[1], c[2], c[3])]
            + [repr(float(v)) for v in (r[0], r[1], r[2])]
            + [agent.status]
        )

    def close(self) -> None:
        self._file.close()


class SimulationHost:
    """Owns the agents, the fabric and the lockstep loop for one scenario."""

    def __init__(self, config: ScenarioConfig, log_dir: Optional[str] = None,
                 start_paused: bool = False):
        self.config = config
        self.net = Network(config.topology, config.qos, config.seed)
        plant = "quadrotor"
        if config.formation is not None:
            plant = config.formation.plant
        self.agents: List[AgentRuntime] = []
        for init in config.agents:
            state = np.zeros(9)
            state[0:3] = init.position
            state[8] = init.yaw
            self.agents.append(
                AgentRuntime(
                    agent_id=init.agent_id,
                    plant=plant,
                    state=state,
                    setpoint=_hold_setpoint(init.position, init.yaw),
                )
            )
        self.tick_index = 0
        self.started = not start_paused
        self.guidance_enabled = not start_paused
        self.shutdown_events = 0
        self.ctrl_fallbacks = 0
        self._commands: deque = deque()
        self._cmd_lock = threading.Lock()
        self.frame_hook: Optional[Callable[[dict], None]] = None
        self.frame_divisor = max(1, round(config.physics_hz / config.gateway.frame_hz))
        self._log: Optional[_FlightLog] = None
        log_target = log_dir if log_dir is not None else config.log_dir
        if log_target is not None:
            self._log = _FlightLog(Path(log_target), config)
        self.guidance = _GUIDANCE[config.guidance_mode](self)

    # -- time ------------------------------------------------------------

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def t(self) -> float:
        return self.tick_index * self.dt

    # -- operator interface ----------------------------------------------

    def submit(self, action: Callable[["SimulationHost", float], object]) -> "CommandTicket":
        """Queue a callable for the next tick boundary; returns a ticket
        whose result is set once the action ran on the simulation thread."""
        ticket = CommandTicket()
        with self._cmd_lock:
            self._commands.append((action, ticket))
        return ticket

    def _drain_commands(self, t: float) -> None:
        while True:
            with self._cmd_lock:
                if not self._commands:
                    return
                action, ticket = self._commands.popleft()
            try:
                ticket._finish(action(self, t))
            except Exception as exc:  # surface to the waiting caller
                ticket._fail(exc)

    def agent(self, agent_id: int) -> AgentRuntime:
        if not (0 <= agent_id < len(self.agents)):
            raise OrchestratorError(f"unknown agent id {agent_id}")
        return self.agents[agent_id]

    # -- main loop ---------------------------------------------------------

    def step(self) -> None:
        """Advance one physics tick (guidance -> control -> physics ->
        geofence -> log)."""
        cfg = self.config
        k = self.tick_index
        t = k * self.dt
        self.net.advance_to(t)
        self._drain_commands(t)
        if self.guidance_enabled and k % cfg.guidance_divisor == 0:
            self.guidance.update(self, t, k // cfg.guidance_divisor)
        for agent in self.agents:
            if agent.operator_spline is not None:
                self._apply_operator_spline(agent, t)
        if k % cfg.control_divisor == 0:
            for agent in self.agents:
                self._control_step(agent)
        for agent in self.agents:
            self._physics_step(agent)
            if agent.status == FLYING and not cfg.geofence.contains(agent.position):
                agent.status = SHUTDOWN
                agent.command[:] = 0.0
                agent.di_accel[:] = 0.0
                agent.operator_spline = None
                self.shutdown_events += 1
        self.tick_index = k + 1
        if self._log is not None:
            t_next = self.tick_index * self.dt
            for agent in self.agents:
                self._log.record(t_next, agent)
        if self.frame_hook is not None and self.tick_index % self.frame_divisor == 0:
            self.frame_hook(self.build_frame())

    def _apply_operator_spline(self, agent: AgentRuntime, t: float) -> None:
        spline = agent.operator_spline
        agent.setpoint = _spline_setpoint(spline, t)
        agent.guidance_ref = agent.setpoint[1:4].copy()
        if agent.operator_mode == "land" and t > spline.end_time:
            # no contact model: a landed agent holds quietly at the pad
            agent.landed = True
            agent.operator_spline = None
            agent.operator_mode = None
            agent.setpoint = _hold_setpoint(agent.setpoint[1:4].copy(), agent.yaw)

    def _control_step(self, agent: AgentRuntime) -> None:
        if agent.status == SHUTDOWN:
            agent.command[:] = 0.0
            return
        if agent.plant == "double_integrator":
            if agent.operator_spline is not None or agent.setpoint[0] != 0.0:
                # full-state reference: PD feedback makes DI plants track it
                sp = agent.setpoint
                agent.di_accel = (
                    sp[7:10]
                    + self.config.gains.kp_pos * (sp[1:4] - agent.state[0:3])
                    + self.config.gains.kv_pos * (sp[4:7] - agent.state[3:6])
                )
            return
        status, cmd = kernels.hierarchical_ctrl(
            agent.state,
            agent.setpoint,
            self.config.gains.kp_pos,
            self.config.gains.kv_pos,
            self.config.gains.kr_att,
            self.config.quad.mass,
            self.config.quad.gravity,
            self.config.quad.max_thrust,
        )
        if status != kernels.CTRL_OK:
            # degenerate attitude request: hold the previous command
            self.ctrl_fallbacks += 1
            return
        agent.command = cmd

    def _physics_step(self, agent: AgentRuntime) -> None:
        dt = self.dt
        if agent.plant == "double_integrator":
            u = np.zeros(3) if agent.status == SHUTDOWN else agent.di_accel
            # exact double-integrator update under zero-order hold
            agent.state[0:3] += agent.state[3:6] * dt + 0.5 * u * dt * dt
            agent.state[3:6] += u * dt
            return
        agent.state = kernels.rk4_step(
            agent.state,
            agent.command,
            self.config.quad.mass,
            self.config.quad.gravity,
            self.config.quad.drag,
            dt,
        )
        if not np.all(np.isfinite(agent.state)):
            raise OrchestratorError(
                f"agent {agent.agent_id} state became non-finite at "
                f"t={self.t:.4f}: state={agent.state} command={agent.command}"
            )

    def run(self, until: Optional[float] = None) -> RunSummary:
        """Step until the requested sim time (default: scenario duration)."""
        horizon = self.config.duration if until is None else until
        n_ticks = round(horizon * self.config.physics_hz)
        while self.tick_index < n_ticks:
            self.step()
        return self.summary()

    def build_frame(self) -> dict:
        leaders = set()
        if self.config.formation is not None:
            leaders = self.config.formation.spec.leaders
        has_roles = self.config.guidance_mode == "formation"
        agents = []
        for agent in self.agents:
            role = "none"
            if has_roles:
                role = "leader" if agent.agent_id in leaders else "follower"
            agents.append(
                {
                    "id": agent.agent_id,
                    "position": [float(v) for v in agent.position],
                    "velocity": [float(v) for v in agent.velocity],
                    "yaw": agent.yaw,
                    "status": agent.status,
                    "role": role,
                }
            )
        return {
            "type": "state",
            "schema_version": 1,
            "sim_time": self.t,
            "agents": agents,
        }

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None

    def summary(self) -> RunSummary:
        metrics: Dict[str, float] = {
            "shutdown_events": float(self.shutdown_events),
            "ctrl_fallbacks": float(self.ctrl_fallbacks),
        }
        if self.config.formation is not None:
            from .formation import formation_error

            positions = [a.position.copy() for a in self.agents]
            metrics["formation_error"] = formation_error(positions, self.config.formation.spec)
        return RunSummary(
            name=self.config.name,
            ticks=self.tick_index,
            sim_time=self.t,
            final_states={a.agent_id: a.quad_state() for a in self.agents},
            statuses={a.agent_id: a.status for a in self.agents},
            metrics=metrics,
            log_path=str(self._log.path) if self._log is not None else None,
            config_digest=self.config.digest(),
        )


class CommandTicket:
    """Future-like handle for an operator action applied at a tick boundary."""

    def __init__(self):
        self._event = threading.Event()
        self._result = None
        self._error: Optional[Exception] = None

    def _finish(self, result) -> None:
        self._result = result
        self._event.set()

    def _fail(self, error: Exception) -> None:
        self._error = error
        self._event.set()

    @property
    def done(self) -> bool:
        return self._event.is_set()

    def result(self, timeout: Optional[float] = None):
        if not self._event.wait(timeout):
            raise TimeoutError("command not processed in time")
        if self._error is not None:
            raise self._error
        return self._result


def run_scenario(config: ScenarioConfig, until: Optional[float] = None,
                 log_dir: Optional[str] = None) -> RunSummary:
    """Load-and-go entry point used by the CLI and the acceptance suite."""
    host = SimulationHost(config, log_dir=log_dir)
    try:
        return host.run(until)
    finally:
        host.close()
