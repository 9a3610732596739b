"""Live operator API over WebSocket + JSON.

Serves state frames to any number of console clients and accepts operator
commands (hover, land, start, stop, hand-drawn trajectories). Commands are
validated and applied on the simulation thread at the next tick boundary;
slow consumers get latest-frame-wins delivery (frames are skipped, never
reordered). Message schemas live in ``schemas/`` and are the contract for
the browser console.
"""

from __future__ import annotations

import asyncio
import threading
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .orchestrator import FLYING, AgentRuntime, SimulationHost
from .planning import (
    PlanningError,
    Waypoint,
    interpolate_waypoints,
    point_to_point,
    polyline_to_waypoints,
    replan,
)

SCHEMA_VERSION = 1

COMMAND_KINDS = ("hover", "land", "start", "stop", "draw_trajectory")

# rejection reason codes (part of the wire contract)
R_UNKNOWN_AGENT = "unknown_agent"
R_AGENT_SHUTDOWN = "agent_shutdown"
R_NOT_STARTED = "not_started"
R_POLYLINE_TOO_SHORT = "polyline_too_short"
R_BAD_TOTAL_TIME = "bad_total_time"
R_NO_TARGETS = "no_targets"
R_BAD_KIND = "bad_kind"
R_BAD_PAYLOAD = "bad_payload"


class CommandRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class OperatorCommand:
    kind: str
    targets: Sequence[int]
    points: Optional[List[List[float]]] = None   # draw_trajectory polyline, world meters
    total_time: Optional[float] = None
    altitude: Optional[float] = None

    def __post_init__(self):
        if self.kind not in COMMAND_KINDS:
            raise CommandRejected(R_BAD_KIND, f"unknown command kind {self.kind!r}")
        if self.kind not in ("start", "stop") and not self.targets:
            raise CommandRejected(R_NO_TARGETS, "command needs at least one target agent")
        if self.kind == "draw_trajectory":
            if self.points is None or len(self.points) < 2:
                raise CommandRejected(
                    R_POLYLINE_TOO_SHORT,
                    f"polyline needs at least 2 points, got {0 if self.points is None else len(self.points)}",
                )
            if self.total_time is None or not (self.total_time > 0):
                raise CommandRejected(R_BAD_TOTAL_TIME, f"total_time must be > 0, got {self.total_time}")

    @classmethod
    def from_json(cls, data: dict) -> "OperatorCommand":
        if not isinstance(data, dict):
            raise CommandRejected(R_BAD_PAYLOAD, "command must be an object")
        kind = data.get("kind")
        targets = data.get("targets", [])
        if not isinstance(targets, list) or any(not isinstance(t, int) for t in targets):
            raise CommandRejected(R_BAD_PAYLOAD, "targets must be a list of agent ids")
        points = data.get("points")
        if points is not None:
            if not isinstance(points, list) or any(
                not isinstance(p, list) or len(p) != 2
                or any(not isinstance(v, (int, float)) for v in p)
                for p in points
            ):
                raise CommandRejected(R_BAD_PAYLOAD, "points must be [x, y] pairs in meters")
        total_time = data.get("total_time")
        altitude = data.get("altitude")
        return cls(kind, targets, points, total_time, altitude)


def _resolve_targets(host: SimulationHost, command: OperatorCommand) -> List[AgentRuntime]:
    agents = []
    for agent_id in command.targets:
        if not isinstance(agent_id, int) or not (0 <= agent_id < len(host.agents)):
            raise CommandRejected(R_UNKNOWN_AGENT, f"agent {agent_id} does not exist")
        agent = host.agents[agent_id]
        if agent.status != FLYING:
            raise CommandRejected(R_AGENT_SHUTDOWN, f"agent {agent_id} is shut down")
        agents.append(agent)
    return agents


def _transition_spline(agent: AgentRuntime, target, t: float, speed: float = 0.5):
    """Rest-to-rest move from the agent's current position, paced by distance."""
    start = agent.position.copy()
    distance = float(np.linalg.norm(np.asarray(target) - start))
    duration = max(1.0, distance / speed)
    return point_to_point(start, np.asarray(target), duration, yaw_start=agent.yaw, t0=t)


def _drawn_spline(host: SimulationHost, agent: AgentRuntime,
                  command: OperatorCommand, t: float):
    altitude = command.altitude
    if altitude is None:
        altitude = host.config.gateway.hover_altitude
    try:
        waypoints = polyline_to_waypoints(command.points, command.total_time, altitude)
    except PlanningError as exc:
        raise CommandRejected(R_BAD_PAYLOAD, str(exc)) from exc
    active = agent.operator_spline
    if active is not None and active.start_time <= t <= active.end_time:
        # already flying an operator spline: splice with full C2 continuity
        shifted = [Waypoint(w.position, w.yaw, w.time + t + host.dt) for w in waypoints]
        return replan(active, t, shifted)
    # holding or on guidance: ease in from the current pose (at rest), then
    # follow the drawn path
    entry = [Waypoint(w.position, agent.yaw, w.time + t + host.dt) for w in waypoints]
    first = entry[0]
    if np.linalg.norm(first.position - agent.position) > 1e-6:
        approach = _transition_spline(agent, first.position, t)
        offset = approach.end_time + host.dt - entry[0].time
        shifted = [Waypoint(w.position, w.yaw, w.time + offset) for w in entry]
        return replan(approach, approach.end_time, shifted)
    return interpolate_waypoints(entry)


def handle_command(host: SimulationHost, command: OperatorCommand, t: float) -> dict:
    """Apply one operator command; runs on the simulation thread.

    Returns the ack payload; raises CommandRejected for structured
    rejections.
    """
    if command.kind == "start":
        host.started = True
        host.guidance_enabled = True
        return {"type": "ack", "command": "start", "targets": [], "sim_time": t}
    if command.kind == "stop":
        host.guidance_enabled = False
        for agent in host.agents:
            if agent.status == FLYING and not agent.landed:
                agent.operator_spline = None
                agent.operator_mode = None
                agent.setpoint = np.zeros(12)
                agent.setpoint[0] = 1.0
                agent.setpoint[1:4] = agent.position
                agent.setpoint[10] = agent.yaw
        return {"type": "ack", "command": "stop", "targets": [], "sim_time": t}

    agents = _resolve_targets(host, command)
    if command.kind == "hover":
        for agent in agents:
            target = agent.position.copy()
            target[2] = host.config.gateway.hover_altitude
            agent.operator_spline = _transition_spline(agent, target, t)
            agent.operator_mode = "hover"
            agent.landed = False
        return {
            "type": "ack", "command": "hover",
            "targets": list(command.targets), "sim_time": t,
        }
    if command.kind == "land":
        for agent in agents:
            target = agent.position.copy()
            target[2] = host.config.gateway.land_altitude
            agent.operator_spline = _transition_spline(agent, target, t)
            agent.operator_mode = "land"
        return {
            "type": "ack", "command": "land",
            "targets": list(command.targets), "sim_time": t,
        }
    # draw_trajectory
    if not host.started:
        raise CommandRejected(R_NOT_STARTED, "start the experiment before drawing")
    durations = []
    splines = {}
    for agent in agents:
        spline = _drawn_spline(host, agent, command, t)
        splines[agent.agent_id] = spline
        durations.append(spline.end_time - t)
    for agent in agents:  # apply only after every target validated
        agent.operator_spline = splines[agent.agent_id]
        agent.operator_mode = "draw"
        agent.landed = False
    return {
        "type": "ack", "command": "draw_trajectory",
        "targets": list(command.targets), "sim_time": t,
        "duration": max(durations),
    }


def submit_command(host: SimulationHost, command: OperatorCommand):
    """Queue a command for the next tick; returns the host's ticket."""
    return host.submit(lambda h, t: handle_command(h, command, t))


def rejection_payload(exc: CommandRejected) -> dict:
    return {"type": "rejection", "reason": exc.reason, "detail": exc.detail}


@dataclass
class FrameBus:
    """Latest-wins frame slot shared between the sim thread and websockets."""

    _lock: threading.Lock = field(default_factory=threading.Lock)
    _frame: Optional[dict] = None
    _seq: int = 0

    def publish(self, frame: dict) -> None:
        with self._lock:
            self._frame = frame
            self._seq += 1

    def latest(self, after_seq: int):
        with self._lock:
            if self._frame is None or self._seq <= after_seq:
                return None, after_seq
            return self._frame, self._seq


class GatewayRunner:
    """Drives a SimulationHost on a background thread with a wall-clock
    throttle; the throttle only sleeps, it never changes results."""

    def __init__(self, host: SimulationHost, realtime: bool = True):
        self.host = host
        self.realtime = realtime
        self.bus = FrameBus()
        host.frame_hook = self.bus.publish
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, name="quadswarm-sim", daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        dt = self.host.dt
        n_ticks = round(self.host.config.duration * self.host.config.physics_hz)
        wall_start = time.monotonic()
        sim_start = self.host.t
        while not self._stop.is_set() and self.host.tick_index < n_ticks:
            self.host.step()
            if self.realtime:
                ahead = (self.host.t - sim_start) - (time.monotonic() - wall_start)
                if ahead > 0:
                    time.sleep(min(ahead, dt))

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        self.host.close()


def scenario_summary(host: SimulationHost) -> dict:
    cfg = host.config
    return {
        "type": "scenario",
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "n_agents": cfg.n_agents,
        "duration": cfg.duration,
        "physics_hz": cfg.physics_hz,
        "guidance_mode": cfg.guidance_mode,
        "geofence": {
            "min": [float(v) for v in cfg.geofence.low],
            "max": [float(v) for v in cfg.geofence.high],
        },
        "started": host.started,
    }


def build_app(runner: GatewayRunner) -> FastAPI:
    """FastAPI app bound to a running (or steppable) simulation."""
    app = FastAPI(title="quadswarm gateway")
    host = runner.host

    @app.get("/scenario")
    def get_scenario():
        return scenario_summary(host)

    @app.websocket("/ws")
    async def websocket_endpoint(ws: WebSocket):
        await ws.accept()
        await ws.send_json(scenario_summary(host))
        send_interval = 1.0 / host.config.gateway.frame_hz

        async def pump_frames():
            seen = 0
            while True:
                frame, seen = runner.bus.latest(seen)
                if frame is not None:
                    await ws.send_json(frame)
                await asyncio.sleep(send_interval / 4)

        pump = asyncio.create_task(pump_frames())
        try:
            while True:
                data = await ws.receive_json()
                try:
                    command = OperatorCommand.from_json(data)
                    ticket = submit_command(host, command)
                    reply = await asyncio.to_thread(ticket.result, 5.0)
                except CommandRejected as exc:
                    reply = rejection_payload(exc)
                reply = dict(reply)
                reply["schema_version"] = SCHEMA_VERSION
                await ws.send_json(reply)
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()

    return app


def serve(config, log_dir: Optional[str] = None, realtime: bool = True,
          start_paused: bool = True):
    """Blocking entry point: run the scenario with the gateway attached."""
    import uvicorn

    host = SimulationHost(config, log_dir=log_dir, start_paused=start_paused)
    runner = GatewayRunner(host, realtime=realtime)
    app = build_app(runner)
    runner.start()
    try:
        uvicorn.run(app, host="127.0.0.1", port=config.gateway.port, log_level="warning")
    finally:
        runner.stop()
