"""Scenario configuration: schema, validation and (de)serialization.

Scenarios are single YAML documents with a ``schema_version`` field.
Validation reports the exact field path of the first problem so broken
configs are quick to fix. A validated config round-trips through
``to_dict`` unchanged.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from .control import DEFAULT_KP_POS, DEFAULT_KR_ATT, DEFAULT_KV_POS, ControlGains
from .dynamics import QuadParams
from .formation import DEFAULT_KP, DEFAULT_KV, BearingSpec, grid_formation_spec
from .netsim import QosProfile, TopologyGraph
from .planning import Waypoint
from .tasking import PdvrpInstance, Task, Vehicle

SCHEMA_VERSION = 1

GUIDANCE_MODES = ("idle", "formation", "pdvrp", "trajectory")
PLANTS = ("quadrotor", "double_integrator")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class _Ctx:
    """Tracks the field path while picking values out of nested dicts."""

    def __init__(self, data: dict, path: str = ""):
        if not isinstance(data, dict):
            raise ValidationError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path

    def _sub(self, key) -> str:
        return f"{self.path}.{key}" if self.path else str(key)

    def require(self, key):
        if key not in self.data:
            raise ValidationError(self._sub(key), "missing required field")
        return self.data[key]

    def child(self, key, required: bool = False) -> Optional["_Ctx"]:
        if key not in self.data:
            if required:
                raise ValidationError(self._sub(key), "missing required section")
            return None
        return _Ctx(self.require(key) if required else self.data[key], self._sub(key))

    def number(self, key, default=None, minimum=None, maximum=None,
               exclusive_min=None) -> float:
        if key not in self.data:
            if default is None:
                raise ValidationError(self._sub(key), "missing required field")
            return default
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(self._sub(key), f"expected a number, got {value!r}")
        value = float(value)
        if exclusive_min is not None and value <= exclusive_min:
            raise ValidationError(self._sub(key), f"must be > {exclusive_min}, got {value}")
        if minimum is not None and value < minimum:
            raise ValidationError(self._sub(key), f"must be >= {minimum}, got {value}")
        if maximum is not None and value > maximum:
            raise ValidationError(self._sub(key), f"must be <= {maximum}, got {value}")
        return value

    def integer(self, key, default=None, minimum=None) -> int:
        if key not in self.data:
            if default is None:
                raise ValidationError(self._sub(key), "missing required field")
            return default
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(self._sub(key), f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise ValidationError(self._sub(key), f"must be >= {minimum}, got {value}")
        return value

    def string(self, key, default=None, choices=None) -> str:
        if key not in self.data:
            if default is None:
                raise ValidationError(self._sub(key), "missing required field")
            return default
        value = self.data[key]
        if not isinstance(value, str):
            raise ValidationError(self._sub(key), f"expected a string, got {value!r}")
        if choices is not None and value not in choices:
            raise ValidationError(self._sub(key), f"must be one of {choices}, got {value!r}")
        return value

    def boolean(self, key, default: bool = False) -> bool:
        value = self.data.get(key, default)
        if not isinstance(value, bool):
            raise ValidationError(self._sub(key), f"expected a boolean, got {value!r}")
        return value

    def vec3(self, key, default=None) -> np.ndarray:
        if key not in self.data:
            if default is None:
                raise ValidationError(self._sub(key), "missing required field")
            return np.asarray(default, dtype=np.float64)
        value = self.data[key]
        if not isinstance(value, (list, tuple)) or len(value) != 3 or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            raise ValidationError(self._sub(key), f"expected a list of 3 numbers, got {value!r}")
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(self._sub(key), "components must be finite")
        return arr


@dataclass(frozen=True)
class Geofence:
    low: np.ndarray
    high: np.ndarray

    def contains(self, position) -> bool:
        # closed box: points exactly on a face are inside
        return bool(np.all(position >= self.low) and np.all(position <= self.high))


@dataclass(frozen=True)
class AgentInit:
    agent_id: int
    position: np.ndarray
    yaw: float = 0.0


@dataclass(frozen=True)
class FormationSettings:
    spec: BearingSpec
    kp: float
    kv: float
    plant: str
    stale_after: float = 0.1    # cached neighbor state reused up to this age


@dataclass(frozen=True)
class PdvrpSettings:
    instance: PdvrpInstance
    cruise_altitude: float
    seconds_per_meter: float
    solver: str                 # "exact" | "greedy"


@dataclass(frozen=True)
class TrajectorySettings:
    waypoints: Dict[int, Tuple[Waypoint, ...]]


@dataclass(frozen=True)
class GatewaySettings:
    enabled: bool = False
    port: int = 8750
    frame_hz: float = 20.0
    hover_altitude: float = 1.0
    land_altitude: float = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    duration: float
    physics_hz: float
    control_hz: float
    guidance_hz: float
    quad: QuadParams
    gains: ControlGains
    geofence: Geofence
    agents: Tuple[AgentInit, ...]
    topology: TopologyGraph
    qos: QosProfile
    guidance_mode: str
    formation: Optional[FormationSettings] = None
    pdvrp: Optional[PdvrpSettings] = None
    trajectory: Optional[TrajectorySettings] = None
    gateway: GatewaySettings = field(default_factory=GatewaySettings)
    log_dir: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def dt(self) -> float:
        return 1.0 / self.physics_hz

    @property
    def control_divisor(self) -> int:
        return round(self.physics_hz / self.control_hz)

    @property
    def guidance_divisor(self) -> int:
        return round(self.physics_hz / self.guidance_hz)

    def digest(self) -> str:
        canonical = yaml.safe_dump(self.raw, sort_keys=True).encode()
        return hashlib.sha256(canonical).hexdigest()

    def to_dict(self) -> dict:
        return dict(self.raw)


def _parse_rates(root: _Ctx) -> Tuple[float, float, float]:
    rates = root.child("rates")
    if rates is None:
        return 100.0, 100.0, 100.0
    physics = rates.number("physics_hz", default=100.0, exclusive_min=0.0)
    control = rates.number("control_hz", default=physics, exclusive_min=0.0)
    guidance = rates.number("guidance_hz", default=control, exclusive_min=0.0)
    if control > physics:
        raise ValidationError("rates.control_hz", f"must be <= physics_hz ({physics})")
    for key, value in (("control_hz", control), ("guidance_hz", guidance)):
        ratio = physics / value
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValidationError(
                f"rates.{key}", f"physics_hz ({physics}) must be an integer multiple of {value}"
            )
    return physics, control, guidance


def _parse_quad(root: _Ctx) -> QuadParams:
    quad = root.child("quad")
    if quad is None:
        return QuadParams()
    return QuadParams(
        mass=quad.number("mass", default=QuadParams().mass, exclusive_min=0.0),
        gravity=quad.number("gravity", default=QuadParams().gravity, exclusive_min=0.0),
        drag=quad.vec3("drag", default=QuadParams().drag),
        max_thrust=quad.number("max_thrust", default=QuadParams().max_thrust, exclusive_min=0.0),
    )


def _parse_gains(root: _Ctx) -> ControlGains:
    gains = root.child("gains")
    if gains is None:
        return ControlGains()
    return ControlGains(
        kp_pos=gains.number("kp_pos", default=DEFAULT_KP_POS, exclusive_min=0.0),
        kv_pos=gains.number("kv_pos", default=DEFAULT_KV_POS, exclusive_min=0.0),
        kr_att=gains.number("kr_att", default=DEFAULT_KR_ATT, exclusive_min=0.0),
    )


def _parse_geofence(root: _Ctx) -> Geofence:
    fence = root.child("geofence", required=True)
    low = fence.vec3("min")
    high = fence.vec3("max")
    for axis in range(3):
        if not (low[axis] < high[axis]):
            raise ValidationError(
                f"geofence.min[{axis}]", f"must be < geofence.max[{axis}] ({low[axis]} >= {high[axis]})"
            )
    return Geofence(low, high)


def _parse_agents(root: _Ctx, fence: Geofence) -> Tuple[AgentInit, ...]:
    raw = root.require("agents")
    if not isinstance(raw, list) or not raw:
        raise ValidationError("agents", "expected a non-empty list")
    agents = []
    seen = set()
    for idx, entry in enumerate(raw):
        ctx = _Ctx(entry, f"agents[{idx}]")
        agent_id = ctx.integer("id", default=idx, minimum=0)
        if agent_id in seen:
            raise ValidationError(f"agents[{idx}].id", f"duplicate agent id {agent_id}")
        seen.add(agent_id)
        position = ctx.vec3("position")
        if not fence.contains(position):
            raise ValidationError(
                f"agents[{idx}].position", f"agent {agent_id} starts outside the geofence"
            )
        agents.append(AgentInit(agent_id, position, ctx.number("yaw", default=0.0)))
    agents.sort(key=lambda a: a.agent_id)
    expected = list(range(len(agents)))
    actual = [a.agent_id for a in agents]
    if actual != expected:
        raise ValidationError("agents", f"ids must be exactly 0..{len(agents)-1}, got {actual}")
    return tuple(agents)


def _parse_edges(raw, path: str, n: int) -> List[Tuple[int, int]]:
    if not isinstance(raw, list):
        raise ValidationError(path, "expected a list of [src, dst] pairs")
    edges = []
    for idx, pair in enumerate(raw):
        if not isinstance(pair, list) or len(pair) != 2 or any(
            isinstance(v, bool) or not isinstance(v, int) for v in pair
        ):
            raise ValidationError(f"{path}[{idx}]", f"expected [src, dst] integers, got {pair!r}")
        src, dst = pair
        for value in (src, dst):
            if not (0 <= value < n):
                raise ValidationError(f"{path}[{idx}]", f"agent id {value} out of range 0..{n-1}")
        if src == dst:
            raise ValidationError(f"{path}[{idx}]", "self-loops are not allowed")
        edges.append((src, dst))
    return edges


def _parse_topology(root: _Ctx, n: int) -> TopologyGraph:
    topo = root.child("topology")
    if topo is None:
        return TopologyGraph.from_edges(n, [])
    if "schedule" in topo.data:
        raw_schedule = topo.data["schedule"]
        if not isinstance(raw_schedule, list) or not raw_schedule:
            raise ValidationError("topology.schedule", "expected a non-empty list")
        entries = []
        for idx, entry in enumerate(raw_schedule):
            ctx = _Ctx(entry, f"topology.schedule[{idx}]")
            start = ctx.number("start", default=0.0, minimum=0.0)
            edges = _parse_edges(ctx.require("edges"), f"topology.schedule[{idx}].edges", n)
            entries.append((start, TopologyGraph.from_edges(n, edges)))
        if [e[0] for e in entries] != sorted(e[0] for e in entries):
            raise ValidationError("topology.schedule", "entries must be sorted by start time")
        return TopologyGraph.time_varying(n, entries)
    edges = _parse_edges(topo.require("edges"), "topology.edges", n)
    return TopologyGraph.from_edges(n, edges)


def _parse_qos(root: _Ctx) -> QosProfile:
    qos = root.child("qos")
    if qos is None:
        return QosProfile()
    mode = qos.string("mode", default="reliable", choices=("reliable", "lossy"))
    drop = qos.number("drop_probability", default=0.0, minimum=0.0)
    if drop >= 1.0:
        raise ValidationError("qos.drop_probability", f"must be < 1, got {drop}")
    if mode == "reliable" and drop != 0.0:
        raise ValidationError("qos.drop_probability", "must be 0 in reliable mode")
    return QosProfile(mode, drop, qos.number("latency", default=0.0, minimum=0.0))


def _parse_formation(ctx: _Ctx, agents, topology) -> FormationSettings:
    leaders_raw = ctx.require("leaders")
    if not isinstance(leaders_raw, list) or not leaders_raw:
        raise ValidationError(f"{ctx.path}.leaders", "expected a non-empty list of agent ids")
    n = len(agents)
    leaders = set()
    for idx, value in enumerate(leaders_raw):
        if isinstance(value, bool) or not isinstance(value, int) or not (0 <= value < n):
            raise ValidationError(f"{ctx.path}.leaders[{idx}]", f"invalid agent id {value!r}")
        leaders.add(value)
    kp = ctx.number("kp", default=DEFAULT_KP, exclusive_min=0.0)
    kv = ctx.number("kv", default=DEFAULT_KV, exclusive_min=0.0)
    plant = ctx.string("plant", default="quadrotor", choices=PLANTS)
    stale = ctx.number("stale_after", default=0.1, minimum=0.0)

    if "grid" in ctx.data:
        grid = ctx.child("grid", required=True)
        rows = grid.integer("rows", minimum=1)
        cols = grid.integer("cols", minimum=1)
        if rows * cols != n:
            raise ValidationError(f"{ctx.path}.grid", f"rows*cols ({rows*cols}) != agent count ({n})")
        spec = grid_formation_spec(rows, cols, grid.number("spacing", exclusive_min=0.0), leaders)
    elif "targets" in ctx.data:
        raw_targets = ctx.require("targets")
        if not isinstance(raw_targets, list) or len(raw_targets) != n:
            raise ValidationError(f"{ctx.path}.targets", f"expected one target per agent ({n})")
        targets = {}
        for idx, value in enumerate(raw_targets):
            holder = _Ctx({"p": value}, f"{ctx.path}.targets[{idx}]")
            targets[idx] = holder.vec3("p")
        edges_raw = ctx.require("edges")
        observe = _parse_edges(edges_raw, f"{ctx.path}.edges", n)
        try:
            spec = BearingSpec.from_targets(targets, observe, leaders)
        except Exception as exc:
            raise ValidationError(f"{ctx.path}.targets", str(exc)) from exc
    else:
        raise ValidationError(ctx.path, "formation needs either 'grid' or 'targets'+'edges'")
    try:
        spec.check_against_graph(topology)
    except Exception as exc:
        raise ValidationError(f"{ctx.path}", str(exc)) from exc
    return FormationSettings(spec, kp, kv, plant, stale)


def _parse_pdvrp(ctx: _Ctx, agents) -> PdvrpSettings:
    n = len(agents)
    caps_raw = ctx.require("capacities")
    if not isinstance(caps_raw, list) or len(caps_raw) != n:
        raise ValidationError(f"{ctx.path}.capacities", f"expected one capacity per agent ({n})")
    vehicles = []
    for idx, cap in enumerate(caps_raw):
        if isinstance(cap, bool) or not isinstance(cap, (int, float)) or cap <= 0:
            raise ValidationError(f"{ctx.path}.capacities[{idx}]", f"must be a positive number, got {cap!r}")
        vehicles.append(Vehicle(agents[idx].position, float(cap)))
    tasks_raw = ctx.require("tasks")
    if not isinstance(tasks_raw, list) or not tasks_raw:
        raise ValidationError(f"{ctx.path}.tasks", "expected a non-empty list")
    tasks = []
    for idx, entry in enumerate(tasks_raw):
        tctx = _Ctx(entry, f"{ctx.path}.tasks[{idx}]")
        tasks.append(Task(tctx.vec3("pickup"), tctx.vec3("delivery"), tctx.number("load", exclusive_min=0.0)))
    instance = PdvrpInstance(tuple(vehicles), tuple(tasks))
    bad = instance.unservable_tasks()
    if bad:
        raise ValidationError(f"{ctx.path}.tasks", f"tasks {bad} exceed every vehicle capacity")
    return PdvrpSettings(
        instance,
        cruise_altitude=ctx.number("cruise_altitude", default=1.0),
        seconds_per_meter=ctx.number("seconds_per_meter", default=2.0, exclusive_min=0.0),
        solver=ctx.string("solver", default="exact", choices=("exact", "greedy")),
    )


def _parse_trajectory(ctx: _Ctx, agents) -> TrajectorySettings:
    raw = ctx.require("waypoints")
    if not isinstance(raw, dict) or not raw:
        raise ValidationError(f"{ctx.path}.waypoints", "expected a mapping agent id -> waypoint list")
    n = len(agents)
    table: Dict[int, Tuple[Waypoint, ...]] = {}
    for key, wp_list in raw.items():
        if isinstance(key, bool) or not isinstance(key, int) or not (0 <= key < n):
            raise ValidationError(f"{ctx.path}.waypoints", f"invalid agent id {key!r}")
        if not isinstance(wp_list, list) or len(wp_list) < 2:
            raise ValidationError(
                f"{ctx.path}.waypoints[{key}]", "expected a list of at least 2 waypoints"
            )
        points = []
        last_time = -1.0
        for idx, entry in enumerate(wp_list):
            wctx = _Ctx(entry, f"{ctx.path}.waypoints[{key}][{idx}]")
            t = wctx.number("time", minimum=0.0)
            if t <= last_time:
                raise ValidationError(
                    f"{ctx.path}.waypoints[{key}][{idx}].time", "times must be strictly increasing"
                )
            last_time = t
            points.append(Waypoint(wctx.vec3("position"), wctx.number("yaw", default=0.0), t))
        table[key] = tuple(points)
    return TrajectorySettings(table)


def _parse_gateway(root: _Ctx) -> GatewaySettings:
    gw = root.child("gateway")
    if gw is None:
        return GatewaySettings()
    return GatewaySettings(
        enabled=gw.boolean("enabled", default=False),
        port=gw.integer("port", default=8750, minimum=1),
        frame_hz=gw.number("frame_hz", default=20.0, exclusive_min=0.0),
        hover_altitude=gw.number("hover_altitude", default=1.0),
        land_altitude=gw.number("land_altitude", default=0.05),
    )


def parse_scenario(data: dict) -> ScenarioConfig:
    root = _Ctx(data)
    version = root.integer("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError("schema_version", f"unsupported version {version} (expected {SCHEMA_VERSION})")
    name = root.string("name", default="scenario")
    seed = root.integer("seed", default=0, minimum=0)
    duration = root.number("duration", exclusive_min=0.0)
    physics_hz, control_hz, guidance_hz = _parse_rates(root)
    quad = _parse_quad(root)
    gains = _parse_gains(root)
    fence = _parse_geofence(root)
    agents = _parse_agents(root, fence)
    topology = _parse_topology(root, len(agents))
    qos = _parse_qos(root)

    guidance = root.child("guidance")
    mode = "idle"
    formation = pdvrp = trajectory = None
    if guidance is not None:
        mode = guidance.string("mode", default="idle", choices=GUIDANCE_MODES)
        if mode == "formation":
            formation = _parse_formation(guidance.child("formation", required=True), agents, topology)
        elif mode == "pdvrp":
            pdvrp = _parse_pdvrp(guidance.child("pdvrp", required=True), agents)
        elif mode == "trajectory":
            trajectory = _parse_trajectory(guidance.child("trajectory", required=True), agents)

    log_dir = None
    if "log_dir" in data:
        log_dir = root.string("log_dir")

    return ScenarioConfig(
        name=name,
        seed=seed,
        duration=duration,
        physics_hz=physics_hz,
        control_hz=control_hz,
        guidance_hz=guidance_hz,
        quad=quad,
        gains=gains,
        geofence=fence,
        agents=agents,
        topology=topology,
        qos=qos,
        guidance_mode=mode,
        formation=formation,
        pdvrp=pdvrp,
        trajectory=trajectory,
        gateway=_parse_gateway(root),
        log_dir=log_dir,
        raw=data,
    )


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; errors carry field paths."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: scenario must be a mapping at top level")
    return parse_scenario(data)
