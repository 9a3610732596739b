"""Pickup-and-delivery routing guidance.

Vehicles carry one good at a time: each serviced task is a pickup leg
followed immediately by its delivery leg. Costs are horizontal (xy)
Euclidean distances, since all routes fly at a common cruise altitude.

Two solvers: an exact enumerative one for small instances (the
correctness oracle) and a greedy auction protocol that runs distributed
over the message fabric, one bidder per vehicle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import wire
from .netsim import Network
from .planning import Waypoint

EXACT_MAX_TASKS = 8
EXACT_MAX_VEHICLES = 6


class TaskingError(Exception):
    pass


class InfeasibleInstanceError(TaskingError):
    """Some task cannot be carried by any vehicle."""


class FeasibilityError(TaskingError):
    """A route plan violates an instance constraint."""


class SizeError(TaskingError):
    """Instance too large for the exact solver's enforced bounds."""


class AllocationIncompleteError(TaskingError):
    """Distributed allocation hit its round cap before agreeing."""

    def __init__(self, message: str, partial):
        super().__init__(message)
        self.partial = partial


def _point(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a finite 3-vector")
    return arr


def _dist(a, b) -> float:
    # horizontal distance only: altitude changes are excluded from cost
    return math.hypot(b[0] - a[0], b[1] - a[1])


@dataclass(frozen=True, eq=False)
class Vehicle:
    start: np.ndarray
    capacity: float

    def __post_init__(self):
        object.__setattr__(self, "start", _point(self.start, "vehicle start"))
        if not (self.capacity > 0.0):
            raise ValueError(f"capacity must be > 0, got {self.capacity}")


@dataclass(frozen=True, eq=False)
class Task:
    pickup: np.ndarray
    delivery: np.ndarray
    load: float

    def __post_init__(self):
        object.__setattr__(self, "pickup", _point(self.pickup, "pickup"))
        object.__setattr__(self, "delivery", _point(self.delivery, "delivery"))
        if not (self.load > 0.0):
            raise ValueError(f"load must be > 0, got {self.load}")


@dataclass(frozen=True)
class PdvrpInstance:
    vehicles: Tuple[Vehicle, ...]
    tasks: Tuple[Task, ...]

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.vehicles:
            raise ValueError("instance needs at least one vehicle")

    def can_serve(self, vehicle_idx: int, task_idx: int) -> bool:
        return self.tasks[task_idx].load <= self.vehicles[vehicle_idx].capacity

    def unservable_tasks(self) -> List[int]:
        return [
            t for t in range(len(self.tasks))
            if not any(self.can_serve(v, t) for v in range(len(self.vehicles)))
        ]


@dataclass(frozen=True)
class RouteStop:
    task_id: int
    pickup: np.ndarray
    delivery: np.ndarray


@dataclass(frozen=True)
class RoutePlan:
    routes: Tuple[Tuple[RouteStop, ...], ...]   # one ordered route per vehicle
    total_cost: float

    def assignment_vector(self, n_tasks: int) -> List[Optional[int]]:
        assign: List[Optional[int]] = [None] * n_tasks
        for v, route in enumerate(self.routes):
            for stop in route:
                assign[stop.task_id] = v
        return assign


def _make_plan(instance: PdvrpInstance, orders: Sequence[Sequence[int]]) -> RoutePlan:
    routes = []
    cost = 0.0
    for v, order in enumerate(orders):
        stops = []
        here = instance.vehicles[v].start
        for t in order:
            task = instance.tasks[t]
            cost += _dist(here, task.pickup) + _dist(task.pickup, task.delivery)
            here = task.delivery
            stops.append(RouteStop(t, task.pickup, task.delivery))
        routes.append(tuple(stops))
    return RoutePlan(tuple(routes), cost)


def route_cost(plan: RoutePlan, instance: PdvrpInstance) -> float:
    """Re-sum leg lengths after validating the plan against the instance."""
    if len(plan.routes) != len(instance.vehicles):
        raise FeasibilityError(
            f"plan has {len(plan.routes)} routes for {len(instance.vehicles)} vehicles"
        )
    seen: Dict[int, int] = {}
    for v, route in enumerate(plan.routes):
        for stop in route:
            if not (0 <= stop.task_id < len(instance.tasks)):
                raise FeasibilityError(f"unknown task id {stop.task_id}")
            if stop.task_id in seen:
                raise FeasibilityError(
                    f"task {stop.task_id} assigned to both vehicle "
                    f"{seen[stop.task_id]} and vehicle {v}"
                )
            seen[stop.task_id] = v
            if not instance.can_serve(v, stop.task_id):
                raise FeasibilityError(
                    f"task {stop.task_id} load {instance.tasks[stop.task_id].load} "
                    f"exceeds vehicle {v} capacity {instance.vehicles[v].capacity}"
                )
    missing = [t for t in range(len(instance.tasks)) if t not in seen]
    if missing:
        raise FeasibilityError(f"tasks not assigned: {missing}")
    cost = 0.0
    for v, route in enumerate(plan.routes):
        here = instance.vehicles[v].start
        for stop in route:
            task = instance.tasks[stop.task_id]
            cost += _dist(here, task.pickup) + _dist(task.pickup, task.delivery)
            here = task.delivery
    return cost


def _best_order(instance: PdvrpInstance, vehicle: int, subset: Tuple[int, ...]):
    """Cheapest visiting order for one vehicle's task subset.

    Ties broken toward the lexicographically smallest task sequence.
    Subsets are small (<= EXACT_MAX_TASKS), so plain permutation search.
    """
    best = None
    for perm in itertools.permutations(subset):
        cost = 0.0
        here = instance.vehicles[vehicle].start
        for t in perm:
            task = instance.tasks[t]
            cost += _dist(here, task.pickup) + _dist(task.pickup, task.delivery)
            here = task.delivery
        if best is None or (cost, perm) < best:
            best = (cost, perm)
    return best if best is not None else (0.0, ())


def solve_exact(instance: PdvrpInstance) -> RoutePlan:
    """Minimum-total-distance plan by exhaustive assignment enumeration.

    Deterministic: among equal-cost plans the lexicographically smallest
    task->vehicle assignment vector wins, then the smallest task order per
    vehicle. Size bounds are enforced to keep the search exact and fast.
    """
    n_tasks = len(instance.tasks)
    n_vehicles = len(instance.vehicles)
    if n_tasks > EXACT_MAX_TASKS or n_vehicles > EXACT_MAX_VEHICLES:
        raise SizeError(
            f"exact solver is bounded to {EXACT_MAX_TASKS} tasks and "
            f"{EXACT_MAX_VEHICLES} vehicles; got {n_tasks} tasks, {n_vehicles} vehicles"
        )
    bad = instance.unservable_tasks()
    if bad:
        raise InfeasibleInstanceError(
            f"tasks {bad} exceed every vehicle capacity; instance infeasible"
        )

    feasible = [
        [v for v in range(n_vehicles) if instance.can_serve(v, t)]
        for t in range(n_tasks)
    ]
    order_cache: Dict[Tuple[int, Tuple[int, ...]], Tuple[float, Tuple[int, ...]]] = {}

    def order_cost(vehicle: int, subset: Tuple[int, ...]) -> float:
        key = (vehicle, subset)
        hit = order_cache.get(key)
        if hit is None:
            hit = _best_order(instance, vehicle, subset)
            order_cache[key] = hit
        return hit[0]

    # product() walks assignment vectors in lexicographic order, so keeping
    # the first minimum implements the documented tie-break
    best_cost = math.inf
    best_assign: Optional[Tuple[int, ...]] = None
    for assign in itertools.product(*feasible):
        subsets: List[List[int]] = [[] for _ in range(n_vehicles)]
        for t, v in enumerate(assign):
            subsets[v].append(t)
        cost = 0.0
        for v in range(n_vehicles):
            if subsets[v]:
                cost += order_cost(v, tuple(subsets[v]))
                if cost > best_cost:
                    break
        if cost < best_cost:
            best_cost = cost
            best_assign = assign

    assert best_assign is not None  # feasibility checked above
    orders = []
    for v in range(n_vehicles):
        subset = tuple(t for t in range(n_tasks) if best_assign[t] == v)
        orders.append(order_cache[(v, subset)][1] if subset else ())
    return _make_plan(instance, orders)


@dataclass
class _Bidder:
    """Local state of one vehicle in the greedy auction; sees only its own
    start/capacity plus the shared task list and neighbor messages."""

    agent: int
    instance: PdvrpInstance
    route: List[int]
    tail: np.ndarray
    assigned: Dict[int, int]

    def local_bid(self):
        best = None
        for t in range(len(self.instance.tasks)):
            if t in self.assigned or not self.instance.can_serve(self.agent, t):
                continue
            task = self.instance.tasks[t]
            cost = _dist(self.tail, task.pickup) + _dist(task.pickup, task.delivery)
            if best is None or (cost, t, self.agent) < best:
                best = (cost, t, self.agent)
        return best

    def award(self, bid) -> None:
        cost, task, winner = bid
        self.assigned[task] = winner
        if winner == self.agent:
            self.route.append(task)
            self.tail = self.instance.tasks[task].delivery


def _encode_bid(bid) -> bytes:
    if bid is None:
        return wire.serialize(None)
    return wire.serialize([float(bid[0]), int(bid[1]), int(bid[2])])


def _decode_bid(payload: bytes):
    value = wire.deserialize(payload)
    if value is None:
        return None
    return (value[0], value[1], value[2])


def _merge(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def greedy_allocate_distributed(net: Network, instance: PdvrpInstance,
                                round_cap: Optional[int] = None) -> RoutePlan:
    """Feasible plan via repeated min-bid auctions over neighbors_exchange.

    Each auction round every vehicle bids its cheapest feasible unassigned
    task (appended at the tail of its current route); bids flood the graph
    via n-1 exchange sub-rounds of min-consensus, after which all agents
    award the task to the same winner. Driven in lockstep, so results are
    deterministic for a fixed seed. A round cap guards against disconnected
    graphs; hitting it raises with the partial assignment attached.
    """
    n = net.graph.n
    if n != len(instance.vehicles):
        raise ValueError("one network agent per vehicle required")
    bad = instance.unservable_tasks()
    if bad:
        raise InfeasibleInstanceError(
            f"tasks {bad} exceed every vehicle capacity; instance infeasible"
        )
    bidders = [
        _Bidder(i, instance, [], instance.vehicles[i].start, {}) for i in range(n)
    ]
    if round_cap is None:
        round_cap = len(instance.tasks) + 1
    consensus_rounds = max(1, n - 1)
    round_no = 0
    for _auction in range(round_cap):
        if all(len(b.assigned) == len(instance.tasks) for b in bidders):
            break
        best = [b.local_bid() for b in bidders]
        for _ in range(consensus_rounds):
            round_no += 1
            for b in bidders:
                net.exchange_send(b.agent, _encode_bid(best[b.agent]), round_no)
            for b in bidders:
                for payload in net.exchange_collect(b.agent, round_no).values():
                    best[b.agent] = _merge(best[b.agent], _decode_bid(payload))
        for b in bidders:
            if best[b.agent] is not None:
                b.award(best[b.agent])

    assignments = [dict(b.assigned) for b in bidders]
    complete = all(len(a) == len(instance.tasks) for a in assignments)
    consistent = all(a == assignments[0] for a in assignments)
    if not (complete and consistent):
        raise AllocationIncompleteError(
            "allocation did not converge (disconnected graph?); "
            f"complete={complete} consistent={consistent}",
            assignments,
        )
    plan = _make_plan(instance, [tuple(b.route) for b in bidders])
    route_cost(plan, instance)  # feasibility closure
    return plan


def route_to_waypoints(start, stops: Sequence[RouteStop], cruise_altitude: float,
                       segment_time_per_meter: float, t0: float = 0.0) -> List[Waypoint]:
    """Waypoints visiting pickup then delivery per task at cruise altitude.

    Knot times grow proportionally to horizontal leg length; zero-length
    legs are dropped (no new waypoint).
    """
    if not stops:
        raise ValueError("route must contain at least one stop")
    if not (segment_time_per_meter > 0.0):
        raise ValueError("segment_time_per_meter must be > 0")
    start = _point(start, "start")

    def at_altitude(p) -> np.ndarray:
        return np.array([p[0], p[1], cruise_altitude])

    waypoints = [Waypoint(at_altitude(start), 0.0, t0)]
    here = start
    t = t0
    for stop in stops:
        for target in (stop.pickup, stop.delivery):
            leg = _dist(here, target)
            if leg > 0.0:
                t += leg * segment_time_per_meter
                waypoints.append(Waypoint(at_altitude(target), 0.0, t))
                here = target
    return waypoints
