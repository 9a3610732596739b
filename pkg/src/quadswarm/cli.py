"""Command-line interface: run, validate, solve-pdvrp, plan."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import kernels
from .orchestrator import run_scenario
from .scenario import ScenarioError, load_scenario
from .tasking import (
    PdvrpInstance,
    Task,
    TaskingError,
    Vehicle,
    greedy_allocate_distributed,
    route_cost,
    solve_exact,
)


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Deterministic nano-quadrotor swarm simulation and guidance."""


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--until", type=float, default=None, help="Stop after this many simulated seconds.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--log", "log_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for the CSV flight log and metadata.")
@click.option("--gateway", is_flag=True, help="Host the operator gateway while running.")
def run(scenario, until, seed, log_dir, gateway):
    """Run a scenario to completion (or --until) and print a summary."""
    try:
        config = load_scenario(scenario)
        if seed is not None:
            data = dict(config.raw)
            data["seed"] = seed
            from .scenario import parse_scenario

            config = parse_scenario(data)
        if gateway:
            from .gateway import serve

            click.echo(f"gateway on ws://127.0.0.1:{config.gateway.port}/ws "
                       f"(kernel backend: {kernels.BACKEND})")
            serve(config, log_dir=log_dir)
            return
        summary = run_scenario(config, until=until, log_dir=log_dir)
    except ScenarioError as exc:
        _fail(str(exc), 2)
    except Exception as exc:
        _fail(str(exc), 1)
    else:
        payload = {
            "scenario": summary.name,
            "ticks": summary.ticks,
            "sim_time": summary.sim_time,
            "statuses": summary.statuses,
            "metrics": summary.metrics,
            "config_digest": summary.config_digest,
            "kernel_backend": kernels.BACKEND,
        }
        if summary.log_path:
            digest = hashlib.sha256(Path(summary.log_path).read_bytes()).hexdigest()
            payload["log_path"] = summary.log_path
            payload["log_digest"] = digest
        click.echo(json.dumps(payload, sort_keys=True))


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
def validate(scenario):
    """Validate a scenario file; nonzero exit with a field-path diagnostic."""
    try:
        config = load_scenario(scenario)
    except ScenarioError as exc:
        _fail(str(exc), 2)
    else:
        click.echo(f"ok: {config.name} ({config.n_agents} agents, {config.duration}s)")


def _load_instance(path: str) -> PdvrpInstance:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise TaskingError("instance file must be a mapping")
    vehicles = [
        Vehicle(np.asarray(v["start"], dtype=float), float(v["capacity"]))
        for v in data.get("vehicles", [])
    ]
    tasks = [
        Task(
            np.asarray(t["pickup"], dtype=float),
            np.asarray(t["delivery"], dtype=float),
            float(t["load"]),
        )
        for t in data.get("tasks", [])
    ]
    return PdvrpInstance(tuple(vehicles), tuple(tasks))


@main.command("solve-pdvrp")
@click.argument("instance", type=click.Path(exists=True, dir_okay=False))
@click.option("--exact/--greedy", "exact", default=True, help="Solver choice (default exact).")
def solve_pdvrp(instance, exact):
    """Solve a pickup-and-delivery instance and print routes + cost."""
    try:
        inst = _load_instance(instance)
        if exact:
            plan = solve_exact(inst)
        else:
            from .netsim import Network, TopologyGraph

            net = Network(TopologyGraph.complete(len(inst.vehicles)))
            plan = greedy_allocate_distributed(net, inst)
        cost = route_cost(plan, inst)
    except (TaskingError, KeyError, ValueError) as exc:
        _fail(str(exc), 2)
    else:
        routes = [[stop.task_id for stop in route] for route in plan.routes]
        click.echo(json.dumps({"cost": cost, "routes": routes}))


@main.command()
@click.argument("waypoints_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="CSV file for the sampled trajectory.")
@click.option("--rate", type=float, default=100.0, help="Sample rate in Hz.")
def plan(waypoints_file, out, rate):
    """Fit a spline through a waypoint file and sample it to CSV."""
    from .planning import Waypoint, interpolate_waypoints

    try:
        data = yaml.safe_load(Path(waypoints_file).read_text())
        points = [
            Waypoint(np.asarray(w["position"], dtype=float),
                     float(w.get("yaw", 0.0)), float(w["time"]))
            for w in data
        ]
        spline = interpolate_waypoints(points)
    except Exception as exc:
        _fail(str(exc), 2)
        return
    import csv

    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw", "yaw_rate"])
        n = int(spline.duration * rate) + 1
        for i in range(n):
            t = spline.start_time + i / rate
            pos, vel, acc, yaw, yaw_rate, _ = spline.sample_state(t)
            writer.writerow(
                [repr(float(t))]
                + [repr(float(v)) for v in pos]
                + [repr(float(v)) for v in vel]
                + [repr(float(v)) for v in acc]
                + [repr(float(yaw)), repr(float(yaw_rate))]
            )
    click.echo(f"wrote {out} ({spline.duration:.2f}s at {rate:g} Hz)")


if __name__ == "__main__":
    main()
