"""Command-line front end.

    python -m floatsim run scenarios/drop_cube.json
    python -m floatsim validate model.urdf model.json
    python -m floatsim bench scenarios/quadruped_bench.json --repeats 5

Exit codes: 0 success, 1 bad input (parse or validation), 2 simulation failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kindyn
from .model import ModelError, SimState, load_model
from .qp import SOLVERS
from .sim import (SimConfig, SimulationError, Simulator, constant_input, initial_log,
                  table_input)
from .spatial import matrix_to_quat_wxyz, quat_wxyz_to_matrix, rpy_to_matrix

log = logging.getLogger("floatsim")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}

_CONFIG_KEYS = ("dt", "duration", "gravity", "ground_height", "solver", "log_every",
                "impact_model", "pin_normals", "loop_projection", "ground")


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    urdf: Path
    sidecar: Path | None
    config: dict
    initial_state: dict = field(default_factory=dict)
    torque: dict | None = None
    external_force: dict | None = None
    output_dir: Path = Path("out")
    analytic_reference: dict | None = None
    name: str = "scenario"


def _path(base, value, key):
    if not isinstance(value, str):
        raise ScenarioError(f"'{key}' must be a path string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_scenario(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed scenario {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a key-value mapping")
    base = path.parent
    if "urdf" not in data:
        raise ScenarioError("scenario is missing 'urdf'")
    urdf = _path(base, data["urdf"], "urdf")
    sidecar = _path(base, data["sidecar"], "sidecar") if data.get("sidecar") else None
    for p in (urdf, sidecar):
        if p is not None and not p.exists():
            raise ScenarioError(f"referenced file does not exist: {p}")
    unknown = set(data) - set(_CONFIG_KEYS) - {"urdf", "sidecar", "initial_state", "torque",
                                               "external_force", "output_dir",
                                               "analytic_reference", "name", "description"}
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    out = data.get("output_dir", f"out/{path.stem}")
    return Scenario(urdf, sidecar, {k: data[k] for k in _CONFIG_KEYS if k in data},
                    data.get("initial_state", {}), data.get("torque"), data.get("external_force"),
                    _path(base, out, "output_dir"), data.get("analytic_reference"),
                    data.get("name", path.stem))


def _input_fn(spec, size, what):
    if spec is None:
        return None
    if "constant" in spec:
        v = np.asarray(spec["constant"], dtype=float)
        if v.shape != (size,):
            raise ScenarioError(f"{what} must have length {size}")
        return constant_input(v)
    if "table" in spec:
        tab = spec["table"]
        t, vals = np.asarray(tab["t"], dtype=float), np.asarray(tab["values"], dtype=float)
        if vals.ndim != 2 or vals.shape != (len(t), size) or np.any(np.diff(t) <= 0):
            raise ScenarioError(f"{what} table must be increasing times with rows of length {size}")
        return table_input(t, vals)
    raise ScenarioError(f"{what} must give 'constant' or 'table'")


def initial_state(model, spec):
    n = model.n
    st = SimState.zeros(n)

    def vec(key, size):
        v = np.asarray(spec.get(key, np.zeros(size)), dtype=float)
        if v.shape != (size,):
            raise ScenarioError(f"initial_state.{key} must have length {size}")
        return v

    st.base_position = vec("base_position", 3)
    if "base_quaternion" in spec:
        q = vec("base_quaternion", 4)
        st.base_rotation = quat_wxyz_to_matrix(q / np.linalg.norm(q))
    else:
        st.base_rotation = rpy_to_matrix(vec("base_rpy", 3))
    st.joint_positions = vec("joint_positions", n)
    st.base_linear_velocity = vec("base_linear_velocity", 3)
    st.base_angular_velocity = vec("base_angular_velocity", 3)
    st.joint_velocities = vec("joint_velocities", n)
    return st


def prepare(scenario, overrides=None):
    """Scenario -> (model, initial state, SimConfig)."""
    model = load_model(scenario.urdf, scenario.sidecar)
    cfg = dict(scenario.config)
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "gravity" in cfg:
        cfg["gravity"] = tuple(float(x) for x in cfg["gravity"])
    cfg["torque"] = _input_fn(scenario.torque, model.n, "torque")
    cfg["external_force"] = _input_fn(scenario.external_force, 6, "external_force")
    try:
        config = SimConfig(**cfg)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None
    return model, initial_state(model, scenario.initial_state), config


# ---------------------------------------------------------------------------
# outputs

def trajectory_header(model):
    cols = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
    cols += [f"s_{j.name}" for j in model.joints if j.movable]
    cols += ["vx", "vy", "vz", "wx", "wy", "wz"]
    cols += [f"sd_{j.name}" for j in model.joints if j.movable]
    return cols


def trajectory_row(entry):
    st = entry.state
    return [entry.time, *st.base_position, *matrix_to_quat_wxyz(st.base_rotation),
            *st.joint_positions, *st.base_linear_velocity, *st.base_angular_velocity,
            *st.joint_velocities]


def forces_header(model):
    cols = ["t"]
    for i in range(model.n_c):
        cols += [f"c{i}_active", f"c{i}_fx", f"c{i}_fy", f"c{i}_fz"]
    for j in range(model.n_p):
        cols += [f"loop{j}_fx", f"loop{j}_fy", f"loop{j}_fz"]
    return cols + ["impact"]


def _forces_row(t, active, forces, loops, impact):
    row = [t]
    for i in range(len(active)):
        row += [int(active[i]), *forces[i]]
    for f in loops:
        row += list(f)
    return row + [int(impact)]


def _fmt(x):
    return repr(float(x)) if not isinstance(x, (int, np.integer)) else str(int(x))


def _finite(obj):
    if isinstance(obj, dict):
        return all(_finite(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return all(_finite(v) for v in obj)
    if isinstance(obj, float):
        return math.isfinite(obj)
    return True


def pendulum_reference(times, theta0, length, g):
    """Small-oscillation solution theta(t) = theta0 cos(sqrt(g/L) t)."""
    return theta0 * np.cos(math.sqrt(g / length) * np.asarray(times))


def simulate(scenario, overrides=None, out_dir=None, write=True):
    """Run a scenario; returns the summary dict (also written to disk when `write`)."""
    model, state, config = prepare(scenario, overrides)
    out_dir = Path(out_dir) if out_dir is not None else scenario.output_dir
    sim = Simulator(model, config)
    first = initial_log(model, state, config)
    traj = [trajectory_row(first)]
    forces = [_forces_row(0.0, first.active, first.contact_forces, first.loop_forces, False)]
    peak = np.zeros(model.n_c)
    peak_loop = np.zeros(model.n_p)
    max_drift = first.loop_drift
    max_vn = 0.0
    min_gap = first.min_gap
    impacts = 0
    energy_in = 0.0  # cumulative change of total energy at impacts
    last = first
    angles = [float(state.joint_positions[0])] if model.n else []
    times = [0.0]
    t0 = time.perf_counter()
    st = state
    for k in range(config.n_steps):
        t = k * config.dt
        e_before = last.energy
        try:
            st, entry = sim.step(st, t)
        except Exception as exc:  # noqa: BLE001  # reported with the step index
            problem = getattr(exc, "problem", None)
            dump = None
            if problem is not None and write:
                out_dir.mkdir(parents=True, exist_ok=True)
                dump = out_dir / "qp_dump.json"
                dump.write_text(json.dumps(problem.to_dict()))
            raise SimulationError(f"step {k} (t = {t:.6g}): {exc}", k, problem) from exc
        entry.time = (k + 1) * config.dt
        if entry.impact:
            impacts += 1
            energy_in += entry.energy - e_before
            forces.append(_forces_row(t, entry.active, entry.impulses, entry.loop_impulses, True))
        peak = np.maximum(peak, np.linalg.norm(entry.contact_forces, axis=1))
        if model.n_p:
            peak_loop = np.maximum(peak_loop, np.linalg.norm(entry.loop_forces, axis=1))
        max_drift = max(max_drift, entry.loop_drift)
        max_vn = max(max_vn, entry.normal_velocity)
        min_gap = min(min_gap, entry.min_gap)
        last = entry
        if (k + 1) % config.log_every == 0:
            traj.append(trajectory_row(entry))
            forces.append(_forces_row(entry.time, entry.active, entry.contact_forces,
                                      entry.loop_forces, False))
            if model.n:
                angles.append(float(entry.state.joint_positions[0]))
                times.append(entry.time)
    wall = time.perf_counter() - t0
    sim_time = config.n_steps * config.dt
    fin = last.state
    summary = {
        "scenario": scenario.name,
        "model": model.name,
        "steps": config.n_steps,
        "dt": config.dt,
        "duration": sim_time,
        "final_state": {
            "base_position": fin.base_position.tolist(),
            "base_quaternion_wxyz": matrix_to_quat_wxyz(fin.base_rotation).tolist(),
            "joint_positions": fin.joint_positions.tolist(),
            "base_linear_velocity": fin.base_linear_velocity.tolist(),
            "base_angular_velocity": fin.base_angular_velocity.tolist(),
            "joint_velocities": fin.joint_velocities.tolist(),
        },
        "peak_contact_force": peak.tolist(),
        "peak_loop_force": peak_loop.tolist(),
        "max_loop_drift": float(max_drift),
        "max_contact_normal_velocity": float(max_vn),
        "min_gap": float(min_gap) if math.isfinite(min_gap) else None,
        "impacts": impacts,
        "energy": {
            "initial": float(first.energy),
            "final": float(last.energy),
            "kinetic_final": float(last.kinetic_energy),
            "potential_final": float(last.potential_energy),
            "change": float(last.energy - first.energy),
            "change_at_impacts": float(energy_in),
        },
        "wall_time": wall,
        "real_time_factor": sim_time / wall if wall > 0 else None,
    }
    ref = scenario.analytic_reference
    if ref and ref.get("type") == "pendulum":
        g = float(np.linalg.norm(config.gravity))
        length = float(ref["length"])
        err = np.abs(np.asarray(angles) - pendulum_reference(times, angles[0], length, g))
        summary["analytic_reference"] = {
            "type": "pendulum small-oscillation",
            "max_angle_error": float(err.max()),
            # chord between simulated and reference bob positions
            "max_position_error": float((2 * length * np.sin(err / 2)).max()),
        }
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / "trajectory.csv", trajectory_header(model), traj)
        _write_csv(out_dir / "forces.csv", forces_header(model), forces)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not _finite(summary):
        log.warning("summary contains non-finite values")
    return summary


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


# ---------------------------------------------------------------------------
# commands

def _overrides(args):
    return {"dt": args.dt, "duration": args.duration, "solver": args.solver}


def cmd_run(args):
    try:
        scenario = load_scenario(args.scenario)
        out = args.out_dir if args.out_dir else None
        summary = simulate(scenario, _overrides(args), out_dir=out)
    except (ScenarioError, ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SimulationError as exc:
        dump = ""
        if exc.problem is not None:
            out = Path(args.out_dir) if args.out_dir else load_scenario(args.scenario).output_dir
            dump = f" (QP dumped to {out / 'qp_dump.json'})"
        print(f"simulation failed at {exc}{dump}", file=sys.stderr)
        return 2
    rtf = summary["real_time_factor"]
    print(f"{summary['scenario']}: {summary['steps']} steps in {summary['wall_time']:.3f} s "
          f"(real-time factor {rtf:.2f}); max loop drift {summary['max_loop_drift']:.3g} m; "
          f"impacts {summary['impacts']}")
    if "analytic_reference" in summary:
        ref = summary["analytic_reference"]
        print(f"  vs small-oscillation solution: max angle error {ref['max_angle_error']:.3g} rad, "
              f"max bob position error {ref['max_position_error']:.3g} m")
    return 0


def cmd_validate(args):
    try:
        model = load_model(args.urdf, args.sidecar)
    except ModelError as exc:
        print(f"model invalid ({len(exc.violations)} violation(s)):")
        for v in exc.violations:
            print(f"  - {v.code}: {v.message}")
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    # numerical checks on a neutral state
    state = SimState.zeros(model.n)
    M = kindyn.mass_matrix(model, state)
    ok = np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max()))
    try:
        np.linalg.cholesky(M[6:, 6:] if model.fixed_base else M)
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        print("model invalid (1 violation(s)):\n  - inertia PD: mass matrix is not positive definite")
        return 1
    print(f"model '{model.name}' OK: {len(model.links)} links, n = {model.n}, "
          f"{model.n_c} contact points, {model.n_p} loop closures, mass {model.total_mass:.6g} kg")
    for w in model.parse_warnings:
        print(f"  note: {w}")
    return 0


def bench(scenario, repeats, overrides=None):
    model, state, config = prepare(scenario, overrides)
    samples = []
    per_step = []
    for _ in range(repeats):
        sim = Simulator(model, config)
        st = state.copy()
        times = np.empty(config.n_steps)
        t_start = time.perf_counter()
        for k in range(config.n_steps):
            a = time.perf_counter()
            st, _ = sim.step(st, k * config.dt)
            times[k] = time.perf_counter() - a
        samples.append(time.perf_counter() - t_start)
        per_step.append(times)
    allsteps = np.concatenate(per_step)
    sim_time = config.n_steps * config.dt
    wall = float(np.median(samples))
    return {
        "scenario": scenario.name,
        "dofs": model.n,
        "dt": config.dt,
        "steps": config.n_steps,
        "repeats": repeats,
        "samples_wall_time": samples,
        "median_step_time": float(np.median(allsteps)),
        "p95_step_time": float(np.percentile(allsteps, 95)),
        "steps_per_second": config.n_steps / wall,
        "real_time_factor": sim_time / wall,
    }


def cmd_bench(args):
    try:
        scenario = load_scenario(args.scenario)
        if args.repeats < 1:
            raise ScenarioError("--repeats must be >= 1")
        report = bench(scenario, args.repeats, _overrides(args))
    except (ScenarioError, ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, RuntimeError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "bench.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="floatsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def sim_flags(sp):
        sp.add_argument("scenario")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--duration", type=float)
        sp.add_argument("--solver", choices=sorted(SOLVERS))
        sp.add_argument("--out-dir")

    r = sub.add_parser("run", help="simulate a scenario and write CSV/JSON logs")
    sim_flags(r)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a URDF + sidecar model")
    v.add_argument("urdf")
    v.add_argument("sidecar", nargs="?")
    v.set_defaults(func=cmd_validate)
    b = sub.add_parser("bench", help="time a scenario")
    sim_flags(b)
    b.add_argument("--repeats", type=int, default=5)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    level = os.environ.get("SIM_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
