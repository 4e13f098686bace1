"""Fixed-step simulation loop.

Each step: zero the forces, resolve a new impact if one occurred, solve the
contact QP (with loop closures), run forward dynamics, then integrate with
semi-implicit Euler, the base rotation on SO(3) through the exponential map.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from . import kindyn
from .contact import (EPS_GAP, ContactForces, _loop_factor, _penetration_bias, compute_contact_forces, detect,
                      loop_data, normal_rows)
from .impact import detect_new_impacts, resolve_impact_projector, resolve_impact_qp
from .model import SimState
from .qp import QpError, make_solver
from .spatial import orthonormalize, so3_exp

log = logging.getLogger(__name__)


def integrate(state, nu_dot, dt, fixed_base=False):
    """Semi-implicit Euler: velocities first, then positions with the new velocities."""
    nu_dot = np.asarray(nu_dot, dtype=float)
    if not np.all(np.isfinite(nu_dot)):
        raise FloatingPointError("non-finite acceleration")
    nu = state.nu + nu_dot * dt
    if fixed_base:
        nu[:6] = 0.0
    v, w, sd = nu[:3], nu[3:6], nu[6:]
    p = state.base_position + v * dt
    R = orthonormalize(so3_exp(w * dt) @ state.base_rotation)
    s = state.joint_positions + sd * dt
    return SimState(p, R, s, v.copy(), w.copy(), sd.copy())


def retract(state, delta, eps):
    """Configuration q (+) eps * delta for a tangent vector delta of size n+6."""
    delta = np.asarray(delta, dtype=float)
    return SimState(state.base_position + eps * delta[:3],
                    so3_exp(eps * delta[3:6]) @ state.base_rotation,
                    state.joint_positions + eps * delta[6:],
                    state.base_linear_velocity.copy(), state.base_angular_velocity.copy(),
                    state.joint_velocities.copy())


def project_loops(model, state, cache):
    """One Gauss-Newton step onto p_j1 = p_j2, then nu onto J_p nu = 0, both in the M^-1 metric.

    The acceleration-level loop rows leave O(dt) errors per step that Euler
    integration accumulates; this removes them without touching the forces.
    """
    loops = loop_data(model, cache)
    J = loops.J_p
    MinvJt = cache.solve_mass(J.T)
    fac = _loop_factor(0.5 * (J @ MinvJt + (J @ MinvJt).T))
    delta = -MinvJt @ scipy.linalg.cho_solve(fac, loops.errors.reshape(-1), check_finite=False)
    nu = state.nu
    nu = nu - MinvJt @ scipy.linalg.cho_solve(fac, J @ nu, check_finite=False)
    out = retract(state, delta, 1.0)
    return out.with_velocity(nu)


# ---------------------------------------------------------------------------
# inputs

def constant_input(value):
    value = np.asarray(value, dtype=float)
    return lambda t: value


def table_input(times, values):
    """Piecewise-linear interpolation of a time table, held constant past the ends."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float).reshape(len(times), -1)

    def f(t):
        return np.array([np.interp(t, times, values[:, k]) for k in range(values.shape[1])])

    return f


@dataclass
class SimConfig:
    dt: float = 1e-3
    duration: float = 1.0
    gravity: tuple = (0.0, 0.0, -9.81)
    ground_height: float = 0.0
    solver: str = "active_set"
    log_every: int = 1
    torque: Callable | None = None  # t -> tau (n,); None means zero
    external_force: Callable | None = None  # t -> base wrench (force, torque about base origin)
    impact_model: str = "qp"  # "qp", "projector", or "none"
    pin_normals: bool = True
    loop_projection: bool = True  # project (q, nu) back onto closed loops after each step
    ground: bool = True  # False disables contact handling altogether

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if not (self.duration >= self.dt - 1e-15):
            raise ValueError("duration must satisfy duration >= dt")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.impact_model not in ("qp", "projector", "none"):
            raise ValueError(f"unknown impact model '{self.impact_model}'")

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))


@dataclass
class StepLog:
    time: float
    state: SimState
    contact_forces: np.ndarray  # (n_c, 3)
    loop_forces: np.ndarray  # (n_p, 3)
    active: np.ndarray  # (n_c,) bool
    impact: bool
    impulses: np.ndarray | None  # (n_c, 3)
    loop_impulses: np.ndarray | None  # (n_p, 3)
    kinetic_energy: float
    potential_energy: float
    normal_velocity: float  # max |v_n| over points active during the step, post-step
    loop_drift: float  # max ||p_j1 - p_j2||, post-step
    loop_accel_residual: float  # ||J_p nu_dot + Jdot_p nu||_inf during the step
    contact_accel_residual: float  # constraint rows of loaded points during the step
    min_gap: float
    qp_objective: float = 0.0
    post_impact_velocity: np.ndarray | None = None  # nu+ on impact steps

    @property
    def energy(self):
        return self.kinetic_energy + self.potential_energy


class SimulationError(RuntimeError):
    def __init__(self, message, step_index=None, problem=None):
        super().__init__(message)
        self.step_index = step_index
        self.problem = problem


class Simulator:
    """Holds per-run state: solver warm start, previous contact flags, cached kinematics."""

    def __init__(self, model, config, solver=None):
        self.model = model
        self.config = config
        self.solver = solver if solver is not None else make_solver(config.solver)
        self.gravity = np.asarray(config.gravity, dtype=float)
        self.prev_active = np.zeros(model.n_c, dtype=bool)
        self._cache = None
        self._cache_state = None

    def _cache_for(self, state):
        if self._cache is not None and self._cache_state is state:
            return self._cache
        return kindyn.compute_cache(self.model, state, self.gravity)

    def _inputs(self, t):
        n = self.model.n
        tau = np.zeros(n) if self.config.torque is None else np.asarray(self.config.torque(t), dtype=float)
        if tau.shape != (n,):
            raise ValueError(f"torque must have length {n}")
        ext = None
        if self.config.external_force is not None:
            ext = np.zeros(self.model.nv)
            ext[:6] = self.config.external_force(t)
        return tau, ext

    def step(self, state, t=0.0):
        model, cfg = self.model, self.config
        dt = cfg.dt
        tau, ext = self._inputs(t)
        cache = self._cache_for(state)
        ground = cfg.ground_height if cfg.ground else -math.inf
        snap = detect(model, state, ground, cache, self.prev_active)
        n_active = snap.n_active
        loops = loop_data(model, cache)
        impact = False
        impulses = loop_impulses = post_impact = None
        forces = ContactForces(np.zeros((model.n_c, 3)), np.zeros(0), np.zeros((model.n_p, 3)))
        nu = state.nu
        sel = kindyn.selector_torque(model, tau)
        if ext is not None:
            sel = sel + ext
        if n_active or model.n_p:
            if n_active and cfg.impact_model != "none":
                impact, _ = detect_new_impacts(self.prev_active, snap)
            if impact:
                if cfg.impact_model == "qp":
                    res = resolve_impact_qp(cache, snap, loops, nu, self.solver,
                                            pin_normals=cfg.pin_normals)
                else:
                    res = resolve_impact_projector(cache, snap.J_c, nu)
                impulses = res.per_point(snap, model.n_c)
                loop_impulses = (res.loop_impulses.reshape(-1, 3) if len(res.loop_impulses)
                                 else np.zeros((model.n_p, 3)))
                nu = res.post_velocity
                post_impact = nu.copy()
                state = state.with_velocity(nu)
                # h and Jdot nu depend on the velocity
                cache = kindyn.compute_cache(model, state, self.gravity)
                snap = detect(model, state, ground, cache, self.prev_active)
                loops = loop_data(model, cache)
            nu_dot_f = cache.solve_mass(sel - cache.bias_forces)
            forces = compute_contact_forces(model, cache, snap, state, tau, dt, self.solver, loops,
                                            nu_dot_f=nu_dot_f, pin_normals=cfg.pin_normals)
            gen = sel - cache.bias_forces
            if n_active:
                gen = gen + snap.J_c.T @ forces.f_c
            if model.n_p:
                gen = gen + loops.J_p.T @ forces.loop_forces.reshape(-1)
            nu_dot = cache.solve_mass(gen)
        else:
            nu_dot = cache.solve_mass(sel - cache.bias_forces)

        loop_res = 0.0
        if model.n_p:
            loop_res = float(np.abs(loops.J_p @ nu_dot + loops.Jdot_nu).max())
        contact_res = self._contact_residual(snap, forces, nu, nu_dot, dt) if n_active else 0.0

        new_state = integrate(state, nu_dot, dt, fixed_base=model.fixed_base)
        # post-step quantities; the cache is reused by the next step
        post = kindyn.compute_cache(model, new_state, self.gravity)
        if model.n_p and cfg.loop_projection:
            new_state = project_loops(model, new_state, post)
            post = kindyn.compute_cache(model, new_state, self.gravity)
        self._cache, self._cache_state = post, new_state
        new_nu = new_state.nu
        vn = 0.0
        min_gap = math.inf
        if model.n_c:
            z = np.array([post.frame_transforms[f"contact/{i}"][2, 3] for i in range(model.n_c)])
            min_gap = float(z.min() - cfg.ground_height)
        if n_active:
            vn = max(abs(post.point_jacobians[f"contact/{i}"][2] @ new_nu) for i in snap.active)
        drift = loop_data(model, post).drift if model.n_p else 0.0
        self.prev_active = snap.status == 0
        entry = StepLog(
            time=t + dt, state=new_state, contact_forces=forces.forces,
            loop_forces=forces.loop_forces if model.n_p else np.zeros((0, 3)),
            active=snap.status == 0,
            impact=impact, impulses=impulses, loop_impulses=loop_impulses,
            kinetic_energy=0.5 * new_nu @ post.mass_matrix @ new_nu,
            potential_energy=post.potential_energy,
            normal_velocity=vn, loop_drift=drift, loop_accel_residual=loop_res,
            contact_accel_residual=contact_res, min_gap=min_gap,
            qp_objective=forces.solution.objective if forces.solution is not None else 0.0,
            post_impact_velocity=post_impact)
        return new_state, entry

    @staticmethod
    def _contact_residual(snap, forces, nu, nu_dot, dt):
        """Constraint rows J_c nu_dot + Jdot_c nu + J_c nu / dt for loaded points.

        Sticking points (force strictly inside the pyramid) use all three rows;
        sliding points only the normal row.
        """
        if forces.f_c.size == 0:
            return 0.0
        J = snap.J_c
        r = (J @ nu_dot + snap.Jdot_nu + (J @ nu) / dt + _penetration_bias(snap, dt)).reshape(-1, 3)
        f = forces.f_c.reshape(-1, 3)
        tol = 1e-9 * max(1.0, float(np.abs(f).max()))
        loaded = f[:, 2] > tol
        if not loaded.any():
            return 0.0
        per = np.abs(r[:, 2])
        prob = forces.problem
        if prob.ineq_matrix.shape[0]:
            slack = (prob.ineq_matrix @ forces.f_c - prob.ineq_bound).reshape(len(f), -1)
            inside = np.all(slack[:, :-1] < -tol, axis=1)
            per = np.where(inside, np.abs(r).max(axis=1), per)
        else:
            per = np.abs(r).max(axis=1)
        return float(per[loaded].max())


def step(model, state, tau, config, solver=None, prev_active=None, t=0.0):
    """One step of the loop with an explicit torque; returns (state', StepLog)."""
    cfg = SimConfig(**{**config.__dict__, "torque": constant_input(tau)})
    sim = Simulator(model, cfg, solver)
    if prev_active is not None:
        sim.prev_active = np.asarray(prev_active, dtype=bool)
    return sim.step(state, t)


def run(model, state, config, solver=None, callback=None):
    """Run duration/dt steps; returns the StepLogs at the configured cadence."""
    state.check(model)
    sim = Simulator(model, config, solver)
    logs = []
    t = 0.0
    for k in range(config.n_steps):
        try:
            state, entry = sim.step(state, t)
        except QpError as exc:
            raise SimulationError(f"step {k}: {exc}", k, exc.problem) from exc
        except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
            raise SimulationError(f"step {k}: {exc}", k) from exc
        t = (k + 1) * config.dt
        entry.time = t
        if (k + 1) % config.log_every == 0:
            logs.append(entry)
        if callback is not None:
            callback(k, entry)
    return logs


def initial_log(model, state, config):
    """Pseudo log entry describing the initial state (t = 0, no forces)."""
    cache = kindyn.compute_cache(model, state, config.gravity)
    nu = state.nu
    min_gap = math.inf
    if model.n_c:
        min_gap = min(cache.frame_transforms[f"contact/{i}"][2, 3] for i in range(model.n_c)) - config.ground_height
    return StepLog(0.0, state, np.zeros((model.n_c, 3)), np.zeros((model.n_p, 3)),
                   np.zeros(model.n_c, dtype=bool), False, None, None,
                   0.5 * nu @ cache.mass_matrix @ nu, cache.potential_energy, 0.0,
                   loop_data(model, cache).drift if model.n_p else 0.0, 0.0, 0.0, min_gap)


__all__ = ["SimConfig", "StepLog", "Simulator", "SimulationError", "integrate", "retract", "step",
           "run", "initial_log", "constant_input", "table_input", "EPS_GAP", "normal_rows"]
