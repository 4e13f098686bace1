"""Ground contact detection and Gauss-principle contact forces.

The contact QP minimizes 1/2 f^T H f + f^T g over forces in the linearized
friction pyramids, with H the Delassus matrix J_c M^-1 J_c^T and g the
contact-space free acceleration.  Loop closures of closed chains are
eliminated from the QP through their KKT rows (Schur complement), and their
forces recovered afterwards.

Complementarity is structural: only points touching the ground are QP
variables; every other point carries exactly zero force.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .qp import OPTIMAL, QpError, QpProblem, cone_block

EPS_GAP = 1e-6  # activation tolerance [m]
BAUMGARTE_BETA = 0.1  # penetration recovery gain
LOOP_REG = 1e-10  # loop Gramian regularization, relative to its trace
GROUND_NORMAL = np.array([0.0, 0.0, 1.0])


class LoopConstraintError(RuntimeError):
    pass


@dataclass
class ContactSnapshot:
    positions: np.ndarray  # (n_c, 3)
    gaps: np.ndarray  # (n_c,)
    status: np.ndarray  # (n_c,) 0 = in contact, 1 = not in contact
    velocities: np.ndarray  # (n_c, 3)
    J_c: np.ndarray  # (3 n_a, n+6), active points only
    Jdot_nu: np.ndarray  # (3 n_a,)
    prev_active: np.ndarray | None = None
    mu: float = 0.5
    facets: int = 4

    @property
    def active(self):
        return np.flatnonzero(self.status == 0)

    @property
    def n_active(self):
        return int(np.count_nonzero(self.status == 0))

    @property
    def active_gaps(self):
        return self.gaps[self.status == 0]


@dataclass
class LoopData:
    J_p: np.ndarray  # (3 n_p, n+6) stacked J_j1 - J_j2
    Jdot_nu: np.ndarray  # (3 n_p,)
    errors: np.ndarray  # (n_p, 3) p_j1 - p_j2

    @property
    def n_p(self):
        return self.J_p.shape[0] // 3

    @property
    def drift(self):
        return float(np.linalg.norm(self.errors, axis=1).max()) if len(self.errors) else 0.0


@dataclass
class ContactForces:
    forces: np.ndarray  # (n_c, 3) world-frame force per candidate point
    f_c: np.ndarray  # (3 n_a,) grouped active forces
    loop_forces: np.ndarray  # (n_p, 3)
    problem: QpProblem | None = None
    solution: object = None
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def detect(model, state, ground_height=0.0, cache=None, prev_active=None):
    """Classify each candidate point against the plane z = ground_height."""
    from .kindyn import compute_cache

    if cache is None:
        cache = compute_cache(model, state)
    nc = model.n_c
    nu = state.nu
    pos = np.zeros((nc, 3))
    vel = np.zeros((nc, 3))
    for i in range(nc):
        name = f"contact/{i}"
        pos[i] = cache.frame_transforms[name][:3, 3]
        vel[i] = cache.point_jacobians[name] @ nu
    gaps = pos[:, 2] - ground_height
    status = np.where(gaps <= EPS_GAP, 0, 1)
    act = np.flatnonzero(status == 0)
    if len(act):
        J = np.vstack([cache.point_jacobians[f"contact/{i}"] for i in act])
        Jd = np.concatenate([cache.point_bias_accels[f"contact/{i}"] for i in act])
    else:
        J = np.zeros((0, cache.nv))
        Jd = np.zeros(0)
    return ContactSnapshot(pos, gaps, status, vel, J, Jd,
                           None if prev_active is None else np.asarray(prev_active, dtype=bool),
                           model.friction_mu, model.friction_facets)


def loop_data(model, cache):
    npl = model.n_p
    if npl == 0:
        return LoopData(np.zeros((0, cache.nv)), np.zeros(0), np.zeros((0, 3)))
    J = np.vstack([cache.point_jacobians[f"loop/{j}/1"] - cache.point_jacobians[f"loop/{j}/2"]
                   for j in range(npl)])
    Jd = np.concatenate([cache.point_bias_accels[f"loop/{j}/1"] - cache.point_bias_accels[f"loop/{j}/2"]
                         for j in range(npl)])
    err = np.array([cache.frame_transforms[f"loop/{j}/1"][:3, 3] - cache.frame_transforms[f"loop/{j}/2"][:3, 3]
                    for j in range(npl)])
    return LoopData(J, Jd, err)


def _cone_rows(snapshot, cone):
    na = snapshot.n_active
    if not cone or na == 0:
        return None, None
    A = cone_block(snapshot.mu, snapshot.facets, na, GROUND_NORMAL)
    return A, np.zeros(A.shape[0])


def _penetration_bias(snapshot, dt):
    """Extra normal-row bias pushing penetrating points back out (gap < 0)."""
    gaps = snapshot.active_gaps
    out = np.zeros(3 * len(gaps))
    out[2::3] = BAUMGARTE_BETA * np.minimum(gaps, 0.0) / (dt * dt)
    return out


def assemble_open_chain_qp(cache, snapshot, nu, nu_dot_f, dt, cone=True, penetration=True):
    """H = J_c M^-1 J_c^T,  g = J_c nu_dot_f + Jdot_c nu + J_c nu / dt."""
    J = snapshot.J_c
    MinvJt = cache.solve_mass(J.T)
    H = J @ MinvJt
    H = 0.5 * (H + H.T)
    g = J @ nu_dot_f + snapshot.Jdot_nu + (J @ nu) / dt
    if penetration:
        g = g + _penetration_bias(snapshot, dt)
    A, b = _cone_rows(snapshot, cone)
    return QpProblem(H, g, A, b)


def _loop_factor(G):
    """Regularized Cholesky factor of a loop Gramian."""
    k = G.shape[0]
    rho = LOOP_REG * max(np.trace(G), 0.0) / max(k, 1)
    try:
        return scipy.linalg.cho_factor(G + rho * np.eye(k), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise LoopConstraintError("ill-posed loop constraint: singular loop Gramian") from None


def _loop_terms(cache, loops, J_c):
    """(Gramian factor, J_p M^-1 J_p^T, J_c M^-1 J_p^T) or None without loops."""
    if loops is None or loops.n_p == 0:
        return None
    MinvJpt = cache.solve_mass(loops.J_p.T)
    G = loops.J_p @ MinvJpt
    G = 0.5 * (G + G.T)
    return _loop_factor(G), MinvJpt, J_c @ MinvJpt


def assemble_closed_chain_qp(cache, snapshot, loops, nu, nu_dot_f, dt, cone=True, penetration=True):
    """Contact QP with the loop-closure forces eliminated.

    H = H_open - X G^-1 X^T and g = g_open - X G^-1 (Jdot_p nu + J_p nu_dot_f),
    where X = J_c M^-1 J_p^T and G = J_p M^-1 J_p^T.  Without loops both
    corrections are empty and the open-chain problem is returned unchanged.
    """
    prob = assemble_open_chain_qp(cache, snapshot, nu, nu_dot_f, dt, cone, penetration)
    terms = _loop_terms(cache, loops, snapshot.J_c)
    if terms is None:
        return prob
    fac, _, X = terms
    rhs_p = loops.Jdot_nu + loops.J_p @ nu_dot_f
    GinvXt = scipy.linalg.cho_solve(fac, X.T, check_finite=False)
    H = prob.hessian - X @ GinvXt
    H = 0.5 * (H + H.T)
    g = prob.gradient - X @ scipy.linalg.cho_solve(fac, rhs_p, check_finite=False)
    return QpProblem(H, g, prob.ineq_matrix, prob.ineq_bound)


def recover_loop_forces(cache, loops, f_c, J_c, nu, nu_dot_f):
    """f_p = -G^-1 (Jdot_p nu + J_p nu_dot_f + J_p M^-1 J_c^T f_c)."""
    if loops is None or loops.n_p == 0:
        return np.zeros(0)
    fac, MinvJpt, X = _loop_terms(cache, loops, J_c)
    rhs = loops.Jdot_nu + loops.J_p @ nu_dot_f
    if len(f_c):
        rhs = rhs + X.T @ f_c
    return -scipy.linalg.cho_solve(fac, rhs, check_finite=False)


def normal_rows(n_active):
    return np.arange(n_active) * 3 + 2


def pinned_solve(problem, solver, n_active, force_tol=1e-9):
    """Solve the QP, then pin the normal rows of points that carry load.

    The plain problem lets a loaded point separate whenever a larger normal
    force widens its friction pyramid.  Pinning adds the equality rows
    (H f + g)_n = 0 for every point whose first-pass normal force is positive,
    so loaded points keep zero normal velocity while their tangential force
    stays on the pyramid.  The pinned answer is kept only if the solver reports
    it optimal and it dissipates at least as much as f = 0 does.
    Returns (solution, pinned point indices).
    """
    sol = solver.solve(problem)
    if sol.status != OPTIMAL or n_active == 0:
        return sol, np.zeros(0, dtype=int)
    rows = normal_rows(n_active)
    fn = sol.x[rows]
    scale = max(1.0, float(np.abs(sol.x).max()))
    loaded = np.flatnonzero(fn > force_tol * scale)
    if len(loaded) == 0:
        return sol, loaded
    r = problem.hessian @ sol.x + problem.gradient
    if np.abs(r[rows[loaded]]).max() <= 1e-7 * max(1.0, float(np.abs(problem.gradient).max())):
        return sol, loaded
    E = problem.hessian[rows[loaded]]
    d = -problem.gradient[rows[loaded]]
    pinned = QpProblem(problem.hessian, problem.gradient, problem.ineq_matrix, problem.ineq_bound,
                       E, d)
    psol = solver.solve(pinned)
    if psol.status == OPTIMAL and psol.objective <= 1e-12 * max(1.0, abs(sol.objective)):
        psol.objective = float(problem.objective(psol.x))
        return psol, loaded
    return sol, np.zeros(0, dtype=int)


def compute_contact_forces(model, cache, snapshot, state, tau, dt, solver, loops=None,
                           nu_dot_f=None, external=None, pin_normals=True, cone=True):
    """Solve the contact QP and return per-point and loop-closure forces."""
    from .kindyn import free_acceleration

    nu = state.nu
    if nu_dot_f is None:
        nu_dot_f = free_acceleration(model, state, tau, cache.gravity, cache=cache, external=external)
    if loops is None:
        loops = loop_data(model, cache)
    na = snapshot.n_active
    forces = np.zeros((model.n_c, 3))
    f_c = np.zeros(0)
    problem = sol = None
    pinned = np.zeros(0, dtype=int)
    if na:
        problem = assemble_closed_chain_qp(cache, snapshot, loops, nu, nu_dot_f, dt, cone=cone)
        if pin_normals:
            sol, pinned = pinned_solve(problem, solver, na)
        else:
            sol = solver.solve(problem)
        if sol.status != OPTIMAL:
            raise QpError(f"contact QP failed: {sol.status} (kkt residual {sol.kkt_residual:.3g})",
                          problem, sol)
        f_c = sol.x
        forces[snapshot.active] = f_c.reshape(-1, 3)
    f_p = recover_loop_forces(cache, loops, f_c, snapshot.J_c, nu, nu_dot_f)
    return ContactForces(forces, f_c, f_p.reshape(-1, 3), problem, sol, pinned)
