"""Inelastic impacts: velocity jumps when contact points hit the ground.

Two resolutions are provided.  The projector maps the pre-impact velocity onto
the manifold J nu = 0 (frictionless, bilateral).  The impulse QP solves for
contact impulses inside the friction pyramids, with loop closures eliminated
as in the contact QP, so points may keep sliding after touchdown.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .contact import _cone_rows, _loop_terms, pinned_solve
from .qp import OPTIMAL, QpError, QpProblem

EPS_V = 1e-7  # inbound normal speed that counts as an impact [m/s]
DELASSUS_REG = 1e-10


@dataclass
class ImpulseResult:
    post_velocity: np.ndarray
    contact_impulses: np.ndarray  # (3 n_a,) grouped
    loop_impulses: np.ndarray  # (3 n_p,)
    problem: QpProblem | None = None
    solution: object = None

    def per_point(self, snapshot, n_c):
        out = np.zeros((n_c, 3))
        out[snapshot.active] = self.contact_impulses.reshape(-1, 3)
        return out


def _delassus_factor(D):
    """Cholesky factor of D; Tikhonov-regularized only when D is (near) singular,
    e.g. for redundant rows of coplanar contact points."""
    k = D.shape[0]
    rho = DELASSUS_REG * max(np.trace(D), 0.0) / max(k, 1)
    try:
        fac = scipy.linalg.cho_factor(D, lower=True, check_finite=False)
        piv = np.diag(fac[0]) ** 2
        if piv.min() > 1e3 * rho:
            return fac
    except np.linalg.LinAlgError:
        pass
    return scipy.linalg.cho_factor(D + rho * np.eye(k), lower=True, check_finite=False)


def projector(cache, J):
    """N = I - M^-1 J^T (J M^-1 J^T)^-1 J."""
    MinvJt = cache.solve_mass(J.T)
    D = J @ MinvJt
    fac = _delassus_factor(0.5 * (D + D.T))
    return np.eye(cache.nv) - MinvJt @ scipy.linalg.cho_solve(fac, J, check_finite=False)


def resolve_impact_projector(cache, J, nu_minus):
    """Frictionless inelastic impact on the stacked contact Jacobian J."""
    if J.shape[0] == 0:
        return ImpulseResult(np.array(nu_minus, dtype=float), np.zeros(0), np.zeros(0))
    MinvJt = cache.solve_mass(J.T)
    D = J @ MinvJt
    try:
        fac = _delassus_factor(0.5 * (D + D.T))
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular Delassus matrix") from None
    F = -scipy.linalg.cho_solve(fac, J @ nu_minus, check_finite=False)
    return ImpulseResult(nu_minus + MinvJt @ F, F, np.zeros(0))


def assemble_impact_qp(cache, snapshot, loops, nu_minus, cone=True):
    """H = J_c M^-1 (I - J_p^T G^-1 J_p M^-1) J_c^T,  g = J_c (I - M^-1 J_p^T G^-1 J_p) nu^-."""
    J = snapshot.J_c
    MinvJt = cache.solve_mass(J.T)
    H = J @ MinvJt
    g = J @ nu_minus
    terms = _loop_terms(cache, loops, J)
    if terms is not None:
        fac, _, X = terms
        H = H - X @ scipy.linalg.cho_solve(fac, X.T, check_finite=False)
        g = g - X @ scipy.linalg.cho_solve(fac, loops.J_p @ nu_minus, check_finite=False)
    H = 0.5 * (H + H.T)
    A, b = _cone_rows(snapshot, cone)
    return QpProblem(H, g, A, b)


def resolve_impact_qp(cache, snapshot, loops, nu_minus, solver, cone=True, pin_normals=True):
    """Impulses from the impact QP; loop impulses and post-impact velocity recovered after.

    ``cone=False`` drops every pyramid row (bilateral, frictionless test mode).
    """
    nu_minus = np.asarray(nu_minus, dtype=float)
    J = snapshot.J_c
    na = snapshot.n_active
    if na == 0:
        return ImpulseResult(nu_minus.copy(), np.zeros(0), np.zeros(0))
    problem = assemble_impact_qp(cache, snapshot, loops, nu_minus, cone)
    if pin_normals and cone:
        sol, _ = pinned_solve(problem, solver, na)
    else:
        sol = solver.solve(problem)
    if sol.status != OPTIMAL:
        raise QpError(f"impact QP failed: {sol.status}", problem, sol)
    F_c = sol.x
    impulse = J.T @ F_c
    F_p = np.zeros(0)
    terms = _loop_terms(cache, loops, J)
    if terms is not None:
        fac, _, X = terms
        F_p = -scipy.linalg.cho_solve(fac, X.T @ F_c + loops.J_p @ nu_minus, check_finite=False)
        impulse = impulse + loops.J_p.T @ F_p
    nu_plus = nu_minus + cache.solve_mass(impulse)
    return ImpulseResult(nu_plus, F_c, F_p, problem, sol)


def detect_new_impacts(prev_active, snapshot, eps_v=EPS_V):
    """(impact?, indices of all active points).

    An impact occurs when some point switched from airborne to touching while
    moving into the ground faster than eps_v.  Every active point takes part
    in the resolution, not just the new ones.
    """
    active = snapshot.active
    if prev_active is None:
        prev_active = np.zeros(len(snapshot.status), dtype=bool)
    prev_active = np.asarray(prev_active, dtype=bool)
    new = (snapshot.status == 0) & ~prev_active
    inbound = snapshot.velocities[:, 2] < -eps_v
    return bool(np.any(new & inbound)), active
