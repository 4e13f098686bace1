"""Dense convex QPs, friction-pyramid rows and pluggable solver backends.

Problem form::

    minimize    1/2 x^T H x + g^T x
    subject to  A x <= b,   E x = d

The reference backend is a dual active-set method (Goldfarb-Idnani): it starts
from the unconstrained minimizer and adds the most violated constraint each
iteration, dropping any constraint whose multiplier reaches zero, so it needs
no feasible starting point and detects infeasibility exactly.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

KKT_TOL = 1e-6


@dataclass
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    ineq_matrix: np.ndarray = None
    ineq_bound: np.ndarray = None
    eq_matrix: np.ndarray = None
    eq_bound: np.ndarray = None

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        self.gradient = np.asarray(self.gradient, dtype=float).reshape(-1)
        m = self.gradient.size
        if self.ineq_matrix is None:
            self.ineq_matrix = np.zeros((0, m))
            self.ineq_bound = np.zeros(0)
        if self.eq_matrix is None:
            self.eq_matrix = np.zeros((0, m))
            self.eq_bound = np.zeros(0)
        self.ineq_matrix = np.asarray(self.ineq_matrix, dtype=float).reshape(-1, m)
        self.ineq_bound = np.asarray(self.ineq_bound, dtype=float).reshape(-1)
        self.eq_matrix = np.asarray(self.eq_matrix, dtype=float).reshape(-1, m)
        self.eq_bound = np.asarray(self.eq_bound, dtype=float).reshape(-1)

    @property
    def m(self):
        return self.gradient.size

    def validate(self, check_psd=True):
        H = self.hessian
        m = self.m
        if H.shape != (m, m):
            raise ValueError(f"hessian shape {H.shape} does not match gradient length {m}")
        if self.ineq_matrix.shape[0] != self.ineq_bound.size:
            raise ValueError("inequality matrix/bound size mismatch")
        if self.eq_matrix.shape[0] != self.eq_bound.size:
            raise ValueError("equality matrix/bound size mismatch")
        scale = max(np.abs(H).max(), 1.0) if m else 1.0
        if m and np.abs(H - H.T).max() > 1e-9 * scale:
            raise ValueError("hessian is not symmetric")
        if check_psd and m:
            _psd_eigenvalues(H)

    def objective(self, x):
        return 0.5 * x @ self.hessian @ x + self.gradient @ x

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("hessian", "gradient", "ineq_matrix", "ineq_bound", "eq_matrix", "eq_bound")}


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str
    kkt_residual: float
    ineq_multipliers: np.ndarray = None
    eq_multipliers: np.ndarray = None
    active_set: tuple = ()
    iterations: int = 0


class QpError(RuntimeError):
    def __init__(self, message, problem=None, solution=None):
        super().__init__(message)
        self.problem = problem
        self.solution = solution


def kkt_residual(problem, x, lam, nu=None):
    """Largest violation among stationarity, feasibility, dual sign, complementarity.

    Each term is divided by its natural magnitude floored at 1 (|g| for
    stationarity, |b| for feasibility, |lam| |x| for complementarity), so the
    value is the plain absolute residual on unit-scale data and stays
    meaningful for badly scaled contact problems.
    """
    A, b = problem.ineq_matrix, problem.ineq_bound
    E, d = problem.eq_matrix, problem.eq_bound
    x_scale = max(1.0, float(np.abs(x).max(initial=0.0)))
    r = problem.hessian @ x + problem.gradient
    if A.shape[0]:
        r = r + A.T @ lam
    if E.shape[0] and nu is not None:
        r = r + E.T @ nu
    worst = float(np.abs(r).max()) / max(1.0, float(np.abs(problem.gradient).max())) if r.size else 0.0
    if A.shape[0]:
        slack = A @ x - b
        feas = max(1.0, float(np.abs(b).max()))
        lam_scale = max(1.0, float(np.abs(lam).max()))
        worst = max(worst, float(max(slack.max(), 0.0)) / feas, float(max(-lam.min(), 0.0)) / lam_scale,
                    float(np.abs(lam * slack).max()) / (lam_scale * x_scale))
    if E.shape[0]:
        worst = max(worst, float(np.abs(E @ x - d).max()) / max(1.0, float(np.abs(d).max())))
    return worst


# ---------------------------------------------------------------------------
# friction pyramid

def tangent_basis(normal):
    n = np.asarray(normal, dtype=float)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = ref - (ref @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def linearize_cone(mu, facets=4, normal=(0.0, 0.0, 1.0), inscribed=False):
    """Half-space rows D with D @ lam <= 0 approximating ||lam_t|| <= mu lam_n.

    Rows ``t_i - mu n`` for tangents at angles 2 pi i / facets, followed by the
    row ``-n`` (non-negative normal force).  With the default the pyramid's
    faces touch the exact cone (edges along the tangent directions, so a force
    along any t_i saturates at exactly mu lam_n).  ``inscribed=True`` shrinks
    the faces by cos(pi / facets) so the pyramid lies inside the cone.
    ``mu = inf`` means no friction limit: only the unilateral row is kept.
    """
    n = np.asarray(normal, dtype=float)
    nn = np.linalg.norm(n)
    if nn == 0:
        raise ValueError("cone normal must be non-zero")
    if mu < 0:
        raise ValueError("friction coefficient must be non-negative")
    if facets < 4:
        raise ValueError("at least 4 facets required")
    n = n / nn
    if math.isinf(mu):
        return -n[None, :]
    t1, t2 = tangent_basis(n)
    mu_eff = mu * math.cos(math.pi / facets) if inscribed else mu
    rows = np.empty((facets + 1, 3))
    for i in range(facets):
        a = 2.0 * math.pi * i / facets
        t = math.cos(a) * t1 + math.sin(a) * t2
        rows[i] = t - mu_eff * n
    rows[-1] = -n
    return rows


def cone_block(mu, facets, n_points, normal=(0.0, 0.0, 1.0), inscribed=False):
    """Block-diagonal cone rows for `n_points` stacked 3-vectors."""
    return _cone_block(float(mu), int(facets), int(n_points),
                       tuple(float(v) for v in normal), bool(inscribed))


@functools.lru_cache(maxsize=256)
def _cone_block(mu, facets, n_points, normal, inscribed):
    rows = linearize_cone(mu, facets, normal, inscribed)
    k = rows.shape[0]
    A = np.zeros((k * n_points, 3 * n_points))
    for i in range(n_points):
        A[k * i:k * (i + 1), 3 * i:3 * (i + 1)] = rows
    A.flags.writeable = False
    return A


# ---------------------------------------------------------------------------
# solvers

def _psd_eigenvalues(H):
    eig = np.linalg.eigvalsh(0.5 * (H + H.T))
    if eig[0] < -1e-8 * max(abs(eig[0]), abs(eig[-1])):
        raise ValueError("hessian is not positive semidefinite")
    return eig


def _regularized(H):
    """Symmetrized H; a small ridge is added when it is only semidefinite."""
    m = H.shape[0]
    if m == 0:
        return H
    H = 0.5 * (H + H.T)
    eig = _psd_eigenvalues(H)
    if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
        rho = 1e-9 * np.trace(H) / m
        if rho <= 0:
            rho = 1e-9
        H = H + rho * np.eye(m)
    return H


def _independent_rows(N, tol=1e-10):
    """Indices of a maximal independent subset of rows (pivoted QR), ascending."""
    k = N.shape[0]
    if k == 0:
        return []
    if k == 1:
        return [0] if np.abs(N).max() > 0 else []
    _, R, piv = scipy.linalg.qr(N.T, mode="economic", pivoting=True, check_finite=False)
    d = np.abs(np.diag(R))
    rank = int(np.count_nonzero(d > tol * max(1.0, np.abs(N).max())))
    return sorted(int(i) for i in piv[:rank])


class ActiveSetSolver:
    """Dense dual active-set QP solver.

    Keeps the last optimal active set and uses it to warm start the next call;
    the warm start only changes the path, never the optimality test.
    """

    name = "active_set"

    def __init__(self, max_iter=500, tol=1e-10, warm_start=True):
        self.max_iter = max_iter
        self.tol = tol
        self.warm_start = warm_start
        self._last_active = ()

    def reset(self):
        self._last_active = ()

    def solve(self, problem):
        problem.validate(check_psd=False)
        H = _regularized(problem.hessian)
        sol = self._solve(problem, H, self._last_active if self.warm_start else ())
        if sol.status == OPTIMAL:
            self._last_active = sol.active_set
        return sol

    def _solve(self, problem, H, warm):
        g = problem.gradient
        m = g.size
        A, b = problem.ineq_matrix, problem.ineq_bound
        E, d = problem.eq_matrix, problem.eq_bound
        ne, ni = E.shape[0], A.shape[0]
        # constraint normals scaled to unit length for the violation measure
        anorm = np.linalg.norm(A, axis=1) if ni else np.zeros(0)
        anorm[anorm == 0] = 1.0

        # equality-constrained start; redundant equality rows are dropped
        # after checking they are consistent with the kept ones
        keep = _independent_rows(E)
        E_all, d_all = E, d
        if len(keep) < ne:
            E, d = E[keep], d[keep]
            ne = len(keep)
        active = []  # indices into inequality rows
        x, nu, lam = self._eqp(H, g, E, d, A, b, active)
        if x is None or (E_all.shape[0] and np.abs(E_all @ x - d_all).max()
                         > 1e-9 * max(1.0, np.abs(d_all).max())):
            return self._fail(problem, H, INFEASIBLE, np.zeros(m), 0)
        Hchol = np.linalg.cholesky(H) if m else H
        warm = [i for i in warm if i < ni]
        if warm:
            x, nu, lam, active = self._warm(H, g, E, d, A, b, warm, x, nu, lam)

        it = 0
        lam_full = np.zeros(ni)
        while True:
            if ni == 0:
                break
            viol = (A @ x - b) / anorm
            if active:
                viol[active] = -np.inf
            p = int(np.argmax(viol))  # first index among ties
            if viol[p] <= self.tol * max(1.0, abs(b[p]) / anorm[p]):
                break
            # add constraint p, adjusting multipliers along the way
            t_p = 0.0
            while True:
                it += 1
                if it > self.max_iter:
                    return self._finish(problem, x, lam, nu, active, MAX_ITER, it)
                z, r = self._direction(H, E, A, active, A[p])
                ap_z = A[p] @ z
                # r holds (equality multipliers, active inequality multipliers)
                r_in = r[ne:]
                cand = [(lam[k] / -r_in[k], k) for k in range(len(active)) if r_in[k] < -1e-14]
                t1, k1 = min(cand) if cand else (np.inf, -1)
                w = np.linalg.solve(Hchol, A[p])
                dependent = -ap_z <= 1e-12 * (w @ w)
                if dependent:
                    if k1 < 0:
                        return self._fail(problem, H, INFEASIBLE, x, it)
                    t = t1
                else:
                    t2 = -(A[p] @ x - b[p]) / ap_z
                    t = min(t1, t2)
                    x = x + t * z
                nu = nu + t * r[:ne]
                lam = lam + t * r_in
                t_p += t
                if not dependent and t2 <= t1:
                    active.append(p)
                    lam = np.append(lam, t_p)
                    break
                # drop the constraint whose multiplier hit zero
                del active[k1]
                lam = np.delete(lam, k1)
        return self._finish(problem, x, lam, nu, active, OPTIMAL, it)

    @staticmethod
    def _kkt_matrix(H, E, A, active):
        N = np.vstack([E, A[active]]) if active else E
        k = N.shape[0]
        m = H.shape[0]
        K = np.zeros((m + k, m + k))
        K[:m, :m] = H
        K[:m, m:] = N.T
        K[m:, :m] = N
        return K, N

    def _eqp(self, H, g, E, d, A, b, active):
        m = g.size
        K, N = self._kkt_matrix(H, E, A, active)
        rhs = np.concatenate([-g, d, b[active]]) if active else np.concatenate([-g, d])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if np.abs(N @ sol[:m] - rhs[m:]).max(initial=0.0) > 1e-9 * max(1.0, np.abs(rhs).max()):
                return None, None, None
        ne = E.shape[0]
        # K [x; y] = [-g; rhs]  <=>  H x + g + N^T y = 0
        y = sol[m:]
        return sol[:m], y[:ne], y[ne:]

    def _direction(self, H, E, A, active, ap):
        m = H.shape[0]
        K, _ = self._kkt_matrix(H, E, A, active)
        rhs = np.zeros(K.shape[0])
        rhs[:m] = -ap
        sol = np.linalg.solve(K, rhs)
        return sol[:m], sol[m:]

    def _warm(self, H, g, E, d, A, b, warm, x0, nu0, lam0):
        """Start from a previous active set, dropping the most negative multiplier
        (lowest index on ties) until the start is dual feasible."""
        active = sorted(set(warm))
        ne = E.shape[0]
        if ne + len(active) > H.shape[0] or len(_independent_rows(np.vstack([E, A[active]]))) < ne + len(active):
            # keep rows linearly independent together with the equalities
            keep = []
            for i in active:
                if len(_independent_rows(np.vstack([E, A[keep + [i]]]))) == ne + len(keep) + 1:
                    keep.append(i)
            active = keep
        while active:
            x, nu, lam = self._eqp(H, g, E, d, A, b, active)
            if x is None:
                active.pop()
                continue
            if lam.min() >= 0:
                return x, nu, lam, active
            worst = min(range(len(active)), key=lambda k: (lam[k], active[k]))
            del active[worst]
        return x0, nu0, lam0, []

    def _finish(self, problem, x, lam_active, nu, active, status, it):
        ni = problem.ineq_matrix.shape[0]
        lam = np.zeros(ni)
        for k, i in enumerate(active):
            lam[i] = lam_active[k]
        if nu is not None and nu.size < problem.eq_matrix.shape[0]:
            full = np.zeros(problem.eq_matrix.shape[0])
            full[_independent_rows(problem.eq_matrix)] = nu
            nu = full
        res = kkt_residual(problem, x, lam, nu)
        if status == OPTIMAL and res > KKT_TOL:
            status = MAX_ITER
        return QpSolution(x, float(problem.objective(x)), status, res, lam, nu,
                          tuple(sorted(active)), it)

    def _fail(self, problem, H, status, x, it):
        return QpSolution(x, float(problem.objective(x)), status, math.inf,
                          np.zeros(problem.ineq_matrix.shape[0]),
                          np.zeros(problem.eq_matrix.shape[0]), (), it)


class OsqpSolver:
    """Alternate backend wrapping OSQP (optional dependency)."""

    name = "osqp"

    def __init__(self, eps=1e-10, max_iter=200000):
        import osqp  # noqa: F401  # fail early when missing

        self.eps = eps
        self.max_iter = max_iter

    def reset(self):
        pass

    def solve(self, problem):
        import osqp
        import scipy.sparse as sp

        problem.validate(check_psd=False)
        m = problem.m
        H = _regularized(problem.hessian)
        A = np.vstack([problem.ineq_matrix, problem.eq_matrix])
        lo = np.concatenate([np.full(problem.ineq_bound.size, -np.inf), problem.eq_bound])
        hi = np.concatenate([problem.ineq_bound, problem.eq_bound])
        if A.shape[0] == 0:
            A = np.zeros((1, m))
            lo, hi = np.array([-np.inf]), np.array([np.inf])
        solver = osqp.OSQP()
        solver.setup(P=sp.csc_matrix(np.triu(H)), q=problem.gradient, A=sp.csc_matrix(A), l=lo, u=hi,
                     eps_abs=self.eps, eps_rel=self.eps, max_iter=self.max_iter, polishing=True,
                     verbose=False)
        res = solver.solve(raise_error=False)
        status_val = str(res.info.status).lower()
        if "infeasible" in status_val:
            x = np.zeros(m)
            return QpSolution(x, float(problem.objective(x)), INFEASIBLE, math.inf)
        x = np.asarray(res.x, dtype=float)
        y = np.asarray(res.y, dtype=float)
        ni = problem.ineq_bound.size
        lam = np.maximum(y[:ni], 0.0) if ni else np.zeros(0)
        nu = y[ni:ni + problem.eq_bound.size]
        kkt = kkt_residual(problem, x, lam, nu)
        status = OPTIMAL if "solved" in status_val else MAX_ITER
        return QpSolution(x, float(problem.objective(x)), status, kkt, lam, nu)


SOLVERS = {"active_set": ActiveSetSolver, "osqp": OsqpSolver}


def make_solver(name="active_set", **kwargs):
    try:
        cls = SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown QP solver '{name}' (choices: {sorted(SOLVERS)})") from None
    return cls(**kwargs)


def solve(problem, solver=None):
    """Solve with `solver` (a backend instance) or a fresh reference solver."""
    return (solver or ActiveSetSolver(warm_start=False)).solve(problem)
