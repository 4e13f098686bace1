"""Reference solutions that do not use the package's dynamics.

Each oracle here is written from first principles (planar geometry,
Lagrangian mechanics, projected gradient) so agreement with the simulator is
evidence and not a tautology.
"""
import math

import numpy as np
from scipy.integrate import solve_ivp


# ---------------------------------------------------------------------------
# fixed-base four-bar in minimal coordinates (crank angle)

def fourbar_angles(theta, a, b, c, d, branch=1):
    """Absolute angles (crank, coupler, rocker) in the x-(-z) plane."""
    bx, by = a * math.cos(theta), a * math.sin(theta)
    ex, ey = d - bx, -by
    L = math.hypot(ex, ey)
    x = (b * b - c * c + L * L) / (2 * L)
    h = math.sqrt(max(b * b - x * x, 0.0))
    ux, uy = ex / L, ey / L
    cx = bx + x * ux - branch * h * uy
    cy = by + x * uy + branch * h * ux
    return theta, math.atan2(cy - by, cx - bx), math.atan2(cy, cx - d)


class FourBarOracle:
    """1-DoF Lagrangian: m(theta) theta_dd + m'(theta)/2 theta_d^2 + V'(theta) = 0.

    The closure geometry is differentiated symbolically, so the right-hand side
    is smooth and the tight ODE tolerances are meaningful.
    """

    def __init__(self, a, b, c, d, mass, radius=0.01, g=9.81, branch=1):
        import sympy as sp

        th = sp.Symbol("theta")
        bx, by = a * sp.cos(th), a * sp.sin(th)
        ex, ey = d - bx, -by
        L = sp.sqrt(ex ** 2 + ey ** 2)
        x = (b * b - c * c + L ** 2) / (2 * L)
        h = sp.sqrt(b * b - x ** 2)
        ux, uy = ex / L, ey / L
        cx = bx + x * ux - branch * h * uy
        cy = by + x * uy + branch * h * ux
        p2 = sp.atan2(cy - by, cx - bx)
        p3 = sp.atan2(cy, cx - d)
        # planar (x, y) with y = -z
        coms = [(bx / 2, by / 2), (bx + (cx - bx) / 2, by + (cy - by) / 2),
                (d + (cx - d) / 2, cy / 2)]
        angles = [th, p2, p3]
        inertia = [mass * (3 * radius * radius + l * l) / 12.0 for l in (a, b, c)]
        m = sum(mass * (sp.diff(cxi, th) ** 2 + sp.diff(cyi, th) ** 2) for cxi, cyi in coms)
        m = m + sum(I * sp.diff(phi, th) ** 2 for I, phi in zip(inertia, angles))
        V = sum(mass * g * (-cyi) for _, cyi in coms)
        self.generalized_mass = sp.lambdify(th, m, "math")
        self.potential = sp.lambdify(th, V, "math")
        self._dm = sp.lambdify(th, sp.diff(m, th), "math")
        self._dV = sp.lambdify(th, sp.diff(V, th), "math")
        self._angles = sp.lambdify(th, angles, "math")

    def angles(self, theta):
        return np.array(self._angles(theta), dtype=float)

    def energy(self, theta, theta_dot):
        return 0.5 * self.generalized_mass(theta) * theta_dot ** 2 + self.potential(theta)

    def rhs(self, t, y):
        th, thd = y
        return [thd, -(0.5 * self._dm(th) * thd * thd + self._dV(th)) / self.generalized_mass(th)]

    def simulate(self, theta0, t_eval, theta_dot0=0.0):
        sol = solve_ivp(self.rhs, (t_eval[0], t_eval[-1]), [theta0, theta_dot0], t_eval=t_eval,
                        method="DOP853", rtol=1e-11, atol=1e-12)
        return sol.y[0]


# ---------------------------------------------------------------------------
# dense QP reference: accelerated projected gradient on the dual

def dual_projected_gradient(H, g, A, b, iters=1_000_000, tol=1e-12):
    """min 1/2 x'Hx + g'x s.t. Ax <= b, H positive definite.

    Dual: max_{lam >= 0} -1/2 (g + A'lam)' H^-1 (g + A'lam) - b'lam, solved by
    FISTA with restarts; stops when the duality gap falls below tol.
    """
    Hinv = np.linalg.inv(H)
    Q = A @ Hinv @ A.T
    c = A @ Hinv @ g + b
    L = max(np.linalg.eigvalsh(0.5 * (Q + Q.T))[-1], 1e-12)
    lam = np.zeros(A.shape[0])
    y = lam.copy()
    tk = 1.0
    best = None
    for k in range(iters):
        lam_new = np.maximum(y - (Q @ y + c) / L, 0.0)
        if (lam_new - lam) @ (y - lam_new) > 0:  # restart on non-monotone step
            tk = 1.0
            y = lam_new
        else:
            tn = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
            y = lam_new + ((tk - 1) / tn) * (lam_new - lam)
            tk = tn
        lam = lam_new
        if k % 200 == 0:
            x = -Hinv @ (g + A.T @ lam)
            primal = 0.5 * x @ H @ x + g @ x
            dual = -0.5 * (g + A.T @ lam) @ Hinv @ (g + A.T @ lam) - b @ lam
            viol = max(float((A @ x - b).max()), 0.0)
            best = x, primal
            if primal - dual <= tol * max(1.0, abs(primal)) and viol <= 1e-9:
                break
    return best


def random_qp(rng, m, k, degenerate=False):
    """Feasible dense QP: H = B B^T + ridge, rows A with b = A x0 + slack >= 0.

    `degenerate` zeroes some slacks so several rows are active at x0.
    """
    B = rng.normal(size=(m, m))
    H = B @ B.T + 0.1 * np.eye(m)
    g = rng.normal(size=m) * 3
    A = rng.normal(size=(k, m))
    x0 = rng.normal(size=m)
    slack = rng.uniform(0, 1, size=k)
    if degenerate:
        slack[rng.random(k) < 0.3] = 0.0
    return H, g, A, A @ x0 + slack


def infeasible_qp(rng, m, k):
    """Random rows plus a pair a x <= -1, -a x <= -1 that no point satisfies."""
    H, g, A, b = random_qp(rng, m, k)
    a = rng.normal(size=m)
    return H, g, np.vstack([A, a, -a]), np.concatenate([b, [-1.0, -1.0]])
