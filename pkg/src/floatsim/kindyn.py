"""Kinematics and dynamics of a floating-base tree in mixed velocity coordinates.

All spatial quantities are expressed in the world frame at the world origin,
which keeps the recursions free of frame transforms.  The generalized velocity
is nu = (base linear velocity, base angular velocity, joint rates) with both
base velocities in the inertial frame.

Mass matrix: composite-rigid-body accumulation.  Bias forces: recursive
Newton-Euler with zero acceleration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .spatial import (_I3, cross, cross_force, cross_motion, rot_axis_angle, rpy_to_matrix, skew,
                      spatial_inertia)

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class Kinematics:
    """World poses, spatial velocities and velocity-product accelerations."""

    R: list  # per link 3x3
    p: list  # per link origin
    S: np.ndarray  # (n, 6) world motion subspace per dof
    V: list  # per link spatial velocity
    A0: list  # per link spatial acceleration with nu_dot = 0, no gravity
    S_base: np.ndarray  # (6, 6)


def _joint_origin(j):
    cache = j.__dict__.get("_origin_T")
    if cache is None:
        cache = (rpy_to_matrix(j.origin_rpy), np.asarray(j.origin_xyz, dtype=float),
                 np.asarray(j.axis, dtype=float))
        object.__setattr__(j, "_origin_T", cache)
    return cache


def base_subspace(p_base):
    S = np.zeros((6, 6))
    S[3:, :3] = _I3
    S[:3, 3:] = _I3
    S[3:, 3:] = skew(p_base)
    return S


def kinematics(model, state, with_velocity=True):
    topo = model.topology
    nl = len(model.links)
    n = model.n
    R = [None] * nl
    p = [None] * nl
    S = np.zeros((n, 6))
    b = model.link_index[model.base_link]
    R[b] = np.asarray(state.base_rotation, dtype=float)
    p[b] = np.asarray(state.base_position, dtype=float)
    s = state.joint_positions
    for k in topo.order:
        if k == b:
            continue
        j = model.joints[topo.joint[k]]
        Ro, xyz, axis = _joint_origin(j)
        pk = topo.parent[k]
        RJ = R[pk] @ Ro
        pJ = p[pk] + R[pk] @ xyz
        if j.type == "revolute":
            a = RJ @ axis
            R[k] = RJ @ rot_axis_angle(axis, s[j.index])
            p[k] = pJ
            S[j.index, :3] = a
            S[j.index, 3:] = cross(pJ, a)
        elif j.type == "prismatic":
            a = RJ @ axis
            R[k] = RJ
            p[k] = pJ + a * s[j.index]
            S[j.index, 3:] = a
        else:
            R[k] = RJ
            p[k] = pJ
    Sb = base_subspace(p[b])
    V = A0 = None
    if with_velocity:
        V = [None] * nl
        A0 = [None] * nl
        vb, wb = state.base_linear_velocity, state.base_angular_velocity
        V[b] = np.concatenate([wb, vb + cross(p[b], wb)])
        A0[b] = np.concatenate([np.zeros(3), cross(vb, wb)])
        sd = state.joint_velocities
        for k in topo.order:
            if k == b:
                continue
            j = model.joints[topo.joint[k]]
            pk = topo.parent[k]
            if j.movable:
                Sj = S[j.index]
                V[k] = V[pk] + Sj * sd[j.index]
                A0[k] = A0[pk] + cross_motion(V[k], Sj) * sd[j.index]
            else:
                V[k] = V[pk]
                A0[k] = A0[pk]
    return Kinematics(R, p, S, V, A0, Sb)


def _link_spatial_inertias(model, kin):
    out = []
    for k, lk in enumerate(model.links):
        if not lk.has_inertial:
            out.append(None)
            continue
        Rk = kin.R[k]
        c = kin.p[k] + Rk @ lk.com
        out.append(spatial_inertia(lk.mass, c, Rk @ lk.inertia @ Rk.T))
    return out


def _frame_point(model, kin, link, offset):
    k = model.link_index[link]
    return k, kin.p[k] + kin.R[k] @ np.asarray(offset, dtype=float)


def forward_kinematics(model, state):
    """Homogeneous world transforms of links, contact points and loop frames.

    Keys: link names, ``contact/<i>``, ``loop/<j>/1`` and ``loop/<j>/2``.
    Point frames inherit the orientation of their host link.
    """
    state.check(model)
    kin = kinematics(model, state, with_velocity=False)
    return _transforms(model, kin)


def _transforms(model, kin):
    out = {}

    def H(R, p):
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = p
        return T

    for k, lk in enumerate(model.links):
        out[lk.name] = H(kin.R[k], kin.p[k])
    for name, link, off in _point_frames(model):
        k, x = _frame_point(model, kin, link, off)
        out[name] = H(kin.R[k], x)
    return out


def _point_frames(model):
    for i, cp in enumerate(model.contact_points):
        yield f"contact/{i}", cp.link, cp.offset
    for j, lc in enumerate(model.loop_closures):
        yield f"loop/{j}/1", lc.link1, lc.offset1
        yield f"loop/{j}/2", lc.link2, lc.offset2


def _resolve_point(model, point):
    """Accept a frame name or a (link, offset) pair."""
    if isinstance(point, str):
        for name, link, off in _point_frames(model):
            if name == point:
                return link, off
        if point in model.link_index:
            return point, np.zeros(3)
        raise KeyError(f"unknown point '{point}'")
    link, off = point
    if link not in model.link_index:
        raise KeyError(f"unknown link '{link}'")
    return link, off


def _jacobian(model, kin, k, x):
    n = model.n
    J = np.zeros((3, n + 6))
    J[:, :3] = _I3
    J[:, 3:6] = -skew(x - kin.p[model.link_index[model.base_link]])
    idx = model.topology.dof_ancestors[k]
    if len(idx):
        Sa = kin.S[idx]
        J[:, 6 + idx] = (Sa[:, 3:] + Sa[:, :3] @ skew(x)).T
    return J


def _bias_accel(kin, k, x):
    V, A = kin.V[k], kin.A0[k]
    w = V[:3]
    vx = V[3:] + cross(w, x)
    return A[3:] + cross(A[:3], x) + cross(w, vx)


def point_jacobian(model, state, point):
    """3 x (n+6) linear Jacobian of a point; `point` is a frame name or (link, offset)."""
    link, off = _resolve_point(model, point)
    kin = kinematics(model, state, with_velocity=False)
    k, x = _frame_point(model, kin, link, off)
    return _jacobian(model, kin, k, x)


def point_bias_accel(model, state, point):
    """J_dot nu: the point acceleration produced when nu_dot = 0 (gravity excluded)."""
    link, off = _resolve_point(model, point)
    kin = kinematics(model, state)
    k, x = _frame_point(model, kin, link, off)
    return _bias_accel(kin, k, x)


def _composite_mass_matrix(model, kin, Ilink):
    topo = model.topology
    n = model.n
    nl = len(model.links)
    Ic = [I.copy() if I is not None else np.zeros((6, 6)) for I in Ilink]
    for k in reversed(topo.order):
        pk = topo.parent[k]
        if pk >= 0:
            Ic[pk] += Ic[k]
    M = np.zeros((n + 6, n + 6))
    Sb = kin.S_base
    for i in range(n):
        k = topo.dof_link[i]
        F = Ic[k] @ kin.S[i]
        M[6 + i, 6 + i] = kin.S[i] @ F
        anc = topo.dof_ancestors[k]
        for j in anc[:-1]:
            M[6 + i, 6 + j] = M[6 + j, 6 + i] = kin.S[j] @ F
        M[:6, 6 + i] = M[6 + i, :6] = Sb.T @ F
    b = model.link_index[model.base_link]
    M[:6, :6] = Sb.T @ Ic[b] @ Sb
    del nl
    return M


def _rnea(model, kin, Ilink, gravity, nu_dot=None):
    """Generalized forces for acceleration `nu_dot` (zero when None)."""
    topo = model.topology
    n = model.n
    nl = len(model.links)
    ag = np.concatenate([np.zeros(3), -np.asarray(gravity, dtype=float)])
    b = model.link_index[model.base_link]
    A = [None] * nl
    if nu_dot is None:
        for k in topo.order:
            A[k] = kin.A0[k] + ag
    else:
        A[b] = kin.A0[b] + ag + kin.S_base @ nu_dot[:6]
        for k in topo.order:
            if k == b:
                continue
            j = model.joints[topo.joint[k]]
            pk = topo.parent[k]
            # A0 already holds the velocity-product terms of the whole path
            A[k] = A[pk] + (kin.A0[k] - kin.A0[pk])
            if j.movable:
                A[k] = A[k] + kin.S[j.index] * nu_dot[6 + j.index]
    F = [np.zeros(6) for _ in range(nl)]
    for k in topo.order:
        I = Ilink[k]
        if I is not None:
            F[k] = I @ A[k] + cross_force(kin.V[k], I @ kin.V[k])
    tau = np.zeros(n + 6)
    for k in reversed(topo.order):
        pk = topo.parent[k]
        if pk >= 0:
            j = model.joints[topo.joint[k]]
            if j.movable:
                tau[6 + j.index] = kin.S[j.index] @ F[k]
            F[pk] = F[pk] + F[k]
    tau[:6] = kin.S_base.T @ F[b]
    return tau


def mass_matrix(model, state):
    kin = kinematics(model, state, with_velocity=False)
    M = _composite_mass_matrix(model, kin, _link_spatial_inertias(model, kin))
    return M


def bias_forces(model, state, gravity=DEFAULT_GRAVITY):
    """h = C + G via Newton-Euler with zero acceleration."""
    kin = kinematics(model, state)
    return _rnea(model, kin, _link_spatial_inertias(model, kin), gravity)


def inverse_dynamics(model, state, nu_dot, gravity=DEFAULT_GRAVITY):
    """Generalized force M nu_dot + h (base part: force and torque about the base origin)."""
    kin = kinematics(model, state)
    return _rnea(model, kin, _link_spatial_inertias(model, kin), gravity,
                 np.asarray(nu_dot, dtype=float))


def selector_torque(model, tau):
    out = np.zeros(model.n + 6)
    out[6:] = tau
    return out


@dataclass
class KinDynCache:
    """Every kinematic/dynamic quantity of one state."""

    mass_matrix: np.ndarray
    bias_forces: np.ndarray
    gravity: np.ndarray
    frame_transforms: dict
    point_jacobians: dict
    point_bias_accels: dict
    fixed_base: bool = False
    potential_energy: float = 0.0
    _chol: tuple | None = field(default=None, repr=False)

    @property
    def nv(self):
        return self.mass_matrix.shape[0]

    def cholesky(self):
        if self._chol is None:
            M = self.mass_matrix[6:, 6:] if self.fixed_base else self.mass_matrix
            try:
                self._chol = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(
                    f"mass matrix is not positive definite ({exc}); check link inertias") from None
            if not np.all(np.diag(self._chol[0]) > 0):
                raise np.linalg.LinAlgError("mass matrix is not positive definite")
        return self._chol

    def solve_mass(self, rhs):
        """M^-1 rhs.  With a fixed base the base rows are pinned to zero."""
        chol = self.cholesky()
        if not self.fixed_base:
            return scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        out = np.zeros_like(rhs, dtype=float)
        out[6:] = scipy.linalg.cho_solve(chol, rhs[6:], check_finite=False)
        return out

    def jacobian(self, name):
        return self.point_jacobians[name]

    def bias_accel(self, name):
        return self.point_bias_accels[name]


def compute_cache(model, state, gravity=DEFAULT_GRAVITY):
    """Evaluate M, h, transforms, and the Jacobian data of all contact/loop frames."""
    state.check(model)
    gravity = np.asarray(gravity, dtype=float)
    kin = kinematics(model, state)
    Ilink = _link_spatial_inertias(model, kin)
    M = _composite_mass_matrix(model, kin, Ilink)
    h = _rnea(model, kin, Ilink, gravity)
    jac, bias = {}, {}
    for name, link, off in _point_frames(model):
        k, x = _frame_point(model, kin, link, off)
        jac[name] = _jacobian(model, kin, k, x)
        bias[name] = _bias_accel(kin, k, x)
    return KinDynCache(M, h, gravity, _transforms(model, kin), jac, bias,
                       fixed_base=model.fixed_base,
                       potential_energy=_potential(model, kin, gravity))


def free_acceleration(model, state, tau, gravity=DEFAULT_GRAVITY, cache=None, external=None):
    """nu_dot_f = M^-1 (S tau - h); `external` is an optional generalized force."""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (model.n,) or not np.all(np.isfinite(tau)):
        raise ValueError(f"tau must be a finite vector of length {model.n}")
    if cache is None:
        cache = compute_cache(model, state, gravity)
    rhs = selector_torque(model, tau) - cache.bias_forces
    if external is not None:
        rhs = rhs + external
    return cache.solve_mass(rhs)


def kinetic_energy(model, state, M=None):
    nu = state.nu
    if M is None:
        M = mass_matrix(model, state)
    return 0.5 * nu @ M @ nu


def potential_energy(model, state, gravity=DEFAULT_GRAVITY):
    return _potential(model, kinematics(model, state, with_velocity=False), gravity)


def _potential(model, kin, gravity):
    g = np.asarray(gravity, dtype=float)
    out = 0.0
    for k, lk in enumerate(model.links):
        if lk.has_inertial:
            out -= lk.mass * g @ (kin.p[k] + kin.R[k] @ lk.com)
    return out


def link_com_velocities(model, state):
    """Per-link (COM velocity, angular velocity, world COM inertia) from kinematics only."""
    kin = kinematics(model, state)
    out = []
    for k, lk in enumerate(model.links):
        c = kin.p[k] + kin.R[k] @ lk.com
        w = kin.V[k][:3]
        v = kin.V[k][3:] + cross(w, c)
        out.append((lk.mass, v, w, kin.R[k] @ lk.inertia @ kin.R[k].T))
    return out
