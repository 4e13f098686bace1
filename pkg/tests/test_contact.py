import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from floatsim import contact, fleet, kindyn
from floatsim.contact import (LoopConstraintError, LoopData, assemble_closed_chain_qp,
                              assemble_open_chain_qp, compute_contact_forces, detect, loop_data,
                              recover_loop_forces)
from floatsim.model import SimState
from floatsim.qp import ActiveSetSolver

from conftest import model

DT = 1e-3
G = 9.81


def resting(name, z, **kw):
    m = model(name, **kw)
    s = SimState.zeros(m.n)
    s.base_position = np.array([0.0, 0.0, z])
    return m, s


def solve_forces(m, s, ground=0.0, external=None, tau=None):
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, ground, cache)
    tau = np.zeros(m.n) if tau is None else tau
    rhs = kindyn.selector_torque(m, tau) - cache.bias_forces
    if external is not None:
        rhs = rhs + external
    ndf = cache.solve_mass(rhs)
    out = compute_contact_forces(m, cache, snap, s, tau, DT, ActiveSetSolver(), nu_dot_f=ndf)
    return cache, snap, ndf, out


# ---------------------------------------------------------------------------
# detection

def test_detect_airborne():
    m, s = resting("cube", 1.0)
    snap = detect(m, s)
    assert np.all(snap.status == 1)
    assert snap.J_c.shape == (0, 6)
    np.testing.assert_allclose(snap.gaps, 0.95, atol=1e-15)


def test_detect_single_touch():
    m, s = resting("point_mass", 0.0)
    snap = detect(m, s)
    assert snap.active.tolist() == [0]
    np.testing.assert_array_equal(snap.J_c, kindyn.point_jacobian(m, s, "contact/0"))


@pytest.mark.parametrize("gap, active", [(-1e-4, True), (1e-6, True), (2e-6, False)])
def test_detect_tolerance_band(gap, active):
    m, s = resting("point_mass", gap)
    assert bool(detect(m, s).status[0] == 0) is active


def test_detect_ground_height():
    m, s = resting("cube", 0.55)
    assert detect(m, s, ground_height=0.5).n_active == 4


# ---------------------------------------------------------------------------
# assembly

def test_hessian_block_form(rng):
    m = model("arm6")
    s = fleet.random_state(m, rng)
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, ground_height=100.0, cache=cache)
    assert snap.n_active == 2
    prob = assemble_open_chain_qp(cache, snap, s.nu, np.zeros(m.nv), DT)
    Minv = np.linalg.inv(cache.mass_matrix)
    for i in range(2):
        for j in range(2):
            Ji, Jj = (kindyn.point_jacobian(m, s, f"contact/{k}") for k in (i, j))
            np.testing.assert_allclose(prob.hessian[3 * i:3 * i + 3, 3 * j:3 * j + 3],
                                       Ji @ Minv @ Jj.T, atol=1e-10)


def test_gradient_terms(rng):
    m = model("arm6")
    s = fleet.random_state(m, rng)
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, ground_height=100.0, cache=cache)
    ndf = rng.normal(size=m.nv)
    prob = assemble_open_chain_qp(cache, snap, s.nu, ndf, DT, penetration=False)
    np.testing.assert_allclose(prob.gradient, snap.J_c @ ndf + snap.Jdot_nu + snap.J_c @ s.nu / DT,
                               rtol=1e-12)


def test_penetration_bias_only_below_ground():
    m, s = resting("cube", 0.05 - 1e-3)
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, cache=cache)
    a = assemble_open_chain_qp(cache, snap, s.nu, np.zeros(6), DT)
    b = assemble_open_chain_qp(cache, snap, s.nu, np.zeros(6), DT, penetration=False)
    d = a.gradient - b.gradient
    np.testing.assert_allclose(d[2::3], contact.BAUMGARTE_BETA * -1e-3 / DT**2, rtol=1e-9)
    np.testing.assert_array_equal(d[0::3], 0)


@pytest.mark.parametrize("name", ["cube", "arm6", "quadruped"])
def test_closed_equals_open_without_loops(name, rng):
    m = model(name)
    s = fleet.random_state(m, rng)
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, ground_height=100.0, cache=cache)
    ndf = rng.normal(size=m.nv)
    a = assemble_open_chain_qp(cache, snap, s.nu, ndf, DT)
    b = assemble_closed_chain_qp(cache, snap, loop_data(m, cache), s.nu, ndf, DT)
    for k in ("hessian", "gradient", "ineq_matrix", "ineq_bound"):
        assert np.array_equal(getattr(a, k), getattr(b, k))


def test_orthogonal_loop_rows_leave_hessian(rng):
    m = model("arm6")
    s = fleet.random_state(m, rng)
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, ground_height=100.0, cache=cache)
    # rows Y with J_c M^-1 Y^T = 0: Y^T = M Z, Z spanning null(J_c)
    Z = scipy.linalg.null_space(snap.J_c)[:, :3]
    loops = LoopData((cache.mass_matrix @ Z).T, rng.normal(size=3), np.zeros((1, 3)))
    a = assemble_open_chain_qp(cache, snap, s.nu, np.zeros(m.nv), DT)
    b = assemble_closed_chain_qp(cache, snap, loops, s.nu, np.zeros(m.nv), DT)
    assert np.abs(a.hessian - b.hessian).max() <= 1e-9
    assert np.abs(a.gradient - b.gradient).max() <= 1e-9 * max(1, np.abs(a.gradient).max())


def test_singular_loop_gramian(rng):
    m = model("arm6")
    s = fleet.random_state(m, rng)
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, ground_height=100.0, cache=cache)
    loops = LoopData(np.zeros((3, m.nv)), np.zeros(3), np.zeros((1, 3)))
    with pytest.raises(LoopConstraintError, match="ill-posed loop constraint"):
        assemble_closed_chain_qp(cache, snap, loops, s.nu, np.zeros(m.nv), DT)


# ---------------------------------------------------------------------------
# forces

def test_static_cube_force_balance():
    m, s = resting("cube", 0.05)
    _, _, _, out = solve_forces(m, s)
    fn = out.forces[:, 2]
    assert abs(fn.sum() - G) <= 1e-6
    np.testing.assert_allclose(fn, G / 4, atol=1e-6)
    np.testing.assert_allclose(out.forces[:, :2].sum(0), 0, atol=1e-9)


def test_point_mass_sticks_under_small_push():
    m, s = resting("point_mass", 0.0)
    ext = np.zeros(6)
    ext[0] = 0.3 * G
    cache, snap, ndf, out = solve_forces(m, s, external=ext)
    np.testing.assert_allclose(out.forces[0], [-0.3 * G, 0, G], atol=1e-9)


def test_block_slides_under_large_push():
    mu = 0.5
    m, s = resting("block", 0.05)
    ext = np.zeros(6)
    ext[0] = 2 * mu * G
    cache, snap, ndf, out = solve_forces(m, s, external=ext)
    f = out.forces
    assert abs(np.linalg.norm(f[:, :2].sum(0)) - mu * f[:, 2].sum()) <= 1e-6
    nd = cache.solve_mass(ext - cache.bias_forces + snap.J_c.T @ out.f_c)
    assert nd[0] > 0.5 * mu * G


def test_airborne_loop_forces_still_computed():
    m = model("four_bar")
    s = SimState.zeros(m.n)
    s.joint_positions = fleet.four_bar_closure(0.8)
    cache, snap, ndf, out = solve_forces(m, s)
    assert np.all(out.forces == 0)
    assert np.abs(out.loop_forces).max() > 0.1


def loop_row_residual(cache, loops, nu, ndf, J_c, f_c, f_p):
    gen = cache.mass_matrix @ ndf + J_c.T @ f_c + loops.J_p.T @ f_p
    nd = cache.solve_mass(gen)
    return np.abs(loops.J_p @ nd + loops.Jdot_nu).max()


def test_recover_static_four_bar():
    m = model("four_bar")
    s = SimState.zeros(m.n)
    s.joint_positions = fleet.four_bar_closure(1.2)
    cache = kindyn.compute_cache(m, s)
    loops = loop_data(m, cache)
    ndf = cache.solve_mass(-cache.bias_forces)
    f_p = recover_loop_forces(cache, loops, np.zeros(0), np.zeros((0, m.nv)), s.nu, ndf)
    assert loop_row_residual(cache, loops, s.nu, ndf, np.zeros((0, m.nv)), np.zeros(0), f_p) <= 1e-8


def test_recover_without_loops():
    m, s = resting("cube", 0.05)
    cache = kindyn.compute_cache(m, s)
    assert recover_loop_forces(cache, loop_data(m, cache), np.zeros(0), np.zeros((0, 6)),
                               s.nu, np.zeros(6)).size == 0


@pytest.mark.parametrize("seed", range(5))
def test_recover_random_state(seed):
    rng = np.random.default_rng(seed)
    m = model("walker")
    s = fleet.random_state(m, rng)
    cache = kindyn.compute_cache(m, s)
    snap = detect(m, s, ground_height=100.0, cache=cache)
    loops = loop_data(m, cache)
    ndf = cache.solve_mass(-cache.bias_forces)
    f_c = rng.normal(size=snap.J_c.shape[0])
    f_p = recover_loop_forces(cache, loops, f_c, snap.J_c, s.nu, ndf)
    assert loop_row_residual(cache, loops, s.nu, ndf, snap.J_c, f_c, f_p) <= 1e-8


def test_walker_standing_on_two_points():
    m = model("walker", feet_width=0.0)
    s = fleet.walker_standing_state()
    cache, snap, ndf, out = solve_forces(m, s)
    assert snap.n_active == 2
    loops = loop_data(m, cache)
    nd = cache.solve_mass(cache.mass_matrix @ ndf + snap.J_c.T @ out.f_c
                          + loops.J_p.T @ out.loop_forces.reshape(-1))
    assert np.abs(loops.J_p @ nd + loops.Jdot_nu).max() <= 1e-6
    assert np.abs(snap.J_c @ nd + snap.Jdot_nu + snap.J_c @ s.nu / DT).max() <= 1e-6
    assert abs(out.forces[:, 2].sum() - m.total_mass * G) <= 1e-6


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=40)
def test_complementarity_cone_and_dissipation(seed):
    rng = np.random.default_rng(seed)
    m = model("quadruped")
    s = fleet.random_state(m, rng, scale=0.5)
    cache = kindyn.compute_cache(m, s)
    z = np.array([cache.frame_transforms[f"contact/{i}"][2, 3] for i in range(m.n_c)])
    ground = float(np.median(z))
    cache, snap, ndf, out = solve_forces(m, s, ground=ground)
    off = snap.status == 1
    assert np.all(out.forces[off] == 0)
    if snap.n_active:
        prob = out.problem
        scale = max(1.0, np.abs(out.f_c).max())
        assert (prob.ineq_matrix @ out.f_c - prob.ineq_bound).max() <= 1e-8 * scale
        assert out.forces[:, 2].min() >= -1e-8 * scale
        assert prob.objective(out.f_c) <= 1e-9 * scale
