"""Programmatic URDF/sidecar builders for the reference models.

Each builder returns ``(urdf_text, sidecar_text)`` so that tests and scripts go
through the same parsing path as files on disk.  ``build(name)`` parses them.
"""
import json
import math

import numpy as np

from .model import SimState, load_sidecar, parse_urdf


def box_inertia(m, sx, sy, sz):
    return (m * (sy * sy + sz * sz) / 12.0, m * (sx * sx + sz * sz) / 12.0,
            m * (sx * sx + sy * sy) / 12.0)


def rod_inertia(m, length, radius=0.01):
    """Thin rod along local x."""
    ixx = 0.5 * m * radius * radius
    it = m * (3 * radius * radius + length * length) / 12.0
    return ixx, it, it


def _f(v):
    return " ".join(repr(float(x)) for x in v)


def _link(name, mass, com=(0, 0, 0), diag=(1, 1, 1)):
    return (f'  <link name="{name}">\n'
            f'    <inertial>\n'
            f'      <origin xyz="{_f(com)}" rpy="0 0 0"/>\n'
            f'      <mass value="{mass!r}"/>\n'
            f'      <inertia ixx="{diag[0]!r}" ixy="0" ixz="0" iyy="{diag[1]!r}" iyz="0" izz="{diag[2]!r}"/>\n'
            f'    </inertial>\n'
            f'  </link>\n')


def _joint(name, parent, child, xyz=(0, 0, 0), axis=(0, 1, 0), jtype="continuous", rpy=(0, 0, 0)):
    out = (f'  <joint name="{name}" type="{jtype}">\n'
           f'    <parent link="{parent}"/>\n'
           f'    <child link="{child}"/>\n'
           f'    <origin xyz="{_f(xyz)}" rpy="{_f(rpy)}"/>\n'
           f'    <axis xyz="{_f(axis)}"/>\n')
    if jtype in ("revolute", "prismatic"):
        out += '    <limit lower="-3.0" upper="3.0" effort="100" velocity="10"/>\n'
    return out + '  </joint>\n'


def _robot(name, body):
    return f'<?xml version="1.0"?>\n<robot name="{name}">\n{body}</robot>\n'


def _sidecar(base, contacts=(), loops=(), mu=0.5, facets=4, fixed_base=False):
    return json.dumps({
        "base_link": base,
        "fixed_base": fixed_base,
        "contact_points": [{"link": lk, "offset": list(map(float, off))} for lk, off in contacts],
        "loop_closures": [{"frame1": {"link": a, "offset": list(map(float, oa))},
                           "frame2": {"link": b, "offset": list(map(float, ob))}}
                          for a, oa, b, ob in loops],
        "friction": {"mu": mu, "facets": facets},
    }, indent=2)


def point_mass(mass=1.0, radius=0.01, mu=0.5):
    """Small sphere with a single contact point at its centre."""
    i = 0.4 * mass * radius * radius
    urdf = _robot("point_mass", _link("body", mass, diag=(i, i, i)))
    return urdf, _sidecar("body", [("body", (0, 0, 0))], mu=mu)


def cube(mass=1.0, side=0.1, mu=0.5, facets=4):
    """Cube with the four bottom corners as contact points (origin at the centre)."""
    urdf = _robot("cube", _link("box", mass, diag=box_inertia(mass, side, side, side)))
    h = side / 2
    corners = [("box", (sx * h, sy * h, -h)) for sx in (1, -1) for sy in (1, -1)]
    return urdf, _sidecar("box", corners, mu=mu, facets=facets)


def block(mass=1.0, size=(0.2, 0.2, 0.1), mu=0.5):
    """Flat box: four bottom corners as contact points."""
    sx, sy, sz = size
    urdf = _robot("block", _link("block", mass, diag=box_inertia(mass, sx, sy, sz)))
    corners = [("block", (a * sx / 2, b * sy / 2, -sz / 2)) for a in (1, -1) for b in (1, -1)]
    return urdf, _sidecar("block", corners, mu=mu)


def pendulum(length=1.0, mass=1.0, bob_inertia=1e-12):
    """Fixed-base simple pendulum swinging about the pivot's y axis; bob hangs along -z."""
    body = (_link("pivot", 1.0, diag=(1e-3, 1e-3, 1e-3))
            + _link("bob", mass, com=(0, 0, -length), diag=(bob_inertia,) * 3)
            + _joint("hinge", "pivot", "bob", axis=(0, 1, 0)))
    return _robot("pendulum", body), _sidecar("pivot", fixed_base=True)


def arm6(n_contacts=2):
    """Free-floating torso carrying a 6-joint serial arm with assorted axes."""
    axes = [(0, 0, 1), (0, 1, 0), (0, 1, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    offsets = [(0.1, 0.05, 0.2), (0, 0, 0.1), (0.3, 0, 0), (0.25, 0.02, 0), (0.1, 0, 0), (0.05, 0, 0.03)]
    body = _link("torso", 5.0, com=(0.01, -0.02, 0.03), diag=box_inertia(5.0, 0.3, 0.2, 0.4))
    parent = "torso"
    for i, (ax, off) in enumerate(zip(axes, offsets)):
        name = f"l{i + 1}"
        m = 1.5 - 0.2 * i
        body += _link(name, m, com=(0.1, 0.01 * i, -0.01), diag=(0.01 + 0.002 * i, 0.02, 0.015))
        body += _joint(f"j{i + 1}", parent, name, xyz=off, axis=ax, jtype="revolute",
                       rpy=(0.1 * i, -0.05 * i, 0.07 * i))
        parent = name
    contacts = [("l6", (0.1, 0, 0)), ("torso", (0.15, 0.1, -0.2)), ("l3", (0.2, 0, 0))][:n_contacts]
    return _robot("arm6", body), _sidecar("torso", contacts)


# planar four-bar in the xz plane, all hinges about y.  A link's local x axis
# points along the bar; a hinge angle phi turns x to (cos phi, 0, -sin phi).
FOUR_BAR = dict(ground=0.4, crank=0.12, coupler=0.38, rocker=0.3, mass=0.5)


def _bar_dir(phi):
    return np.array([math.cos(phi), 0.0, -math.sin(phi)])


def four_bar(fixed_base=True, geometry=None):
    """Crank-rocker four-bar; the ground bar is the base link.

    Tree: ground -> crank -> coupler, ground -> rocker; the coupler tip is cut
    from the rocker tip by a loop closure.
    """
    g = dict(FOUR_BAR, **(geometry or {}))
    m = g["mass"]
    body = (_link("ground", 2.0, com=(g["ground"] / 2, 0, 0), diag=rod_inertia(2.0, g["ground"]))
            + _link("crank", m, com=(g["crank"] / 2, 0, 0), diag=rod_inertia(m, g["crank"]))
            + _link("coupler", m, com=(g["coupler"] / 2, 0, 0), diag=rod_inertia(m, g["coupler"]))
            + _link("rocker", m, com=(g["rocker"] / 2, 0, 0), diag=rod_inertia(m, g["rocker"]))
            + _joint("j_crank", "ground", "crank")
            + _joint("j_coupler", "crank", "coupler", xyz=(g["crank"], 0, 0))
            + _joint("j_rocker", "ground", "rocker", xyz=(g["ground"], 0, 0)))
    loops = [("coupler", (g["coupler"], 0, 0), "rocker", (g["rocker"], 0, 0))]
    return _robot("four_bar", body), _sidecar("ground", loops=loops, fixed_base=fixed_base)


def four_bar_closure(theta, geometry=None, branch=1):
    """Joint angles (crank, coupler-relative, rocker) closing the loop at crank angle theta."""
    g = dict(FOUR_BAR, **(geometry or {}))
    a, b, c, d = g["crank"], g["coupler"], g["rocker"], g["ground"]
    # planar coords (x, y) with y = -z so that phi is the usual CCW angle
    B = np.array([a * math.cos(theta), a * math.sin(theta)])
    D = np.array([d, 0.0])
    BD = D - B
    L = np.linalg.norm(BD)
    if L > b + c or L < abs(b - c):
        raise ValueError("four-bar cannot close at this crank angle")
    x = (b * b - c * c + L * L) / (2 * L)
    hgt = math.sqrt(max(b * b - x * x, 0.0))
    u = BD / L
    perp = np.array([-u[1], u[0]])
    C = B + x * u + branch * hgt * perp
    phi_coupler = math.atan2(C[1] - B[1], C[0] - B[0])
    phi_rocker = math.atan2(C[1] - D[1], C[0] - D[0])
    return np.array([theta, phi_coupler - theta, phi_rocker])


def walker(feet_width=0.1, torso=0.2, foot=0.4, leg=0.35, mu=0.8):
    """Floating trapezoid four-bar: torso on top, two legs, a foot bar below.

    Contact points at both ends of the foot bar, duplicated at +/- feet_width/2
    in y when feet_width > 0 so that the walker cannot roll over.
    """
    mt, ml, mf = 2.0, 0.5, 0.5
    # leg1 hangs from torso origin A, leg2 from D = (torso, 0, 0); foot spans B -> C
    body = (_link("torso", mt, com=(torso / 2, 0, 0), diag=rod_inertia(mt, torso, 0.03))
            + _link("leg1", ml, com=(leg / 2, 0, 0), diag=rod_inertia(ml, leg))
            + _link("leg2", ml, com=(leg / 2, 0, 0), diag=rod_inertia(ml, leg))
            + _link("foot", mf, com=(foot / 2, 0, 0), diag=rod_inertia(mf, foot, 0.02))
            + _joint("hip1", "torso", "leg1")
            + _joint("hip2", "torso", "leg2", xyz=(torso, 0, 0))
            + _joint("ankle", "leg1", "foot", xyz=(leg, 0, 0)))
    if feet_width > 0:
        w = feet_width / 2
        contacts = [("foot", (0, w, 0)), ("foot", (0, -w, 0)),
                    ("foot", (foot, w, 0)), ("foot", (foot, -w, 0))]
    else:
        contacts = [("foot", (0, 0, 0)), ("foot", (foot, 0, 0))]
    loops = [("foot", (foot, 0, 0), "leg2", (leg, 0, 0))]
    return _robot("walker", body), _sidecar("torso", contacts, loops, mu=mu)


def walker_standing_state(height=0.0, torso=0.2, foot=0.4, leg=0.35):
    """Symmetric closed configuration with the foot bar level at z = height."""
    # legs splay outward: leg1 from A down-left, leg2 from D down-right
    dx = (foot - torso) / 2
    dz = math.sqrt(leg * leg - dx * dx)
    phi1 = math.atan2(dz, -dx)  # direction (-dx, -dz): cos=-dx/leg, -sin=-dz/leg
    phi2 = math.atan2(dz, dx)
    s = np.array([phi1, phi2, -phi1])  # ankle brings the foot back to horizontal
    st = SimState.zeros(3)
    st.base_position = np.array([0.0, 0.0, height + dz])
    st.joint_positions = s
    return st


def quadruped():
    """12-DoF quadruped: hip roll, hip pitch and knee per leg, point feet."""
    mt = 8.0
    body = _link("trunk", mt, diag=box_inertia(mt, 0.5, 0.3, 0.15))
    contacts = []
    for leg, (sx, sy) in {"fl": (1, 1), "fr": (1, -1), "hl": (-1, 1), "hr": (-1, -1)}.items():
        body += _link(f"{leg}_hip", 0.6, diag=(5e-4, 5e-4, 5e-4))
        body += _link(f"{leg}_thigh", 1.0, com=(0, 0, -0.1), diag=(4e-3, 4e-3, 5e-4))
        body += _link(f"{leg}_shank", 0.3, com=(0, 0, -0.1), diag=(1.5e-3, 1.5e-3, 2e-4))
        body += _joint(f"{leg}_hip_roll", "trunk", f"{leg}_hip", xyz=(sx * 0.22, sy * 0.12, 0),
                       axis=(1, 0, 0), jtype="revolute")
        body += _joint(f"{leg}_hip_pitch", f"{leg}_hip", f"{leg}_thigh", xyz=(0, sy * 0.05, 0),
                       axis=(0, 1, 0), jtype="revolute")
        body += _joint(f"{leg}_knee", f"{leg}_thigh", f"{leg}_shank", xyz=(0, 0, -0.2),
                       axis=(0, 1, 0), jtype="revolute")
        contacts.append((f"{leg}_shank", (0, 0, -0.2)))
    return _robot("quadruped", body), _sidecar("trunk", contacts, mu=0.8)


BUILDERS = {
    "point_mass": point_mass,
    "cube": cube,
    "block": block,
    "pendulum": pendulum,
    "arm6": arm6,
    "four_bar": four_bar,
    "walker": walker,
    "quadruped": quadruped,
}


def build(name, **kwargs):
    urdf, side = BUILDERS[name](**kwargs)
    return load_sidecar(parse_urdf(urdf), side)


def random_state(model, rng, scale=1.0):
    """Random pose/velocity for property tests."""
    from scipy.spatial.transform import Rotation

    n = model.n
    st = SimState.zeros(n)
    if not model.fixed_base:
        st.base_position = rng.normal(size=3) * scale
        st.base_rotation = Rotation.random(random_state=rng).as_matrix()
        st.base_linear_velocity = rng.normal(size=3) * scale
        st.base_angular_velocity = rng.normal(size=3) * scale
    st.joint_positions = rng.uniform(-math.pi, math.pi, size=n)
    st.joint_velocities = rng.normal(size=n) * scale
    return st
