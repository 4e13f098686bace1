"""Robot description: links, joints, contact points and loop closures.

Models are read from a subset of URDF plus a JSON sidecar that carries what
URDF cannot express (contact points, loop closures, friction).
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .spatial import _I3, rpy_to_matrix

log = logging.getLogger(__name__)

JOINT_TYPES = ("revolute", "prismatic", "fixed")
# URDF elements that carry no dynamics; dropped with a warning
_IGNORED_LINK_TAGS = {"visual", "collision"}
_IGNORED_ROBOT_TAGS = {"transmission", "gazebo", "material"}
_IGNORED_JOINT_TAGS = {"dynamics", "mimic", "safety_controller", "calibration"}


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


class ModelError(ValueError):
    """Raised when a model description is malformed or violates an invariant."""

    def __init__(self, violations):
        if isinstance(violations, Violation):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))

    @property
    def codes(self):
        return [v.code for v in self.violations]


def _eq_fields(a, b):
    if type(a) is not type(b):
        return NotImplemented
    for f in dataclasses.fields(a):
        if not f.compare:
            continue
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if not np.array_equal(np.asarray(x), np.asarray(y)):
                return False
        elif x != y:
            return False
    return True


def _vec(values, n=3):
    out = np.array(values, dtype=float).reshape(n)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    mass: float
    com: np.ndarray  # in link frame [m]
    inertia: np.ndarray  # about COM, link-frame axes [kg m^2]
    has_inertial: bool = True

    __eq__ = _eq_fields


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    axis: np.ndarray  # in the joint frame, as in URDF
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    lower: float | None = None
    upper: float | None = None
    index: int = -1  # position in s, -1 for fixed joints

    __eq__ = _eq_fields

    @property
    def movable(self):
        return self.type != "fixed"


@dataclass(frozen=True, eq=False)
class ContactPoint:
    link: str
    offset: np.ndarray

    __eq__ = _eq_fields


@dataclass(frozen=True, eq=False)
class LoopClosure:
    """Cut point of a closed chain: the two imprints must coincide."""

    link1: str
    offset1: np.ndarray
    link2: str
    offset2: np.ndarray

    __eq__ = _eq_fields


@dataclass(frozen=True)
class Topology:
    order: tuple  # link indices, parents first
    parent: tuple  # parent link index per link, -1 for the base
    joint: tuple  # index of the joint whose child is this link, -1 for the base
    dof_ancestors: tuple  # per link: int array of s-indices of movable joints on the path
    dof_joint: tuple  # joint index of each s-index
    dof_link: tuple  # child link index of each s-index


@dataclass(frozen=True, eq=False)
class RobotModel:
    name: str
    links: tuple
    joints: tuple
    base_link: str
    contact_points: tuple = ()
    loop_closures: tuple = ()
    friction_mu: float = 0.5
    friction_facets: int = 4
    fixed_base: bool = False
    parse_warnings: tuple = field(default=(), compare=False)

    __eq__ = _eq_fields

    @property
    def n(self):
        return sum(1 for j in self.joints if j.movable)

    @property
    def nv(self):
        return self.n + 6

    @property
    def n_c(self):
        return len(self.contact_points)

    @property
    def n_p(self):
        return len(self.loop_closures)

    @cached_property
    def link_index(self):
        return {lk.name: i for i, lk in enumerate(self.links)}

    @cached_property
    def total_mass(self):
        return float(sum(lk.mass for lk in self.links))

    @cached_property
    def topology(self):
        idx = self.link_index
        nl = len(self.links)
        parent = [-1] * nl
        joint_of = [-1] * nl
        children = [[] for _ in range(nl)]
        for ji, j in enumerate(self.joints):
            c, p = idx[j.child], idx[j.parent]
            parent[c] = p
            joint_of[c] = ji
            children[p].append(c)
        order = []
        stack = [idx[self.base_link]]
        while stack:
            k = stack.pop(0)
            order.append(k)
            stack.extend(children[k])
        anc = [None] * nl
        for k in order:
            if parent[k] < 0:
                anc[k] = np.zeros(0, dtype=int)
                continue
            j = self.joints[joint_of[k]]
            prev = anc[parent[k]]
            anc[k] = np.append(prev, j.index) if j.movable else prev
        dof_joint = [0] * self.n
        dof_link = [0] * self.n
        for ji, j in enumerate(self.joints):
            if j.movable:
                dof_joint[j.index] = ji
                dof_link[j.index] = idx[j.child]
        return Topology(tuple(order), tuple(parent), tuple(joint_of), tuple(anc),
                        tuple(dof_joint), tuple(dof_link))

    def joint_limit_violations(self, s, tol=0.0):
        """Names of joints whose position lies outside [lower, upper].
        Limits are diagnostic only; the dynamics never enforce them."""
        out = []
        for j in self.joints:
            if not j.movable or j.lower is None or j.upper is None:
                continue
            v = s[j.index]
            if v < j.lower - tol or v > j.upper + tol:
                out.append(j.name)
        return out


@dataclass(eq=False)
class SimState:
    """Generalized coordinates and mixed-representation velocity.

    nu = (base linear velocity, base angular velocity, joint velocities), all
    base quantities in the inertial frame.
    """

    base_position: np.ndarray
    base_rotation: np.ndarray
    joint_positions: np.ndarray
    base_linear_velocity: np.ndarray
    base_angular_velocity: np.ndarray
    joint_velocities: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(3), np.eye(3), np.zeros(n), np.zeros(3), np.zeros(3), np.zeros(n))

    @classmethod
    def from_vectors(cls, base_position, base_rotation, s, nu):
        nu = np.asarray(nu, dtype=float)
        return cls(np.array(base_position, dtype=float), np.array(base_rotation, dtype=float),
                   np.array(s, dtype=float), nu[:3].copy(), nu[3:6].copy(), nu[6:].copy())

    @property
    def nu(self):
        return np.concatenate([self.base_linear_velocity, self.base_angular_velocity,
                               self.joint_velocities])

    def with_velocity(self, nu):
        return SimState(self.base_position, self.base_rotation, self.joint_positions,
                        nu[:3].copy(), nu[3:6].copy(), nu[6:].copy())

    def copy(self):
        return SimState(*(np.array(getattr(self, f.name)) for f in dataclasses.fields(self)))

    def check(self, model):
        n = model.n
        if self.joint_positions.shape != (n,) or self.joint_velocities.shape != (n,):
            raise ValueError(f"state joint vectors must have length n={n}")
        if self.base_rotation.shape != (3, 3):
            raise ValueError("base_rotation must be 3x3")
        R = self.base_rotation
        if (np.abs(R.T @ R - _I3).max() > 1e-9
                or abs(np.linalg.det(R) - 1.0) > 1e-9):
            raise ValueError("base_rotation is not a proper rotation")


# ---------------------------------------------------------------------------
# validation

def validate_model(model):
    """Return the list of invariant violations (empty when valid)."""
    out = []
    names = [lk.name for lk in model.links]
    seen = set()
    for nm in names:
        if nm in seen:
            out.append(Violation("duplicate name", f"link '{nm}' defined twice"))
        seen.add(nm)
    jn = set()
    for j in model.joints:
        if j.name in jn:
            out.append(Violation("duplicate name", f"joint '{j.name}' defined twice"))
        jn.add(j.name)
    out += _tree_violations(model)
    for lk in model.links:
        if not lk.has_inertial:
            continue
        if not (lk.mass > 0) or not math.isfinite(lk.mass):
            out.append(Violation("mass > 0", f"link '{lk.name}' has mass {lk.mass}"))
        inertia = np.asarray(lk.inertia)
        if not np.all(np.isfinite(inertia)) or np.abs(inertia - inertia.T).max() > 1e-12 * max(1.0, np.abs(inertia).max()):
            out.append(Violation("inertia symmetric", f"link '{lk.name}' inertia not symmetric"))
        elif np.linalg.eigvalsh(inertia).min() <= 0:
            out.append(Violation("inertia PD", f"link '{lk.name}' inertia not positive definite"))
    for j in model.joints:
        if j.type not in JOINT_TYPES:
            out.append(Violation("joint type", f"joint '{j.name}' has unsupported type '{j.type}'"))
        if j.movable and abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
            out.append(Violation("unit axis", f"joint '{j.name}' axis {list(j.axis)} is not unit norm"))
        if j.lower is not None and j.upper is not None and j.lower > j.upper:
            out.append(Violation("limits", f"joint '{j.name}' has lower > upper"))
    if not out:
        out += _inertial_violations(model)
    nameset = set(names)
    if model.base_link not in nameset:
        out.append(Violation("unknown link", f"base link '{model.base_link}' not in model"))
    for i, cp in enumerate(model.contact_points):
        if cp.link not in nameset:
            out.append(Violation("unknown link", f"contact point {i} references unknown link '{cp.link}'"))
    for i, lc in enumerate(model.loop_closures):
        for ln in (lc.link1, lc.link2):
            if ln not in nameset:
                out.append(Violation("unknown link", f"loop closure {i} references unknown link '{ln}'"))
    if not (model.friction_mu >= 0):
        out.append(Violation("mu >= 0", f"friction coefficient {model.friction_mu} is negative"))
    if int(model.friction_facets) != model.friction_facets or model.friction_facets < 4:
        out.append(Violation("facets >= 4", f"friction facets {model.friction_facets} < 4"))
    return out


def _tree_violations(model):
    names = {lk.name for lk in model.links}
    out = []
    child_of = {}
    for j in model.joints:
        for end in (j.parent, j.child):
            if end not in names:
                out.append(Violation("unknown link", f"joint '{j.name}' references unknown link '{end}'"))
        if j.child in child_of:
            out.append(Violation("tree", f"joint graph not a tree: link '{j.child}' has two parent joints"))
        child_of[j.child] = j.parent
    if out:
        return out
    roots = [nm for nm in (lk.name for lk in model.links) if nm not in child_of]
    if len(roots) != 1:
        return [Violation("tree", f"joint graph not a tree: {len(roots)} root links {roots}")]
    # every link must reach the root without revisiting
    for nm in names:
        cur, hops = nm, 0
        while cur in child_of:
            cur = child_of[cur]
            hops += 1
            if hops > len(names):
                return [Violation("tree", "joint graph not a tree: cycle detected")]
    if model.base_link in names and roots[0] != model.base_link:
        out.append(Violation("tree", f"base link '{model.base_link}' is not the tree root '{roots[0]}'"))
    return out


def _inertial_violations(model):
    """Each rigid group (links welded by fixed joints) that moves must carry mass."""
    idx = model.link_index
    joint_of_child = {j.child: j for j in model.joints}
    group_mass = {}
    for lk in model.links:
        cur = lk.name
        while cur in joint_of_child and not joint_of_child[cur].movable:
            cur = joint_of_child[cur].parent
        group_mass[cur] = group_mass.get(cur, 0.0) + (lk.mass if lk.has_inertial else 0.0)
    out = []
    for root, m in group_mass.items():
        if m > 0:
            continue
        if root == model.base_link and model.fixed_base:
            continue
        if not model.links[idx[root]].has_inertial:
            out.append(Violation("missing inertial", f"link '{root}' has no inertial and moves freely"))
    return out


def check_model(model):
    v = validate_model(model)
    if v:
        raise ModelError(v)
    return model


# ---------------------------------------------------------------------------
# URDF

def _floats(text, n, default):
    if text is None:
        return list(default)
    vals = [float(t) for t in text.split()]
    if len(vals) != n:
        raise ValueError(f"expected {n} numbers, got '{text}'")
    return vals


def _origin(elem):
    o = elem.find("origin") if elem is not None else None
    if o is None:
        return [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]
    return _floats(o.get("xyz"), 3, (0, 0, 0)), _floats(o.get("rpy"), 3, (0, 0, 0))


def parse_urdf(text):
    """Parse the supported URDF subset into a model without contacts or loops.

    Visual/collision geometry, transmissions and similar tags are ignored and
    reported in ``model.parse_warnings``.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ModelError(Violation("xml", f"malformed XML: {exc}")) from None
    if root.tag != "robot":
        raise ModelError(Violation("xml", f"root element is <{root.tag}>, expected <robot>"))
    warnings = []
    links, joints = [], []
    errors = []
    for child in root:
        if child.tag in _IGNORED_ROBOT_TAGS:
            warnings.append(f"ignored <{child.tag}>")
        elif child.tag not in ("link", "joint"):
            warnings.append(f"ignored unknown element <{child.tag}>")
    try:
        for le in root.findall("link"):
            links.append(_parse_link(le, warnings))
        dof = 0
        for je in root.findall("joint"):
            j = _parse_joint(je, warnings, errors)
            if j is None:
                continue
            if j.movable:
                j = dataclasses.replace(j, index=dof)
                dof += 1
            joints.append(j)
    except (ValueError, TypeError) as exc:
        raise ModelError(Violation("xml", f"bad attribute value: {exc}")) from None
    if errors:
        raise ModelError(errors)
    if not links:
        raise ModelError(Violation("tree", "robot has no links"))
    child_names = {j.child for j in joints}
    roots = [lk.name for lk in links if lk.name not in child_names]
    base = roots[0] if len(roots) == 1 else (roots[0] if roots else links[0].name)
    model = RobotModel(name=root.get("name", "robot"), links=tuple(links), joints=tuple(joints),
                       base_link=base, parse_warnings=tuple(warnings))
    check_model(model)
    for w in warnings:
        log.warning("urdf: %s", w)
    return model


def _parse_link(le, warnings):
    name = le.get("name")
    if not name:
        raise ValueError("link without a name")
    for c in le:
        if c.tag in _IGNORED_LINK_TAGS:
            warnings.append(f"ignored <{c.tag}> in link '{name}'")
        elif c.tag != "inertial":
            warnings.append(f"ignored unknown element <{c.tag}> in link '{name}'")
    ie = le.find("inertial")
    if ie is None:
        return Link(name, 0.0, _vec([0, 0, 0]), _vec(np.zeros((3, 3)), (3, 3)), has_inertial=False)
    xyz, rpy = _origin(ie)
    me = ie.find("mass")
    mass = float(me.get("value")) if me is not None else 0.0
    te = ie.find("inertia")
    vals = {k: 0.0 for k in ("ixx", "ixy", "ixz", "iyy", "iyz", "izz")}
    if te is not None:
        for k in vals:
            if te.get(k) is not None:
                vals[k] = float(te.get(k))
    inertia = np.array([[vals["ixx"], vals["ixy"], vals["ixz"]],
                        [vals["ixy"], vals["iyy"], vals["iyz"]],
                        [vals["ixz"], vals["iyz"], vals["izz"]]])
    if any(rpy):
        R = rpy_to_matrix(rpy)
        inertia = R @ inertia @ R.T
        inertia = 0.5 * (inertia + inertia.T)
    return Link(name, mass, _vec(xyz), _vec(inertia, (3, 3)))


def _parse_joint(je, warnings, errors):
    name = je.get("name")
    jtype = je.get("type")
    if jtype == "continuous":
        jtype = "revolute"
        continuous = True
    else:
        continuous = False
    if jtype in ("floating", "planar", "spherical"):
        errors.append(Violation("joint type", f"joint '{name}' of type '{jtype}' is not a 1-DoF joint"))
        return None
    if jtype not in JOINT_TYPES:
        errors.append(Violation("joint type", f"joint '{name}' has unknown type '{jtype}'"))
        return None
    pe, ce = je.find("parent"), je.find("child")
    if pe is None or ce is None:
        errors.append(Violation("xml", f"joint '{name}' lacks parent or child"))
        return None
    for c in je:
        if c.tag in _IGNORED_JOINT_TAGS:
            warnings.append(f"ignored <{c.tag}> in joint '{name}'")
    xyz, rpy = _origin(je)
    ae = je.find("axis")
    axis = _floats(ae.get("xyz") if ae is not None else None, 3, (1, 0, 0))
    lower = upper = None
    le = je.find("limit")
    if jtype != "fixed" and not continuous and le is not None:
        lower = float(le.get("lower", 0.0))
        upper = float(le.get("upper", 0.0))
    return Joint(name, jtype, pe.get("link"), ce.get("link"), _vec(axis), _vec(xyz), _vec(rpy),
                 lower, upper)


def _fmt(v):
    return " ".join(repr(float(x)) for x in v)


def to_urdf(model):
    """Serialize links and joints back to URDF text."""
    root = ET.Element("robot", name=model.name)
    for lk in model.links:
        le = ET.SubElement(root, "link", name=lk.name)
        if not lk.has_inertial:
            continue
        ie = ET.SubElement(le, "inertial")
        ET.SubElement(ie, "origin", xyz=_fmt(lk.com), rpy="0.0 0.0 0.0")
        ET.SubElement(ie, "mass", value=repr(float(lk.mass)))
        I = lk.inertia
        ET.SubElement(ie, "inertia", ixx=repr(float(I[0, 0])), ixy=repr(float(I[0, 1])),
                      ixz=repr(float(I[0, 2])), iyy=repr(float(I[1, 1])),
                      iyz=repr(float(I[1, 2])), izz=repr(float(I[2, 2])))
    for j in model.joints:
        jtype = j.type
        if jtype == "revolute" and j.lower is None:
            jtype = "continuous"
        je = ET.SubElement(root, "joint", name=j.name, type=jtype)
        ET.SubElement(je, "parent", link=j.parent)
        ET.SubElement(je, "child", link=j.child)
        ET.SubElement(je, "origin", xyz=_fmt(j.origin_xyz), rpy=_fmt(j.origin_rpy))
        if j.movable:
            ET.SubElement(je, "axis", xyz=_fmt(j.axis))
        if j.lower is not None:
            ET.SubElement(je, "limit", lower=repr(j.lower), upper=repr(j.upper),
                          effort="0.0", velocity="0.0")
    ET.indent(root)
    return ET.tostring(root, encoding="unicode")


# ---------------------------------------------------------------------------
# sidecar

def load_sidecar(model, text):
    """Attach contact points, loop closures and friction from sidecar JSON."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(Violation("sidecar", f"malformed sidecar: {exc}")) from None
    if not isinstance(cfg, dict):
        raise ModelError(Violation("sidecar", "sidecar must be a key-value mapping"))
    try:
        contacts = tuple(ContactPoint(c["link"], _vec(c.get("offset", (0, 0, 0))))
                         for c in cfg.get("contact_points", ()))
        loops = tuple(LoopClosure(lc["frame1"]["link"], _vec(lc["frame1"].get("offset", (0, 0, 0))),
                                  lc["frame2"]["link"], _vec(lc["frame2"].get("offset", (0, 0, 0))))
                      for lc in cfg.get("loop_closures", ()))
        friction = cfg.get("friction", {})
        mu = float(friction.get("mu", model.friction_mu))
        facets = friction.get("facets", model.friction_facets)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(Violation("sidecar", f"bad sidecar entry: {exc!r}")) from None
    base = cfg.get("base_link", model.base_link)
    out = dataclasses.replace(model, base_link=base, contact_points=contacts, loop_closures=loops,
                              friction_mu=mu, friction_facets=facets,
                              fixed_base=bool(cfg.get("fixed_base", False)))
    return check_model(out)


def to_sidecar(model):
    cfg = {
        "base_link": model.base_link,
        "fixed_base": model.fixed_base,
        "contact_points": [{"link": c.link, "offset": [float(x) for x in c.offset]}
                           for c in model.contact_points],
        "loop_closures": [{"frame1": {"link": lc.link1, "offset": [float(x) for x in lc.offset1]},
                           "frame2": {"link": lc.link2, "offset": [float(x) for x in lc.offset2]}}
                          for lc in model.loop_closures],
        "friction": {"mu": model.friction_mu, "facets": model.friction_facets},
    }
    return json.dumps(cfg, indent=2)


def load_model(urdf_path, sidecar_path=None):
    with open(urdf_path) as fh:
        model = parse_urdf(fh.read())
    if sidecar_path is not None:
        with open(sidecar_path) as fh:
            model = load_sidecar(model, fh.read())
    return model
