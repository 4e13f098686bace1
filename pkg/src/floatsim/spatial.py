"""Small rotation and spatial-vector helpers.

Spatial vectors are 6-vectors ordered (angular, linear) and expressed in the
world frame at the world origin.
"""
import math

import numpy as np

_I3 = np.eye(3)
_I3.flags.writeable = False


def cross(a, b):
    """3-vector cross product (np.cross carries a lot of overhead for single vectors)."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def rot_axis_angle(axis, angle):
    """Rodrigues formula; `axis` must be unit norm."""
    k = skew(axis)
    return _I3 + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def so3_exp(phi):
    """Exponential map from a rotation vector to a rotation matrix."""
    theta = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    k = skew(phi)
    if theta < 1e-8:
        # second-order Taylor expansion
        return _I3 + k + 0.5 * (k @ k)
    return (_I3 + (math.sin(theta) / theta) * k
            + ((1.0 - math.cos(theta)) / (theta * theta)) * (k @ k))


def orthonormalize(R):
    """Gram-Schmidt on the columns; exact zeros stay exact, so planar motion stays planar."""
    c0 = R[:, 0] / np.linalg.norm(R[:, 0])
    c1 = R[:, 1] - (c0 @ R[:, 1]) * c0
    c1 = c1 / np.linalg.norm(c1)
    return np.column_stack([c0, c1, cross(c0, c1)])


def rpy_to_matrix(rpy):
    """URDF fixed-axis roll-pitch-yaw: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def spatial_inertia(mass, com, inertia_com):
    """World-origin spatial inertia of a body with world COM `com` and
    world-aligned rotational inertia `inertia_com` about the COM."""
    cx = skew(com)
    out = np.empty((6, 6))
    out[:3, :3] = inertia_com + mass * (cx @ cx.T)
    out[:3, 3:] = mass * cx
    out[3:, :3] = mass * cx.T
    out[3:, 3:] = mass * _I3
    return out


def cross_motion(v, u):
    """Spatial motion cross product v x u."""
    w, lin = v[:3], v[3:]
    out = np.empty(6)
    out[:3] = cross(w, u[:3])
    out[3:] = cross(w, u[3:]) + cross(lin, u[:3])
    return out


def cross_force(v, f):
    """Spatial force cross product v x* f."""
    w, lin = v[:3], v[3:]
    out = np.empty(6)
    out[:3] = cross(w, f[:3]) + cross(lin, f[3:])
    out[3:] = cross(w, f[3:])
    return out


def matrix_to_quat_wxyz(R):
    from scipy.spatial.transform import Rotation

    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return np.array([w, x, y, z])


def quat_wxyz_to_matrix(q):
    from scipy.spatial.transform import Rotation

    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()
