"""Rigid-transform and quaternion utilities.

Conventions, fixed once and used everywhere:

* quaternions are scalar-first ``(w, x, y, z)`` unit quaternions;
* a :class:`Pose` maps world coordinates to camera coordinates,
  ``p_cam = R @ p_world + t``;
* the camera frame is x-right / y-down-or-up per scene construction /
  z-forward, depth is the camera-frame z coordinate;
* local pose increments ``delta = (omega, u)`` are applied on the right:
  ``R <- R @ Exp(omega)``, ``t <- t + R @ u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QUAT_NORM_TOL = 1e-9


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    q = q / n
    # canonical sign: w >= 0 keeps round-trips stable
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rot(q):
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
        [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
        [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
    ])


def rot_to_quat(R):
    """Shepperd's method; branch on the largest diagonal combination."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def so3_exp_quat(omega):
    """Exponential map so(3) -> unit quaternion."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    half = 0.5 * theta
    if theta < 1e-12:
        # second-order series keeps the map smooth through zero
        w = 1.0 - half * half / 2.0
        xyz = 0.5 * omega * (1.0 - half * half / 6.0)
    else:
        w = np.cos(half)
        xyz = np.sin(half) * omega / theta
    return quat_normalize(np.array([w, xyz[0], xyz[1], xyz[2]]))


def quat_angle(qa, qb):
    """Geodesic angle in radians between two unit quaternions."""
    d = abs(float(np.dot(qa, qb)))
    return 2.0 * np.arccos(min(d, 1.0))


def quat_to_rotvec(q):
    """Logarithm map: unit quaternion -> rotation vector (inverse of
    so3_exp_quat up to the 2-pi wrap)."""
    q = quat_normalize(q)
    w = q[0]
    xyz = q[1:]
    n = float(np.linalg.norm(xyz))
    if n < 1e-12:
        return 2.0 * xyz  # first-order series at identity
    theta = 2.0 * np.arctan2(n, w)
    return theta * xyz / n


def skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform (unit quaternion + translation)."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(4).copy()
        t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        if q[0] < 0.0:
            q = -q
        q /= n
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t):
        R = np.asarray(R, dtype=np.float64)
        return cls(rot_to_quat(R), np.asarray(t, dtype=np.float64))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)):
        """Camera at ``eye`` with +z axis toward ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        nz = np.linalg.norm(z)
        if nz < 1e-12:
            raise ValueError("eye and target coincide")
        z = z / nz
        up = np.asarray(up, dtype=np.float64)
        x = np.cross(up, z)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(np.array([0.0, 1.0, 0.0]), z)
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])  # rows: camera axes in world coordinates
        return cls(rot_to_quat(R), -R @ eye)

    def rotation(self):
        return quat_to_rot(self.q)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation()
        T[:3, 3] = self.t
        return T

    def transform(self, p):
        """Map world point(s) into camera coordinates."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation().T + self.t

    def inverse(self):
        R = self.rotation()
        return Pose(quat_conj(self.q), -R.T @ self.t)

    def compose(self, other: "Pose"):
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(quat_mul(self.q, other.q),
                    self.rotation() @ other.t + self.t)

    def retract(self, delta):
        """Right-multiplied local update with ``delta = (omega, u)``."""
        delta = np.asarray(delta, dtype=np.float64).reshape(6)
        dq = so3_exp_quat(delta[:3])
        return Pose(quat_mul(self.q, dq), self.t + self.rotation() @ delta[3:])

    def camera_center(self):
        return -self.rotation().T @ self.t

    def angle_to(self, other: "Pose"):
        return quat_angle(self.q, other.q)

    def __repr__(self):
        return f"Pose(q={np.array2string(self.q, precision=6)}, t={np.array2string(self.t, precision=6)})"
