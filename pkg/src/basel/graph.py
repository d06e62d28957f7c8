"""Factor-graph domain types for bundle adjustment problems.

A :class:`BAGraph` is immutable after :func:`build_graph` (topology and
measurements never change; the single sanctioned in-place mutation is the
monotone ``PointVertex.optimized_before`` flag, which only flips
false -> true).  State being optimized lives outside the graph in an
:class:`Estimates` container aligned with the graph's vertex ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DanglingReference,
    DuplicateObservation,
    UnknownCamera,
    UnobservedPoint,
)
from .geometry import Pose


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; distortion is out of model."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def as_array(self):
        return np.array([self.fx, self.fy, self.cx, self.cy])


@dataclass(frozen=True, eq=False)
class CameraVertex:
    id: int
    pose: Pose
    intrinsics_ref: int = 0
    fixed: bool = False
    is_virtual: bool = False


@dataclass(eq=False)
class PointVertex:
    id: int
    position: np.ndarray
    fixed: bool = False
    optimized_before: bool = False  # monotone: false -> true only

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)


@dataclass(frozen=True, eq=False)
class Observation:
    camera_id: int
    point_id: int
    measurement: np.ndarray
    sigma: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        m = np.asarray(self.measurement, dtype=np.float64).reshape(2)
        s = np.asarray(self.sigma, dtype=np.float64).reshape(2, 2)
        if not np.allclose(s, s.T, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        # 2x2 SPD test via leading minors
        if s[0, 0] <= 0 or np.linalg.det(s) <= 0:
            raise ValueError("sigma must be positive definite")
        object.__setattr__(self, "measurement", m)
        object.__setattr__(self, "sigma", s)


def _whiten_2x2(sigma):
    """Inverse Cholesky factor W with W S W^T = I (lower triangular)."""
    l11 = np.sqrt(sigma[0, 0])
    l21 = sigma[1, 0] / l11
    l22 = np.sqrt(sigma[1, 1] - l21 * l21)
    return np.array([[1.0 / l11, 0.0],
                     [-l21 / (l11 * l22), 1.0 / l22]])


class BAGraph:
    """Validated bundle-adjustment factor graph with covisibility queries."""

    def __init__(self, cameras, points, observations, intrinsics):
        self.cameras = list(cameras)
        self.points = list(points)
        self.observations = list(observations)
        self.intrinsics = list(intrinsics)

        self._cam_index = {c.id: i for i, c in enumerate(self.cameras)}
        self._pt_index = {p.id: i for i, p in enumerate(self.points)}
        if len(self._cam_index) != len(self.cameras):
            raise ValueError("camera ids not unique")
        if len(self._pt_index) != len(self.points):
            raise ValueError("point ids not unique")

        seen = set()
        per_cam_pts = [set() for _ in self.cameras]
        per_pt_cams = [set() for _ in self.points]
        for obs in self.observations:
            if obs.camera_id not in self._cam_index:
                raise DanglingReference("camera", obs.camera_id)
            if obs.point_id not in self._pt_index:
                raise DanglingReference("point", obs.point_id)
            key = (obs.camera_id, obs.point_id)
            if key in seen:
                raise DuplicateObservation(*key)
            seen.add(key)
            per_cam_pts[self._cam_index[obs.camera_id]].add(obs.point_id)
            per_pt_cams[self._pt_index[obs.point_id]].add(obs.camera_id)
        for p, cams in zip(self.points, per_pt_cams):
            if not cams:
                raise UnobservedPoint(p.id)
        for cam in self.cameras:
            if not (0 <= cam.intrinsics_ref < len(self.intrinsics)):
                raise DanglingReference("intrinsics", cam.intrinsics_ref)

        self._points_by_camera = [frozenset(s) for s in per_cam_pts]
        self._cameras_by_point = [frozenset(s) for s in per_pt_cams]
        self._packed = None

    # -------------------------------------------------- index helpers

    def camera_index(self, camera_id):
        try:
            return self._cam_index[camera_id]
        except KeyError:
            raise UnknownCamera(camera_id) from None

    def point_index(self, point_id):
        return self._pt_index[point_id]

    def camera_ids(self):
        return [c.id for c in self.cameras]

    def point_ids(self):
        return [p.id for p in self.points]

    def points_seen_by(self, camera_id):
        return self._points_by_camera[self.camera_index(camera_id)]

    def cameras_seeing(self, point_id):
        return self._cameras_by_point[self.point_index(point_id)]

    def observation_count(self, camera_id):
        return len(self.points_seen_by(camera_id))

    # -------------------------------------------------- covisibility

    def covisibility_weight(self, cam_i, cam_j):
        a = self.points_seen_by(cam_i)
        b = self.points_seen_by(cam_j)
        return len(a & b)

    def covisible_pool(self, root_ids, min_weight=1):
        if min_weight < 1:
            raise ValueError("min_weight must be >= 1")
        roots = [self.camera_index(r) for r in root_ids]  # validates ids
        root_set = set(root_ids)
        out = []
        for cam in self.cameras:
            if cam.id in root_set:
                continue
            pts = self._points_by_camera[self._cam_index[cam.id]]
            for r in root_ids:
                if len(pts & self.points_seen_by(r)) >= min_weight:
                    out.append(cam.id)
                    break
        return sorted(out)

    # -------------------------------------------------- packed arrays

    def packed(self):
        """Flat observation arrays for numeric kernels (built once)."""
        if self._packed is None:
            n_obs = len(self.observations)
            obs_cam = np.empty(n_obs, dtype=np.int64)
            obs_pt = np.empty(n_obs, dtype=np.int64)
            meas = np.empty((n_obs, 2))
            whiten = np.empty((n_obs, 2, 2))
            for k, obs in enumerate(self.observations):
                obs_cam[k] = self._cam_index[obs.camera_id]
                obs_pt[k] = self._pt_index[obs.point_id]
                meas[k] = obs.measurement
                whiten[k] = _whiten_2x2(obs.sigma)
            intr = np.empty((len(self.cameras), 4))
            for i, cam in enumerate(self.cameras):
                intr[i] = self.intrinsics[cam.intrinsics_ref].as_array()
            self._packed = PackedObservations(obs_cam, obs_pt, meas, whiten, intr)
        return self._packed

    def __repr__(self):
        return (f"BAGraph({len(self.cameras)} cameras, {len(self.points)} points, "
                f"{len(self.observations)} observations)")


@dataclass(frozen=True, eq=False)
class PackedObservations:
    obs_cam: np.ndarray
    obs_pt: np.ndarray
    meas: np.ndarray
    whiten: np.ndarray
    intr_by_cam: np.ndarray


def build_graph(cameras, points, observations, intrinsics) -> BAGraph:
    """Validate referential integrity and return an immutable graph."""
    return BAGraph(cameras, points, observations, intrinsics)


def covisibility_weight(graph: BAGraph, cam_i, cam_j) -> int:
    """Number of points observed by both cameras (symmetric)."""
    return graph.covisibility_weight(cam_i, cam_j)


def covisible_pool(graph: BAGraph, root_ids, min_weight=1):
    """Cameras sharing >= min_weight points with any root, roots excluded,
    in ascending-id order."""
    return graph.covisible_pool(root_ids, min_weight)


# ====================================================================
# Estimates
# ====================================================================

@dataclass(eq=False)
class Estimates:
    """Optimization state aligned with a graph's vertex ordering.

    Quaternions are scalar-first rows of ``cam_q``; ``cam_ids`` and
    ``point_ids`` record the alignment so estimates for a subproblem can be
    matched back to the parent by id.
    """

    cam_q: np.ndarray
    cam_t: np.ndarray
    points: np.ndarray
    cam_ids: tuple
    point_ids: tuple

    def __post_init__(self):
        self.cam_q = np.asarray(self.cam_q, dtype=np.float64).reshape(-1, 4)
        self.cam_t = np.asarray(self.cam_t, dtype=np.float64).reshape(-1, 3)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.cam_ids = tuple(self.cam_ids)
        self.point_ids = tuple(self.point_ids)
        self._cam_row = {cid: i for i, cid in enumerate(self.cam_ids)}
        self._pt_row = {pid: i for i, pid in enumerate(self.point_ids)}

    @classmethod
    def from_graph(cls, graph: BAGraph):
        n, m = len(graph.cameras), len(graph.points)
        cam_q = np.empty((n, 4))
        cam_t = np.empty((n, 3))
        for i, cam in enumerate(graph.cameras):
            cam_q[i] = cam.pose.q
            cam_t[i] = cam.pose.t
        pts = np.empty((m, 3))
        for j, p in enumerate(graph.points):
            pts[j] = p.position
        return cls(cam_q, cam_t, pts, tuple(c.id for c in graph.cameras),
                   tuple(p.id for p in graph.points))

    def copy(self):
        return Estimates(self.cam_q.copy(), self.cam_t.copy(), self.points.copy(),
                         self.cam_ids, self.point_ids)

    def pose(self, camera_id) -> Pose:
        i = self._cam_row[camera_id]
        return Pose(self.cam_q[i], self.cam_t[i])

    def set_pose(self, camera_id, pose: Pose):
        i = self._cam_row[camera_id]
        self.cam_q[i] = pose.q
        self.cam_t[i] = pose.t

    def point(self, point_id):
        return self.points[self._pt_row[point_id]]

    def set_point(self, point_id, value):
        self.points[self._pt_row[point_id]] = np.asarray(value, dtype=np.float64)

    def restrict(self, graph: BAGraph) -> "Estimates":
        """Slice estimates down to the vertices of ``graph`` (matched by id)."""
        cam_rows = [self._cam_row[c.id] for c in graph.cameras]
        pt_rows = [self._pt_row[p.id] for p in graph.points]
        return Estimates(self.cam_q[cam_rows], self.cam_t[cam_rows],
                         self.points[pt_rows],
                         tuple(c.id for c in graph.cameras),
                         tuple(p.id for p in graph.points))

    def merge_from(self, other: "Estimates", camera_ids=None, point_ids=None):
        """Copy entries of ``other`` (by id) into this container, in place."""
        cam_ids = other.cam_ids if camera_ids is None else camera_ids
        pt_ids = other.point_ids if point_ids is None else point_ids
        for cid in cam_ids:
            self.cam_q[self._cam_row[cid]] = other.cam_q[other._cam_row[cid]]
            self.cam_t[self._cam_row[cid]] = other.cam_t[other._cam_row[cid]]
        for pid in pt_ids:
            self.points[self._pt_row[pid]] = other.points[other._pt_row[pid]]

    @property
    def cam_row(self):
        return self._cam_row

    @property
    def pt_row(self):
        return self._pt_row

    def rotations(self):
        """Stacked 3x3 rotation matrices, one per camera row."""
        w, x, y, z = self.cam_q[:, 0], self.cam_q[:, 1], self.cam_q[:, 2], self.cam_q[:, 3]
        R = np.empty((len(self.cam_ids), 3, 3))
        R[:, 0, 0] = 1 - 2 * (y * y + z * z)
        R[:, 0, 1] = 2 * (x * y - w * z)
        R[:, 0, 2] = 2 * (x * z + w * y)
        R[:, 1, 0] = 2 * (x * y + w * z)
        R[:, 1, 1] = 1 - 2 * (x * x + z * z)
        R[:, 1, 2] = 2 * (y * z - w * x)
        R[:, 2, 0] = 2 * (x * z - w * y)
        R[:, 2, 1] = 2 * (y * z + w * x)
        R[:, 2, 2] = 1 - 2 * (x * x + y * y)
        return R


def subgraph(graph: BAGraph, camera_ids, point_ids, *,
             camera_fixed=None, point_fixed=None) -> BAGraph:
    """Restriction of ``graph`` to the given vertices.

    Vertex dataclasses are re-created so flag overrides never alias the
    parent graph.  Observations are kept iff both endpoints survive.
    """
    cam_set = set(camera_ids)
    pt_set = set(point_ids)
    cameras = []
    for cam in graph.cameras:
        if cam.id in cam_set:
            fixed = cam.fixed if camera_fixed is None else camera_fixed.get(cam.id, cam.fixed)
            cameras.append(replace(cam, fixed=fixed))
    points = []
    for p in graph.points:
        if p.id in pt_set:
            fixed = p.fixed if point_fixed is None else point_fixed.get(p.id, p.fixed)
            points.append(PointVertex(p.id, p.position.copy(), fixed=fixed,
                                      optimized_before=p.optimized_before))
    obs = [o for o in graph.observations
           if o.camera_id in cam_set and o.point_id in pt_set]
    return BAGraph(cameras, points, obs, graph.intrinsics)
