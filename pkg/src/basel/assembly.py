"""Linearization of the reprojection problem and Schur reduction.

Conventions used throughout:

* camera pose maps world to camera, ``p_c = R p_w + t``;
* pinhole projection ``u = fx x/z + cx``, ``v = fy y/z + cy``;
* residual is ``W (h(x) - z)`` with ``W = L^{-1}`` from the measurement
  covariance ``Sigma = L L^T``;
* camera increments are ``[omega, u]`` applied as a right-multiplied
  retraction, so the pose Jacobian is ``[-Jp skew(p_w) | Jp]`` with
  ``Jp = W Jproj R``.

Fixed vertices contribute residuals but no columns; points behind a
camera (depth <= ``DEPTH_EPS``) contribute nothing at the current
iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .blockchol import BlockSparseSPD
from .errors import NoFreeVariables, PointBehindCamera, SingularPointBlock
from .geometry import Pose
from .graph import BAGraph, Estimates, Intrinsics

DEPTH_EPS = 1e-6


def project(pose: Pose, intr: Intrinsics, point):
    """Pixel projection of a world point, or None when the depth is
    at or below DEPTH_EPS."""
    pc = pose.transform(np.asarray(point, dtype=np.float64))
    if pc[2] <= DEPTH_EPS:
        return None
    return np.array([intr.fx * pc[0] / pc[2] + intr.cx,
                     intr.fy * pc[1] / pc[2] + intr.cy])


def residual_and_jacobians(pose: Pose, intr: Intrinsics, point, obs_uv, sigma=None):
    """Whitened residual and Jacobians for one observation.

    Returns ``(r, Jc, Jp)`` with shapes (2,), (2, 6), (2, 3).  Raises
    PointBehindCamera when the point does not project.  This is the
    K = 1 case of the batched kernel, kept as the single code path.
    """
    if sigma is None:
        whiten = np.eye(2)
    else:
        sigma = np.asarray(sigma, dtype=np.float64)
        L = np.linalg.cholesky(sigma)
        whiten = np.linalg.inv(L)
    R = pose.rotation()[None]
    t = np.asarray(pose.t, dtype=np.float64)[None]
    intr_arr = np.array([[intr.fx, intr.fy, intr.cx, intr.cy]])
    pts = np.asarray(point, dtype=np.float64)[None]
    meas = np.asarray(obs_uv, dtype=np.float64)[None]
    r, Jc, Jp, valid = kernels.residuals_jacobians(
        R, t, intr_arr, pts,
        np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
        meas, whiten[None], DEPTH_EPS)
    if not valid[0]:
        raise PointBehindCamera()
    return r[0], Jc[0], Jp[0]


# -------------------------------------------------------------------
# structure (iterate-independent) and assembled system
# -------------------------------------------------------------------

@dataclass
class SystemStructure:
    """Index plumbing shared across solver iterations for one graph."""

    graph: BAGraph
    free_camera_ids: tuple
    free_point_ids: tuple
    cam_slot: dict            # camera id -> column slot, fixed ids absent
    pt_slot: dict
    obs_cam_slot: np.ndarray  # per packed observation, -1 = fixed
    obs_pt_slot: np.ndarray
    pair_a: np.ndarray        # co-observation index pairs (free cams only)
    pair_b: np.ndarray
    presence: np.ndarray      # (n_free_cams, n_free_cams) bool

    @property
    def n_cameras(self):
        return len(self.free_camera_ids)

    @property
    def n_points(self):
        return len(self.free_point_ids)


def system_structure(graph: BAGraph) -> SystemStructure:
    free_cams = tuple(c.id for c in graph.cameras if not c.fixed)
    free_pts = tuple(p.id for p in graph.points if not p.fixed)
    if not free_cams and not free_pts:
        raise NoFreeVariables("all vertices are fixed")
    cam_slot = {cid: i for i, cid in enumerate(free_cams)}
    pt_slot = {pid: i for i, pid in enumerate(free_pts)}
    packed = graph.packed()
    # packed arrays are graph-order indices; translate to free-variable slots
    slot_by_cam = np.array([cam_slot.get(c.id, -1) for c in graph.cameras],
                           dtype=np.int64)
    slot_by_pt = np.array([pt_slot.get(p.id, -1) for p in graph.points],
                          dtype=np.int64)
    obs_cam_slot = slot_by_cam[packed.obs_cam]
    obs_pt_slot = slot_by_pt[packed.obs_pt]

    # Observations of each free point by free cameras, grouped by point,
    # expanded into ordered index pairs (slot[a] <= slot[b], self included).
    by_point = {}
    for k in range(len(packed.obs_cam)):
        if obs_pt_slot[k] >= 0 and obs_cam_slot[k] >= 0:
            by_point.setdefault(int(obs_pt_slot[k]), []).append(k)
    pa, pb = [], []
    n_free = len(free_cams)
    presence = np.zeros((n_free, n_free), dtype=bool)
    np.fill_diagonal(presence, True)
    for rows in by_point.values():
        rows.sort(key=lambda k: obs_cam_slot[k])
        for i, ka in enumerate(rows):
            for kb in rows[i:]:
                pa.append(ka)
                pb.append(kb)
                sa, sb = obs_cam_slot[ka], obs_cam_slot[kb]
                presence[sa, sb] = presence[sb, sa] = True
    return SystemStructure(
        graph, free_cams, free_pts, cam_slot, pt_slot,
        obs_cam_slot, obs_pt_slot,
        np.asarray(pa, dtype=np.int64), np.asarray(pb, dtype=np.int64),
        presence)


@dataclass
class NormalSystem:
    """Blocks of J^T J and J^T r at one linearization point."""

    structure: SystemStructure
    Hcc: np.ndarray   # (n_free_cams, 6, 6)
    Hpp: np.ndarray   # (n_free_pts, 3, 3)
    Hcp: np.ndarray   # per observation (K, 6, 3); zero when either side fixed
    eta_c: np.ndarray
    eta_p: np.ndarray
    valid: np.ndarray
    objective: float  # 0.5 * sum of squared whitened residuals

    @property
    def n_valid(self):
        return int(np.count_nonzero(self.valid))


def _linearize(structure: SystemStructure, est: Estimates):
    packed = structure.graph.packed()
    r, Jc, Jp, valid = kernels.residuals_jacobians(
        est.rotations(), est.cam_t, packed.intr_by_cam, est.points,
        packed.obs_cam, packed.obs_pt, packed.meas, packed.whiten, DEPTH_EPS)
    return r, Jc, Jp, valid


def assemble(graph: BAGraph, est: Estimates, structure: SystemStructure = None) -> NormalSystem:
    """Linearize at ``est`` and accumulate normal-equation blocks.

    ``est`` rows must follow the graph's vertex ordering (the layout
    produced by ``Estimates.from_graph`` or ``restrict``).
    """
    if structure is None:
        structure = system_structure(graph)
    if (est.cam_ids != tuple(c.id for c in graph.cameras)
            or est.point_ids != tuple(p.id for p in graph.points)):
        raise ValueError("estimates are not aligned with the graph ordering")
    r, Jc, Jp, valid = _linearize(structure, est)
    Hcc, Hpp, Hcp, eta_c, eta_p = kernels.accumulate_blocks(
        Jc, Jp, r, valid,
        structure.obs_cam_slot, structure.obs_pt_slot,
        max(structure.n_cameras, 1), max(structure.n_points, 1))
    if structure.n_cameras == 0:
        Hcc = Hcc[:0]
        eta_c = eta_c[:0]
    if structure.n_points == 0:
        Hpp = Hpp[:0]
        eta_p = eta_p[:0]
    objective = 0.5 * float(np.sum(r * r))
    return NormalSystem(structure, Hcc, Hpp, Hcp, eta_c, eta_p, valid, objective)


# -------------------------------------------------------------------
# Schur reduction to the camera-only matrix
# -------------------------------------------------------------------

def invert_point_blocks(Hpp, point_ids, delta=0.0):
    """Batched inverse of regularized 3x3 point blocks.

    PD is checked through leading principal minors; the offending point
    id is reported on failure.
    """
    H = Hpp + delta * np.eye(3)
    if len(H) == 0:
        return H.copy()
    a, b, c = H[:, 0, 0], H[:, 0, 1], H[:, 0, 2]
    d, e, f = H[:, 1, 1], H[:, 1, 2], H[:, 2, 2]
    m1 = a
    m2 = a * d - b * b
    m3 = (a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d))
    scale = np.maximum(np.abs(H).max(axis=(1, 2)), 1e-300)
    bad = (m1 <= 1e-14 * scale) | (m2 <= 0) | (m3 <= 0)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise SingularPointBlock(point_ids[idx])
    # inv() of a symmetric block is not exactly symmetric; for
    # ill-conditioned blocks the skew part is large enough to leak
    # visible asymmetry into the reduced camera matrix
    inv = np.linalg.inv(H)
    return 0.5 * (inv + inv.swapaxes(1, 2))


@dataclass
class CameraOnlyMatrix:
    """Schur complement onto free cameras, with solve metadata."""

    M: BlockSparseSPD
    camera_ids: tuple
    g: np.ndarray          # reduced gradient, (6 n, )
    delta_pp: float        # regularization added to point blocks
    delta_m: float         # jitter added to M's diagonal (0 unless requested)
    Hpp_inv: np.ndarray = field(repr=False, default=None)
    block_of: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return self.M.dim


def schur_camera_matrix(system: NormalSystem, delta_rel: float = 1e-8,
                        jitter_rel: float = 0.0) -> CameraOnlyMatrix:
    """Eliminate points from the normal equations.

    ``delta_rel`` scales the mean point-block diagonal into the absolute
    regularizer applied before inversion; ``jitter_rel`` optionally adds
    a matching ridge on the camera diagonal (used when the reduced
    matrix has an unfixed gauge, e.g. selection on toy graphs).
    """
    s = system.structure
    if s.n_cameras == 0:
        raise NoFreeVariables("no free cameras to reduce onto")
    if s.n_points:
        mean_diag = float(np.trace(system.Hpp.sum(axis=0))) / (3 * s.n_points)
    else:
        mean_diag = 0.0
    delta_pp = delta_rel * mean_diag
    Hpp_inv = invert_point_blocks(system.Hpp, s.free_point_ids, delta_pp)
    M, g = kernels.schur_reduce(
        system.Hcc, Hpp_inv, system.Hcp, system.eta_c, system.eta_p,
        s.obs_cam_slot, s.obs_pt_slot, s.pair_a, s.pair_b)
    delta_m = 0.0
    if jitter_rel:
        delta_m = jitter_rel * max(float(np.trace(M)) / max(M.shape[0], 1), 1.0)
        M = M + delta_m * np.eye(M.shape[0])
    block = BlockSparseSPD(M, (6,) * s.n_cameras, presence=s.presence)
    return CameraOnlyMatrix(
        block, s.free_camera_ids, g, delta_pp, delta_m,
        Hpp_inv=Hpp_inv,
        block_of={cid: i for i, cid in enumerate(s.free_camera_ids)})
