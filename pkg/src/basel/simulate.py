"""Synthetic multi-view scenes with known ground truth.

Cameras sit on a ring looking at the origin; points fill an axis-aligned
box (elongate the box to make visibility vary around the ring).  Ground
truth lives in the graph vertices; noisy measurements and a perturbed
initial state are generated from per-concern child RNG streams so that
e.g. changing the noise level never changes the geometry.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleConfig
from .geometry import Pose
from .graph import (
    BAGraph,
    CameraVertex,
    Estimates,
    Intrinsics,
    Observation,
    PointVertex,
    build_graph,
)

POINT_ID_BASE = 10_000  # keeps camera and point id ranges disjoint


@dataclass(frozen=True)
class SceneConfig:
    n_cameras: int = 50
    n_points: int = 2000
    ring_radius: float = 6.0
    ring_height: float = 0.6
    height_jitter: float = 0.25
    box_half: tuple = (8.0, 8.0, 2.0)  # wider than the ring: partial visibility
    min_views: int = 2
    min_points_per_camera: int = 20
    pixel_sigma: float = 1.0
    n_fixed: int = 2          # gauge anchors, lowest camera ids
    fx: float = 520.0
    fy: float = 520.0
    width: int = 640
    height: int = 480
    near: float = 0.2
    far: float = 40.0
    max_rounds: int = 200
    seed: int = 0

    def intrinsics(self):
        return Intrinsics(self.fx, self.fy, self.width / 2.0, self.height / 2.0,
                          self.width, self.height)


@dataclass
class SyntheticScene:
    graph: BAGraph
    gt: Estimates
    initial: Estimates
    config: SceneConfig

    @property
    def camera_ids(self):
        return [c.id for c in self.graph.cameras]


def _rng_streams(seed):
    geo, noise, perturb = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(geo), np.random.default_rng(noise),
            np.random.default_rng(perturb))


def _camera_poses(cfg: SceneConfig, rng):
    poses = []
    angles = np.linspace(0.0, 2.0 * np.pi, cfg.n_cameras, endpoint=False)
    z = cfg.ring_height + rng.uniform(-cfg.height_jitter, cfg.height_jitter,
                                      cfg.n_cameras)
    for i, th in enumerate(angles):
        eye = np.array([cfg.ring_radius * np.cos(th),
                        cfg.ring_radius * np.sin(th), z[i]])
        poses.append(Pose.look_at(eye, (0.0, 0.0, 0.0)))
    return poses


def _visibility(poses, intr: Intrinsics, pts, near, far):
    """Boolean (n_cameras, n_points) mask of in-frustum projections."""
    n, m = len(poses), len(pts)
    vis = np.zeros((n, m), dtype=bool)
    for i, pose in enumerate(poses):
        pc = pts @ pose.rotation().T + pose.t
        z = pc[:, 2]
        ok = (z > near) & (z < far)
        zs = np.where(ok, z, 1.0)
        u = intr.fx * pc[:, 0] / zs + intr.cx
        v = intr.fy * pc[:, 1] / zs + intr.cy
        vis[i] = ok & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return vis


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    """Build a feasible scene or raise InfeasibleConfig.

    Points seen by fewer than ``min_views`` cameras are redrawn for up to
    ``max_rounds`` rounds; per-camera coverage is checked afterwards.
    """
    if cfg.n_cameras < cfg.n_fixed + 1:
        raise InfeasibleConfig("need at least one free camera")
    geo_rng, noise_rng, perturb_rng = _rng_streams(cfg.seed)
    intr = cfg.intrinsics()
    poses = _camera_poses(cfg, geo_rng)

    half = np.asarray(cfg.box_half, dtype=np.float64)
    pts = geo_rng.uniform(-half, half, size=(cfg.n_points, 3))
    vis = _visibility(poses, intr, pts, cfg.near, cfg.far)
    for _ in range(cfg.max_rounds):
        weak = np.flatnonzero(vis.sum(axis=0) < cfg.min_views)
        if len(weak) == 0:
            break
        pts[weak] = geo_rng.uniform(-half, half, size=(len(weak), 3))
        vis[:, weak] = _visibility(poses, intr, pts[weak], cfg.near, cfg.far)
    else:
        n_bad = int((vis.sum(axis=0) < cfg.min_views).sum())
        raise InfeasibleConfig(
            f"{n_bad} points still below {cfg.min_views} views after "
            f"{cfg.max_rounds} resampling rounds")

    per_cam = vis.sum(axis=1)
    if per_cam.min() < cfg.min_points_per_camera:
        worst = int(per_cam.argmin())
        raise InfeasibleConfig(
            f"camera {worst} sees {per_cam[worst]} points, "
            f"needs {cfg.min_points_per_camera}")

    cameras = [CameraVertex(i, poses[i], 0, fixed=(i < cfg.n_fixed))
               for i in range(cfg.n_cameras)]
    points = [PointVertex(POINT_ID_BASE + j, pts[j]) for j in range(cfg.n_points)]

    sigma_eff = max(cfg.pixel_sigma, 1.0)  # keeps Sigma PD for noiseless runs
    sigma = sigma_eff ** 2 * np.eye(2)
    observations = []
    for i, pose in enumerate(poses):
        pc = pts @ pose.rotation().T + pose.t
        for j in map(int, np.flatnonzero(vis[i])):
            z = pc[j, 2]
            uv = np.array([intr.fx * pc[j, 0] / z + intr.cx,
                           intr.fy * pc[j, 1] / z + intr.cy])
            if cfg.pixel_sigma > 0:
                uv = uv + noise_rng.normal(0.0, cfg.pixel_sigma, 2)
            observations.append(Observation(i, POINT_ID_BASE + j, uv, sigma))

    graph = build_graph(cameras, points, observations, [intr])
    gt = Estimates.from_graph(graph)
    initial = perturb_estimates(graph, gt, rng=perturb_rng)
    return SyntheticScene(graph, gt, initial, cfg)


def perturb_estimates(graph: BAGraph, est: Estimates, *, rot_sigma=0.02,
                      trans_sigma=0.05, point_sigma=0.05, rng=None) -> Estimates:
    """Gaussian state noise on free vertices; fixed vertices untouched.

    Camera noise is a random tangent step applied through the same
    right-multiplied retraction the solver uses.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = est.copy()
    for cam in graph.cameras:
        if cam.fixed:
            continue
        delta = np.concatenate([rng.normal(0.0, rot_sigma, 3),
                                rng.normal(0.0, trans_sigma, 3)])
        out.set_pose(cam.id, out.pose(cam.id).retract(delta))
    for p in graph.points:
        if p.fixed:
            continue
        out.set_point(p.id, out.point(p.id) + rng.normal(0.0, point_sigma, 3))
    return out


def desk_config(seed=0, **overrides) -> SceneConfig:
    """Small configuration sized for CI runs."""
    base = dict(n_cameras=50, n_points=2000, seed=seed)
    base.update(overrides)
    return SceneConfig(**base)


def paper_config(seed=0, **overrides) -> SceneConfig:
    """Full-size configuration matching the reference experiments."""
    base = dict(n_cameras=50, n_points=6000, seed=seed)
    base.update(overrides)
    return SceneConfig(**base)


def with_seed(cfg: SceneConfig, seed: int) -> SceneConfig:
    return dataclasses.replace(cfg, seed=seed)
