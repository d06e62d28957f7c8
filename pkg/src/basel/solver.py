"""Schur-complement Gauss-Newton / Levenberg-Marquardt for reprojection
problems.

Each iteration linearizes, eliminates point blocks, solves the reduced
camera system through the shared Cholesky kernel, and back-substitutes
point increments.  LM damping is multiplicative on the block diagonals
(lambda * diag), scaled up by ``lambda_up`` on rejection and down by
``lambda_down`` on acceptance; the accepted-objective trace is
non-increasing by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .assembly import assemble, invert_point_blocks, system_structure
from .errors import NotPositiveDefinite, SingularSystem
from .graph import BAGraph, Estimates


@dataclass(frozen=True)
class SolveConfig:
    max_iterations: int = 20
    algorithm: str = "lm"        # "lm" or "gn"
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 3.0
    max_lambda: float = 1e10
    gradient_tol: float = 1e-8   # on max |reduced gradient|
    step_tol: float = 1e-10      # on max |increment|
    decrease_tol: float = 1e-10  # on relative objective decrease
    delta_rel: float = 1e-8      # point-block regularizer scale

    def __post_init__(self):
        if self.algorithm not in ("lm", "gn"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class SolveReport:
    objective_trace: list = field(default_factory=list)  # accepted values
    iterations: int = 0
    termination: str = "max_iterations"
    lambda_final: float = 0.0
    n_valid_final: int = 0
    wall_time: float = 0.0

    @property
    def initial_objective(self):
        return self.objective_trace[0]

    @property
    def final_objective(self):
        return self.objective_trace[-1]


def _damped(H, lam):
    """H + lam * diag(H), batched over blocks."""
    if lam == 0.0:
        return H
    out = H.copy()
    d = np.einsum("bii->bi", out)
    d += lam * np.einsum("bii->bi", H)
    return out


def _apply_step(est: Estimates, structure, delta_c, delta_p) -> Estimates:
    out = est.copy()
    dc = delta_c.reshape(-1, 6)
    for slot, cid in enumerate(structure.free_camera_ids):
        out.set_pose(cid, out.pose(cid).retract(dc[slot]))
    if len(delta_p):
        rows = [out.pt_row[pid] for pid in structure.free_point_ids]
        out.points[rows] += delta_p
    return out


def solve(graph: BAGraph, est: Estimates, config: SolveConfig = SolveConfig()):
    """Minimize the whitened reprojection objective.

    Returns ``(estimates, report)``.  Raises SingularSystem when the
    reduced camera matrix cannot be factored and damping is disabled
    (``gn``) or exhausted.
    """
    t_start = time.perf_counter()
    structure = system_structure(graph)
    current = est.copy()
    sys_cur = assemble(graph, current, structure)
    report = SolveReport(objective_trace=[sys_cur.objective],
                         n_valid_final=sys_cur.n_valid)
    lam = config.initial_lambda if config.algorithm == "lm" else 0.0

    for it in range(config.max_iterations):
        report.iterations = it + 1
        stepped = False
        while True:
            Hcc_d = _damped(sys_cur.Hcc, lam)
            Hpp_d = _damped(sys_cur.Hpp, lam)
            if structure.n_points:
                mean_diag = float(np.einsum("bii->", Hpp_d)) / (3 * structure.n_points)
            else:
                mean_diag = 0.0
            try:
                Hpp_inv = invert_point_blocks(Hpp_d, structure.free_point_ids,
                                              config.delta_rel * mean_diag)
                M, g = kernels.schur_reduce(
                    Hcc_d, Hpp_inv, sys_cur.Hcp, sys_cur.eta_c, sys_cur.eta_p,
                    structure.obs_cam_slot, structure.obs_pt_slot,
                    structure.pair_a, structure.pair_b)
                piv_tol = 1e-12 * max(float(M.diagonal().max(initial=0.0)), 0.0)
                L, pivot = kernels.chol_lower(M, piv_tol)
                if pivot >= 0:
                    raise NotPositiveDefinite(pivot)
            except (NotPositiveDefinite, SingularSystem) as err:
                if config.algorithm == "gn":
                    raise SingularSystem(str(err)) from err
                lam *= config.lambda_up
                if lam > config.max_lambda:
                    report.termination = "stalled"
                    report.lambda_final = lam
                    report.wall_time = time.perf_counter() - t_start
                    return current, report
                continue

            y = kernels.trisolve_lower(L, g.reshape(-1, 1))
            delta_c = kernels.trisolve_lower(
                L.T[::-1, ::-1].copy(), y[::-1])[::-1].ravel()
            delta_p = kernels.backsub_points(
                Hpp_inv, sys_cur.Hcp, sys_cur.eta_p, delta_c,
                structure.obs_cam_slot, structure.obs_pt_slot)

            candidate = _apply_step(current, structure, delta_c, delta_p)
            sys_new = assemble(graph, candidate, structure)
            if sys_new.objective < sys_cur.objective:
                current, sys_cur = candidate, sys_new
                report.objective_trace.append(sys_cur.objective)
                report.n_valid_final = sys_cur.n_valid
                if config.algorithm == "lm":
                    lam = max(lam / config.lambda_down, 1e-12)
                stepped = True
                break
            if config.algorithm == "gn":
                report.termination = "no_decrease"
                report.lambda_final = 0.0
                report.wall_time = time.perf_counter() - t_start
                return current, report
            lam *= config.lambda_up
            if lam > config.max_lambda:
                report.termination = "stalled"
                report.lambda_final = lam
                report.wall_time = time.perf_counter() - t_start
                return current, report

        if stepped:
            step_inf = max(float(np.abs(delta_c).max(initial=0.0)),
                           float(np.abs(delta_p).max(initial=0.0)) if len(delta_p) else 0.0)
            prev, cur = report.objective_trace[-2], report.objective_trace[-1]
            rel_drop = (prev - cur) / max(prev, 1e-300)
            if float(np.abs(g).max(initial=0.0)) < config.gradient_tol:
                report.termination = "gradient"
                break
            if step_inf < config.step_tol:
                report.termination = "step"
                break
            if rel_drop < config.decrease_tol:
                report.termination = "decrease"
                break
    else:
        report.termination = "max_iterations"

    report.lambda_final = lam
    report.wall_time = time.perf_counter() - t_start
    return current, report


def point_rmse(est: Estimates, reference: Estimates, point_ids=None) -> float:
    """Root-mean-square 3D error over the given point ids (default: all
    ids shared by both containers)."""
    if point_ids is None:
        point_ids = [pid for pid in est.point_ids if pid in set(reference.point_ids)]
    point_ids = list(point_ids)
    if not point_ids:
        return float("nan")
    a = np.stack([est.point(pid) for pid in point_ids])
    b = np.stack([reference.point(pid) for pid in point_ids])
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def pose_errors(est: Estimates, reference: Estimates, camera_ids=None):
    """Per-camera (rotation angle, translation distance) arrays."""
    if camera_ids is None:
        camera_ids = [cid for cid in est.cam_ids if cid in set(reference.cam_ids)]
    rot = np.empty(len(camera_ids))
    trans = np.empty(len(camera_ids))
    for i, cid in enumerate(camera_ids):
        pa, pb = est.pose(cid), reference.pose(cid)
        rot[i] = pa.angle_to(pb)
        trans[i] = float(np.linalg.norm(pa.t - pb.t))
    return rot, trans
