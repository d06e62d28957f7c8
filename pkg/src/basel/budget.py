"""Time budgeting for local bundle adjustment.

The budget rule turns forecast map-point visibility into a solve-time
allowance: when fewer points will be visible ``t_p`` seconds ahead than
now, the allowance is the time at which a linear visibility decay crosses
the acceptable minimum ``n_min``; when visibility holds or grows, the
solver gets the full ``t_max``.  A calibrated cubic :class:`TimeModel`
maps the allowance to a target subgraph size, and
:func:`budget_aware_local_ba` runs one keyframe step end to end: predict,
size, select (seeded with the current keyframe and a virtual near-future
keyframe), recover, solve, recalibrate.

One pipeline instance should drive a given graph at a time; calibration
appends happen inside the pipeline call, so they are serialized with it.
"""

from __future__ import annotations

import csv
import io
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import DEPTH_EPS
from .errors import (
    BaselError,
    DegenerateVisibility,
    InsufficientSamples,
    NonMonotoneFit,
    NoVisiblePoints,
    ParseError,
)
from .geometry import Pose
from .graph import BAGraph, CameraVertex, Estimates, Intrinsics, Observation
from .select import (
    EPSILON_DEFAULT,
    PriorPolicy,
    Selection,
    covis_select,
    gauge_fixed,
    lazier_greedy_select,
    ordered_gains,
    recover_subgraph,
    selection_matrix,
)
from .solver import SolveConfig, solve

K_MIN_DEFAULT = 5
REFIT_INTERVAL = 25


@dataclass(frozen=True)
class BudgetParams:
    """Visibility-to-budget constants (seconds / point counts)."""

    t_p: float = 0.5     # prediction horizon and nominal budget
    t_max: float = 0.8   # allowance when visibility holds or grows
    n_min: int = 240     # acceptable minimum of visible points

    def __post_init__(self):
        if not (0.0 < self.t_p <= self.t_max):
            raise ValueError("need 0 < t_p <= t_max")
        if self.n_min < 1:
            raise ValueError("n_min must be >= 1")


# -------------------------------------------------------------------
# cubic time model
# -------------------------------------------------------------------

def _increasing_on(coeffs, lo, hi):
    grid = np.linspace(lo, hi, 513)
    return bool(np.all(np.diff(np.polyval(coeffs, grid)) > 0.0))


def _isotonic_increasing(values, weights):
    """Weighted non-decreasing fit by pooling adjacent violators."""
    vals, wts, cnts = [], [], []
    for v, w in zip(values, weights):
        vals.append(float(v))
        wts.append(float(w))
        cnts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v2, w2, c2 = vals.pop(), wts.pop(), cnts.pop()
            v1, w1, c1 = vals.pop(), wts.pop(), cnts.pop()
            w = w1 + w2
            vals.append((v1 * w1 + v2 * w2) / w)
            wts.append(w)
            cnts.append(c1 + c2)
    out = []
    for v, c in zip(vals, cnts):
        out.extend([v] * c)
    return np.array(out)


@dataclass
class TimeModel:
    """Calibrated cubic mapping subgraph size (cameras) to solve seconds.

    ``samples`` holds every calibration measurement as ``(k, seconds)``
    and keeps growing during online operation; :meth:`record_solve`
    refits once per ``refit_interval`` appends.
    """

    coeffs: np.ndarray          # cubic coefficients, highest degree first
    samples: list               # (k, seconds)
    residual_rms: float
    residual_max: float
    k_min: int
    k_max: int
    monotone_fallback: bool = False
    refit_interval: int = REFIT_INTERVAL
    _appends: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(4)
        self.samples = [(int(k), float(t)) for k, t in self.samples]

    @property
    def k_range(self):
        return self.k_min, self.k_max

    def tau(self, k) -> float:
        """Predicted solve seconds for a k-camera problem."""
        return float(np.polyval(self.coeffs, k))

    def record_solve(self, k, seconds):
        """Append an online calibration sample, refitting periodically."""
        self.samples.append((int(k), float(seconds)))
        self._appends += 1
        if self._appends >= self.refit_interval:
            self._appends = 0
            self.refit()

    def refit(self):
        try:
            new = fit_time_model(self.samples, k_min=self.k_min,
                                 refit_interval=self.refit_interval)
        except InsufficientSamples:
            return
        self.coeffs = new.coeffs
        self.residual_rms = new.residual_rms
        self.residual_max = new.residual_max
        self.k_max = new.k_max
        self.monotone_fallback = new.monotone_fallback

    def to_dict(self) -> dict:
        return {
            "coeffs": [float(c) for c in self.coeffs],
            "k_min": self.k_min,
            "k_max": self.k_max,
            "residual_rms": self.residual_rms,
            "residual_max": self.residual_max,
            "monotone_fallback": self.monotone_fallback,
            "refit_interval": self.refit_interval,
            "n_samples": len(self.samples),
        }

    @classmethod
    def from_dict(cls, data, samples=()) -> "TimeModel":
        return cls(coeffs=data["coeffs"], samples=list(samples),
                   residual_rms=float(data["residual_rms"]),
                   residual_max=float(data["residual_max"]),
                   k_min=int(data["k_min"]), k_max=int(data["k_max"]),
                   monotone_fallback=bool(data["monotone_fallback"]),
                   refit_interval=int(data.get("refit_interval", REFIT_INTERVAL)))


def fit_time_model(samples, k_min=K_MIN_DEFAULT,
                   refit_interval=REFIT_INTERVAL) -> TimeModel:
    """Least-squares cubic over ``(k, seconds)`` samples.

    Needs at least 4 distinct sizes.  If the fit is not increasing on
    [k_min, max k], targets are made monotone (adjacent-violator pooling
    of per-size means) and the cubic is refit on them, with a
    NonMonotoneFit warning and the ``monotone_fallback`` flag set.
    """
    pairs = [(int(k), float(t)) for k, t in samples]
    if any(t <= 0.0 for _, t in pairs):
        raise ValueError("solve times must be positive")
    distinct = sorted({k for k, _ in pairs})
    if len(distinct) < 4:
        raise InsufficientSamples(4, len(distinct))
    ks = np.array([k for k, _ in pairs], dtype=np.float64)
    ts = np.array([t for _, t in pairs])
    coeffs = np.polyfit(ks, ts, 3)
    k_max = distinct[-1]
    fallback = False
    if not _increasing_on(coeffs, k_min, k_max):
        fallback = True
        warnings.warn(
            f"cubic fit not increasing on [{k_min}, {k_max}]; "
            "refitting on isotonic targets", NonMonotoneFit, stacklevel=2)
        kd = np.array(distinct, dtype=np.float64)
        means = np.array([ts[ks == k].mean() for k in distinct])
        wts = np.array([np.sum(ks == k) for k in distinct], dtype=np.float64)
        iso = _isotonic_increasing(means, wts)
        coeffs = np.polyfit(kd, iso, 3, w=np.sqrt(wts))
    res = ts - np.polyval(coeffs, ks)
    return TimeModel(coeffs=coeffs, samples=pairs,
                     residual_rms=float(np.sqrt(np.mean(res ** 2))),
                     residual_max=float(np.max(np.abs(res))),
                     k_min=int(k_min), k_max=int(k_max),
                     monotone_fallback=fallback, refit_interval=refit_interval)


def size_for_budget(model: TimeModel, t_b) -> int:
    """Largest size in the model's range whose predicted time fits ``t_b``
    (floor semantics: never pick a size expected to exceed the budget)."""
    ks = np.arange(model.k_min, model.k_max + 1)
    fits = ks[np.polyval(model.coeffs, ks) <= t_b]
    return int(fits[-1]) if fits.size else int(model.k_min)


# -------------------------------------------------------------------
# visibility forecasting
# -------------------------------------------------------------------

def _project_points(points, pose: Pose, intr: Intrinsics):
    """Batched pinhole projection with an in-view mask."""
    pc = pose.transform(points)
    z = pc[:, 2]
    safe = np.where(z > DEPTH_EPS, z, 1.0)
    u = intr.fx * pc[:, 0] / safe + intr.cx
    v = intr.fy * pc[:, 1] / safe + intr.cy
    visible = ((z > DEPTH_EPS)
               & (u >= 0.0) & (u < intr.width)
               & (v >= 0.0) & (v < intr.height))
    return visible, np.stack([u, v], axis=1)


def predict_visible_count(graph: BAGraph, estimates: Estimates,
                          predicted_pose: Pose, intrinsics: Intrinsics) -> int:
    """Local-map points projecting inside the image with positive depth."""
    pts = estimates.points if estimates is not None else np.array(
        [p.position for p in graph.points]).reshape(-1, 3)
    visible, _ = _project_points(pts, predicted_pose, intrinsics)
    return int(np.count_nonzero(visible))


def predict_budget(n0, n_future, params: BudgetParams = BudgetParams(),
                   t_floor=0.0) -> float:
    """Solve-time allowance from current and forecast visible counts.

    Visibility is assumed to decay linearly from ``n0`` now to
    ``n_future`` at horizon ``t_p``; the budget is the time at which that
    line reaches ``n_min``, floored at ``t_floor`` and capped at
    ``t_max``.  Holding or growing visibility takes the ``t_max`` branch.
    A current count already at or below ``n_min`` is flagged
    DegenerateVisibility and floored outright.
    """
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    cap = float(params.t_max)
    floor = min(float(t_floor), cap)
    if n0 <= params.n_min:
        warnings.warn(
            f"visible count {n0} at or below minimum {params.n_min}; "
            "budget floored", DegenerateVisibility, stacklevel=2)
        return floor
    if n_future >= n0:
        return cap
    t = (n0 - params.n_min) / (n0 - n_future) * params.t_p
    return min(max(t, floor), cap)


def make_virtual_keyframe(graph: BAGraph, estimates: Estimates,
                          predicted_pose: Pose):
    """Virtual camera at the predicted pose with synthetic observations
    of every currently estimated point it would see.

    Returns ``(CameraVertex, [Observation])``; the camera id is one past
    the largest id in the graph and carries the intrinsics of the newest
    real camera.
    """
    real = [c for c in graph.cameras if not c.is_virtual]
    if not real:
        raise NoVisiblePoints("graph has no real cameras")
    ref = max(real, key=lambda c: c.id)
    intr = graph.intrinsics[ref.intrinsics_ref]
    visible, uv = _project_points(estimates.points, predicted_pose, intr)
    if not visible.any():
        raise NoVisiblePoints("predicted pose sees no map points")
    vid = max(c.id for c in graph.cameras) + 1
    cam = CameraVertex(vid, predicted_pose, intrinsics_ref=ref.intrinsics_ref,
                       fixed=False, is_virtual=True)
    obs = [Observation(vid, pid, uv[j])
           for j, pid in enumerate(estimates.point_ids) if visible[j]]
    return cam, obs


# -------------------------------------------------------------------
# decision + pipeline step
# -------------------------------------------------------------------

@dataclass(frozen=True)
class BudgetDecision:
    """Outcome of one budget evaluation."""

    n0: int
    n_future: int
    t_b: float
    k: int
    m: int               # covisible pool size including the current keyframe
    triggered: bool      # k < m: sub-selection ran
    degenerate: bool = False   # n0 was at or below n_min
    fallback: bool = False     # selection failed, covisibility used

    def __post_init__(self):
        if self.triggered != (self.k < self.m):
            raise ValueError("triggered must equal (k < m)")


def budget_aware_local_ba(graph: BAGraph, estimates: Estimates, current_kf,
                          predicted_pose: Pose, model: TimeModel,
                          params: BudgetParams = BudgetParams(),
                          solve_cfg: SolveConfig = SolveConfig(), seed=0, *,
                          epsilon=EPSILON_DEFAULT):
    """One budget-aware local-BA step around ``current_kf``.

    Forecast visibility sets the budget, the time model sizes the
    subgraph, and sub-selection runs only when the target size is below
    the covisible pool.  When it runs, selection is seeded with the
    current keyframe plus a virtual keyframe at the predicted pose; the
    virtual keyframe is stripped before recovery, so the solved problem
    never contains it.  Solved free points are marked optimized_before
    on the parent graph and the measured solve time feeds the model's
    online recalibration.

    Returns ``(estimates, BudgetDecision, Selection or None, SolveReport)``.
    """
    cam = graph.cameras[graph.camera_index(current_kf)]
    intr = graph.intrinsics[cam.intrinsics_ref]
    n0 = predict_visible_count(graph, estimates, estimates.pose(current_kf), intr)
    n_future = predict_visible_count(graph, estimates, predicted_pose, intr)
    t_floor = model.tau(model.k_min)
    degenerate = n0 <= params.n_min
    t_b = predict_budget(max(n0, 1), n_future, params, t_floor=t_floor)
    k = size_for_budget(model, t_b)
    pool = graph.covisible_pool([current_kf])
    m = len(pool) + 1
    triggered = k < m

    fallback = False
    selection = None
    if not triggered:
        work = Selection((current_kf,) + tuple(pool), (current_kf,), (),
                         float("nan"), 0, 0.0, "covis-full")
    else:
        t0 = time.perf_counter()
        try:
            vcam, vobs = make_virtual_keyframe(graph, estimates, predicted_pose)
            aug = BAGraph(list(graph.cameras) + [vcam], graph.points,
                          list(graph.observations) + vobs, graph.intrinsics)
            est_aug = Estimates(
                np.vstack([estimates.cam_q, predicted_pose.q[None, :]]),
                np.vstack([estimates.cam_t, predicted_pose.t[None, :]]),
                estimates.points,
                estimates.cam_ids + (vcam.id,), estimates.point_ids)
            universe = sorted(pool + [current_kf, vcam.id])
            com = selection_matrix(aug, est_aug, universe)
            # k counts real cameras; the virtual root rides along as one extra
            raw = lazier_greedy_select(com, (current_kf, vcam.id), k + 1,
                                       epsilon=epsilon, seed=seed)
            kept = tuple(c for c in raw.camera_ids if c != vcam.id)
            gains, ld = ordered_gains(com, kept)
            selection = Selection(kept, (current_kf,), gains, ld,
                                  raw.n_evaluations,
                                  time.perf_counter() - t0, "gg", seed=seed)
        except BaselError as exc:
            warnings.warn(f"selection failed ({exc}); "
                          "falling back to covisibility", stacklevel=2)
            fallback = True
            selection = covis_select(graph, current_kf, k)
        work = selection

    sub = recover_subgraph(graph, work, PriorPolicy.SLAM_MODE)
    solved_graph = gauge_fixed(sub)
    est_new, report = solve(solved_graph, estimates.restrict(solved_graph),
                            solve_cfg)
    out = estimates.copy()
    out.merge_from(est_new)
    for pid in sub.free_point_ids:
        graph.points[graph.point_index(pid)].optimized_before = True
    model.record_solve(len(solved_graph.cameras), report.wall_time)
    decision = BudgetDecision(n0=n0, n_future=n_future, t_b=t_b, k=k, m=m,
                              triggered=triggered, degenerate=degenerate,
                              fallback=fallback)
    return out, decision, selection, report


# -------------------------------------------------------------------
# calibration-set CSV
# -------------------------------------------------------------------

def write_calibration_csv(samples) -> str:
    """``k,ms`` rows for a ``(k, seconds)`` sample list."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "ms"])
    for k, sec in samples:
        w.writerow([int(k), repr(float(sec) * 1000.0)])
    return buf.getvalue()


def read_calibration_csv(text):
    """Inverse of :func:`write_calibration_csv`; returns (k, seconds)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["k", "ms"]:
        raise ParseError("expected header 'k,ms'", line=1)
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", line=i)
        try:
            out.append((int(row[0]), float(row[1]) / 1000.0))
        except ValueError:
            raise ParseError(f"bad calibration row {row!r}", line=i) from None
    return out
