"""Problem and result file IO: BAL text, a small g2o subset, a native
JSON schema, and the benchmark CSV.

The BAL convention (camera looks down -z, centered pixels, y up) is
converted on the way in by a half-turn about the camera x axis: R and t
are premultiplied by diag(1,-1,-1) and the v pixel coordinate is
negated, after which the stored problem uses the package's +z pinhole
model.  Radial distortion coefficients are carried through unmodeled.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BaselError,
    CountMismatch,
    MalformedHeader,
    ParseError,
    QuatNormWarning,
)
from .geometry import Pose, quat_mul, quat_normalize, quat_to_rotvec, so3_exp_quat
from .graph import (
    BAGraph,
    CameraVertex,
    Estimates,
    Intrinsics,
    Observation,
    PointVertex,
    build_graph,
)

# quaternion of the x-axis half turn used for the BAL frame flip
_Q_FLIP = np.array([0.0, 1.0, 0.0, 0.0])


def _fmt(x):
    """Shortest exact decimal form (repr of a Python float)."""
    return repr(float(x))


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ====================================================================
# BAL text format
# ====================================================================

@dataclass
class BALProblem:
    graph: BAGraph
    estimates: Estimates
    distortion: np.ndarray  # (n_cameras, 2), parsed k1/k2, not modeled


class _Tokens:
    """Whitespace token stream with line tracking for error messages."""

    def __init__(self, text):
        self._items = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self._items.append((tok, lineno))
        self._pos = 0
        self._last_line = 0

    def take(self, kind=float):
        if self._pos >= len(self._items):
            raise ParseError("unexpected end of input", line=self._last_line)
        tok, lineno = self._items[self._pos]
        self._pos += 1
        self._last_line = lineno
        try:
            return kind(tok)
        except ValueError:
            raise ParseError(f"expected {kind.__name__}, got {tok!r}",
                             line=lineno) from None

    def remaining(self):
        return len(self._items) - self._pos


def parse_bal(text) -> BALProblem:
    """Parse a BAL problem: ``n_cams n_pts n_obs`` header, observation
    lines ``cam pt u v``, then 9 values per camera (Rodrigues rotation,
    translation, f, k1, k2) and 3 per point."""
    toks = _Tokens(text)
    if toks.remaining() < 3:
        raise MalformedHeader("header needs n_cameras n_points n_observations")
    try:
        n_cams = toks.take(int)
        n_pts = toks.take(int)
        n_obs = toks.take(int)
    except ParseError as err:
        raise MalformedHeader(f"bad header: {err}") from None
    if n_cams <= 0 or n_pts <= 0 or n_obs < 0:
        raise MalformedHeader(
            f"non-positive header counts {n_cams} {n_pts} {n_obs}")
    expected = n_obs * 4 + n_cams * 9 + n_pts * 3
    if toks.remaining() != expected:
        raise CountMismatch("value", expected, toks.remaining())

    obs_raw = []
    for _ in range(n_obs):
        c = toks.take(int)
        p = toks.take(int)
        u = toks.take(float)
        v = toks.take(float)
        if not (0 <= c < n_cams):
            raise ParseError(f"camera index {c} out of range", line=toks._last_line)
        if not (0 <= p < n_pts):
            raise ParseError(f"point index {p} out of range", line=toks._last_line)
        if not (math.isfinite(u) and math.isfinite(v)):
            raise ParseError("non-finite measurement", line=toks._last_line)
        obs_raw.append((c, p, u, -v))  # v negated by the frame flip

    cam_params = np.array([[toks.take(float) for _ in range(9)]
                           for _ in range(n_cams)])
    pts = np.array([[toks.take(float) for _ in range(3)]
                    for _ in range(n_pts)]).reshape(n_pts, 3)

    # image size synthesized from the measurement spread (BAL has none)
    if obs_raw:
        span = max(max(abs(o[2]), abs(o[3])) for o in obs_raw)
    else:
        span = 0.0
    half = math.floor(span * 1.1) + 4.0
    width = height = 2.0 * half
    cx = cy = half

    intrinsics = []
    cameras = []
    for i in range(n_cams):
        rod = cam_params[i, 0:3]
        t = cam_params[i, 3:6]
        f = cam_params[i, 6]
        if f <= 0 or not math.isfinite(f):
            raise ParseError(f"camera {i} has unusable focal {f}")
        q = quat_mul(_Q_FLIP, so3_exp_quat(rod))
        t_flip = np.array([t[0], -t[1], -t[2]])
        intrinsics.append(Intrinsics(f, f, cx, cy, width, height))
        cameras.append(CameraVertex(i, Pose(q, t_flip), intrinsics_ref=i))

    seen = set(p for _, p, _, _ in obs_raw)
    dropped = [j for j in range(n_pts) if j not in seen]
    if dropped:
        warnings.warn(f"dropping {len(dropped)} unobserved points", stacklevel=2)
    points = [PointVertex(n_cams + j, pts[j]) for j in range(n_pts) if j in seen]
    observations = [
        Observation(c, n_cams + p, np.array([u + cx, v + cy]))
        for c, p, u, v in obs_raw]

    graph = build_graph(cameras, points, observations, intrinsics)
    return BALProblem(graph, Estimates.from_graph(graph), cam_params[:, 7:9].copy())


def write_bal(graph: BAGraph, est: Estimates = None, distortion=None) -> str:
    """Serialize to BAL text (inverse of the parse-time frame flip).

    Cameras must have fx == fy (BAL has a single focal); point ids are
    renumbered densely in graph order.
    """
    if est is None:
        est = Estimates.from_graph(graph)
    pt_index = {p.id: j for j, p in enumerate(graph.points)}
    cam_index = {c.id: i for i, c in enumerate(graph.cameras)}
    out = io.StringIO()
    out.write(f"{len(graph.cameras)} {len(graph.points)} {len(graph.observations)}\n")
    for obs in graph.observations:
        intr = graph.intrinsics[graph.cameras[cam_index[obs.camera_id]].intrinsics_ref]
        u = obs.measurement[0] - intr.cx
        v = -(obs.measurement[1] - intr.cy)
        out.write(f"{cam_index[obs.camera_id]} {pt_index[obs.point_id]} "
                  f"{_fmt(u)} {_fmt(v)}\n")
    for i, cam in enumerate(graph.cameras):
        intr = graph.intrinsics[cam.intrinsics_ref]
        if abs(intr.fx - intr.fy) > 1e-12 * max(intr.fx, intr.fy):
            raise ValueError(f"camera {cam.id}: BAL needs fx == fy")
        pose = est.pose(cam.id)
        q_bal = quat_mul(_Q_FLIP, pose.q)  # flip is involutive
        rod = quat_to_rotvec(q_bal)
        t = pose.t
        k1, k2 = (0.0, 0.0) if distortion is None else distortion[i]
        for val in (*rod, t[0], -t[1], -t[2], intr.fx, k1, k2):
            out.write(_fmt(val) + "\n")
    for p in graph.points:
        x, y, z = est.point(p.id)
        out.write(f"{_fmt(x)}\n{_fmt(y)}\n{_fmt(z)}\n")
    return out.getvalue()


# ====================================================================
# g2o subset
# ====================================================================

@dataclass
class G2oReport:
    skipped_tags: int = 0
    skipped_lines: list = field(default_factory=list)
    dropped_points: int = 0
    renormalized_quats: int = 0


def parse_g2o_subset(text):
    """Parse VERTEX_SE3:QUAT / VERTEX_TRACKXYZ / VERTEX_XYZ and the
    monocular projection edge EDGE_PROJECT_P2MC.

    Returns ``(graph, estimates, report)``; unknown tags are counted and
    skipped, points without edges are dropped.  SE3 vertices are taken
    as world-to-camera transforms with ``tx ty tz qx qy qz qw`` layout.
    """
    cameras = {}
    points = {}
    edges = []
    report = G2oReport()

    def fail(lineno, msg):
        raise ParseError(msg, line=lineno)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "VERTEX_SE3:QUAT":
                if len(parts) != 9:
                    fail(lineno, f"VERTEX_SE3:QUAT needs 8 numbers, got {len(parts) - 1}")
                vid = int(parts[1])
                tx, ty, tz, qx, qy, qz, qw = map(float, parts[2:9])
                q = np.array([qw, qx, qy, qz])
                norm = float(np.linalg.norm(q))
                if norm <= 1e-3:
                    fail(lineno, f"quaternion norm {norm:.2e} too small to normalize")
                if abs(norm - 1.0) > 1e-3:
                    warnings.warn(
                        f"line {lineno}: quaternion norm {norm:.6f} renormalized",
                        QuatNormWarning, stacklevel=2)
                    report.renormalized_quats += 1
                if vid in cameras:
                    fail(lineno, f"duplicate camera id {vid}")
                cameras[vid] = Pose(quat_normalize(q), np.array([tx, ty, tz]))
            elif tag in ("VERTEX_TRACKXYZ", "VERTEX_XYZ"):
                if len(parts) != 5:
                    fail(lineno, f"{tag} needs 4 numbers, got {len(parts) - 1}")
                vid = int(parts[1])
                if vid in points:
                    fail(lineno, f"duplicate point id {vid}")
                points[vid] = np.array([float(parts[2]), float(parts[3]),
                                        float(parts[4])])
            elif tag == "EDGE_PROJECT_P2MC":
                if len(parts) not in (5, 8):
                    fail(lineno, "EDGE_PROJECT_P2MC needs point cam u v "
                                 "[i00 i01 i11]")
                pid, cid = int(parts[1]), int(parts[2])
                u, v = float(parts[3]), float(parts[4])
                if not (math.isfinite(u) and math.isfinite(v)):
                    fail(lineno, "non-finite measurement")
                if len(parts) == 8:
                    i00, i01, i11 = map(float, parts[5:8])
                    info = np.array([[i00, i01], [i01, i11]])
                    det = i00 * i11 - i01 * i01
                    if not np.isfinite(det) or i00 <= 0 or det <= 0:
                        fail(lineno, "information matrix not positive definite")
                    sigma = np.linalg.inv(info)
                else:
                    sigma = np.eye(2)
                edges.append((lineno, pid, cid, u, v, sigma))
            else:
                report.skipped_tags += 1
                report.skipped_lines.append(lineno)
        except ValueError:
            fail(lineno, f"bad numeric token in {tag} line")

    observations = []
    seen_points = set()
    seen_edges = set()
    for lineno, pid, cid, u, v, sigma in edges:
        if cid not in cameras:
            fail(lineno, f"edge references unknown camera {cid}")
        if pid not in points:
            fail(lineno, f"edge references unknown point {pid}")
        if (cid, pid) in seen_edges:
            fail(lineno, f"duplicate edge camera {cid} point {pid}")
        seen_edges.add((cid, pid))
        try:
            observations.append(Observation(cid, pid, np.array([u, v]), sigma))
        except ValueError as err:
            fail(lineno, str(err))
        seen_points.add(pid)
    dropped = set(points) - seen_points
    report.dropped_points = len(dropped)

    span = 1.0
    for obs in observations:
        span = max(span, abs(obs.measurement[0]), abs(obs.measurement[1]))
    half = math.floor(span * 1.1) + 4.0
    intr = Intrinsics(1.0, 1.0, half, half, 2.0 * half, 2.0 * half)

    cam_list = [CameraVertex(cid, cameras[cid], 0) for cid in sorted(cameras)]
    pt_list = [PointVertex(pid, points[pid]) for pid in sorted(seen_points)]
    graph = build_graph(cam_list, pt_list, observations, [intr])
    return graph, Estimates.from_graph(graph), report


# ====================================================================
# native JSON schema
# ====================================================================

def problem_to_dict(graph: BAGraph, est: Estimates = None) -> dict:
    if est is None:
        est = Estimates.from_graph(graph)
    return {
        "intrinsics": [
            {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
             "width": i.width, "height": i.height}
            for i in graph.intrinsics],
        "cameras": [
            {"id": c.id,
             "q": list(est.pose(c.id).q),
             "t": list(est.pose(c.id).t),
             "intrinsics": c.intrinsics_ref,
             "fixed": c.fixed,
             "virtual": c.is_virtual}
            for c in graph.cameras],
        "points": [
            {"id": p.id,
             "xyz": list(est.point(p.id)),
             "fixed": p.fixed,
             "optimized_before": p.optimized_before}
            for p in graph.points],
        "observations": [
            {"camera": o.camera_id, "point": o.point_id,
             "uv": list(o.measurement),
             "sigma": [list(row) for row in o.sigma]}
            for o in graph.observations],
    }


def problem_from_dict(data: dict):
    try:
        intr = [Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"],
                           d["width"], d["height"])
                for d in data["intrinsics"]]
        cameras = [
            CameraVertex(d["id"], Pose(np.array(d["q"]), np.array(d["t"])),
                         d.get("intrinsics", 0), d.get("fixed", False),
                         d.get("virtual", False))
            for d in data["cameras"]]
        points = [
            PointVertex(d["id"], np.array(d["xyz"]), d.get("fixed", False),
                        d.get("optimized_before", False))
            for d in data["points"]]
        observations = [
            Observation(d["camera"], d["point"], np.array(d["uv"]),
                        np.array(d.get("sigma", [[1.0, 0.0], [0.0, 1.0]])))
            for d in data["observations"]]
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"bad problem JSON: {err}") from None
    try:
        graph = build_graph(cameras, points, observations, intr)
    except (ValueError, BaselError) as err:
        # inconsistent but well-formed JSON is still a parse failure
        raise ParseError(f"invalid problem: {err}") from None
    return graph, Estimates.from_graph(graph)


def write_problem_json(graph: BAGraph, est: Estimates = None) -> str:
    return json.dumps(problem_to_dict(graph, est), indent=1, default=_json_default)


def parse_problem_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON: {err.msg}", line=err.lineno) from None
    if not isinstance(data, dict):
        raise ParseError("problem JSON must be an object")
    return problem_from_dict(data)


def estimates_to_dict(est: Estimates) -> dict:
    return {
        "cam_ids": list(est.cam_ids),
        "cam_q": [list(row) for row in est.cam_q],
        "cam_t": [list(row) for row in est.cam_t],
        "point_ids": list(est.point_ids),
        "points": [list(row) for row in est.points],
    }


def estimates_from_dict(data: dict) -> Estimates:
    try:
        return Estimates(np.array(data["cam_q"], dtype=np.float64).reshape(-1, 4),
                         np.array(data["cam_t"], dtype=np.float64).reshape(-1, 3),
                         np.array(data["points"], dtype=np.float64).reshape(-1, 3),
                         tuple(data["cam_ids"]), tuple(data["point_ids"]))
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"bad estimates JSON: {err}") from None


def write_scene_json(graph, gt, initial, config_dict=None) -> str:
    return json.dumps({
        "config": config_dict or {},
        "problem": problem_to_dict(graph, gt),
        "initial": estimates_to_dict(initial),
    }, indent=1, default=_json_default)


def parse_scene_json(text):
    """Returns ``(graph, gt, initial, config_dict)``."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON: {err.msg}", line=err.lineno) from None
    if not isinstance(data, dict) or "problem" not in data:
        raise ParseError("scene JSON must be an object with a 'problem' key")
    graph, gt = problem_from_dict(data["problem"])
    initial = (estimates_from_dict(data["initial"])
               if "initial" in data else gt.copy())
    return graph, gt, initial, data.get("config", {})


# ====================================================================
# benchmark results CSV
# ====================================================================

RESULT_COLUMNS = (
    "method", "fraction", "k", "n_cameras", "n_points", "logdet",
    "select_ms", "solve_ms", "total_ms", "iterations",
    "rmse_m", "rmse_common_m", "seed",
)


@dataclass(frozen=True)
class ResultRecord:
    method: str
    fraction: float
    k: int
    n_cameras: int
    n_points: int
    logdet: float
    select_ms: float
    solve_ms: float
    iterations: int
    rmse_m: float
    rmse_common_m: float
    seed: int

    def __post_init__(self):
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"fraction {self.fraction} outside (0, 1]")
        if self.select_ms < 0 or self.solve_ms < 0:
            raise ValueError("negative timing")

    @property
    def total_ms(self):
        return self.select_ms + self.solve_ms

    def row(self):
        return [self.method, _fmt(self.fraction), self.k, self.n_cameras,
                self.n_points, _fmt(self.logdet), _fmt(self.select_ms),
                _fmt(self.solve_ms), _fmt(self.total_ms), self.iterations,
                _fmt(self.rmse_m), _fmt(self.rmse_common_m), self.seed]


def write_results_csv(records) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for rec in records:
        writer.writerow(rec.row())
    return out.getvalue()


def read_results_csv(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV") from None
    if tuple(header) != RESULT_COLUMNS:
        raise ParseError(f"unexpected CSV header {header}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(RESULT_COLUMNS):
            raise ParseError(f"expected {len(RESULT_COLUMNS)} fields, "
                             f"got {len(row)}", line=lineno)
        try:
            records.append(ResultRecord(
                method=row[0], fraction=float(row[1]), k=int(row[2]),
                n_cameras=int(row[3]), n_points=int(row[4]),
                logdet=float(row[5]), select_ms=float(row[6]),
                solve_ms=float(row[7]), iterations=int(row[9]),
                rmse_m=float(row[10]), rmse_common_m=float(row[11]),
                seed=int(row[12])))
        except ValueError as err:
            raise ParseError(f"bad record: {err}", line=lineno) from None
    return records
