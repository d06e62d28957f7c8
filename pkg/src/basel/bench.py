"""Benchmark runners behind the CLI.

``run_sweep`` compares selection methods over fresh random scenes,
``run_calibrate`` measures solve times across subgraph sizes and fits the
cubic time model, and ``run_pipeline`` replays a simulated trajectory
through :func:`basel.budget.budget_aware_local_ba` step by step.  All
runners return plain records; file writing and exit codes live in
:mod:`basel.cli`.

Determinism: every trial seed is derived from (base seed, indices) via
``numpy.random.SeedSequence``, scenes are regenerated per repeat, and
rows are sorted before writing, so output is reproducible for a given
seed regardless of worker count (timing columns excepted, they measure
the actual run).
"""

from __future__ import annotations

import csv
import io
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .budget import (
    BudgetParams,
    TimeModel,
    budget_aware_local_ba,
    fit_time_model,
    read_calibration_csv,
    write_calibration_csv,
)
from .errors import BaselError
from .formats import ResultRecord
from .graph import BAGraph
from .select import (
    EPSILON_DEFAULT,
    PriorPolicy,
    Selection,
    brute_force_select,
    full_select,
    gauge_fixed,
    greedy_select,
    lazier_greedy_select,
    ordered_gains,
    recover_subgraph,
    selection_matrix,
)
from .simulate import desk_config, generate_scene, paper_config, with_seed
from .solver import SolveConfig, point_rmse, solve

METHODS = ("gg", "greedy", "covis", "random", "full", "oracle")
DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 10))
TRACE_COLUMNS = ("step", "n0", "n_future", "t_b", "k", "m", "triggered",
                 "select_ms", "solve_ms", "logdet")


@dataclass(frozen=True)
class BenchConfig:
    preset: str = "ci"              # "ci" (desk scale) or "paper"
    methods: tuple = ("gg", "covis", "random", "full")
    fractions: tuple = DEFAULT_FRACTIONS
    repeats: int = None             # None: 20 for ci, 100 for paper
    epsilon: float = EPSILON_DEFAULT
    seed: int = 0
    workers: int = 1
    solver: SolveConfig = SolveConfig()
    scene_overrides: dict = None    # SceneConfig field overrides

    def __post_init__(self):
        if self.preset not in ("ci", "paper"):
            raise ValueError(f"unknown preset {self.preset!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if not self.methods:
            raise ValueError("need at least one method")
        if any(not (0.0 < f <= 1.0) for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if self.repeats is not None and self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def effective_repeats(self):
        if self.repeats is not None:
            return self.repeats
        return 100 if self.preset == "paper" else 20

    def scene_config(self, seed):
        make = paper_config if self.preset == "paper" else desk_config
        return make(seed=seed, **(self.scene_overrides or {}))


def derive_seed(*parts) -> int:
    """Deterministic child seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# -------------------------------------------------------------------
# sweep
# -------------------------------------------------------------------

def _select(method, graph, com, roots, k, seed, epsilon):
    """Run one selection method; returns (Selection, selection seconds).

    All methods share the same two roots (the newest camera and the
    lowest-id candidate) so every recovered subproblem carries identical
    gauge anchors and RMSE comparisons stay apples-to-apples.  Gain
    bookkeeping for the baselines happens outside the timed region.
    """
    if method == "gg":
        sel = lazier_greedy_select(com, roots, k, epsilon=epsilon, seed=seed)
        return sel, sel.wall_time
    if method == "greedy":
        sel = greedy_select(com, roots, k)
        return sel, sel.wall_time
    if method == "oracle":
        sel = brute_force_select(com, roots, k)
        return sel, sel.wall_time
    if method == "full":
        sel = full_select(com, roots)
        return sel, 0.0
    root_set = set(roots)
    pool = sorted(c for c in com.camera_ids if c not in root_set)
    n_pick = max(k - len(roots), 0)
    if method == "covis":
        root = roots[0]
        t0 = time.perf_counter()
        ranked = sorted(pool, key=lambda c: (-graph.covisibility_weight(root, c), c))
        chosen = roots + tuple(ranked[:n_pick])
        dt = time.perf_counter() - t0
    elif method == "random":
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(pool), size=n_pick, replace=False)
        chosen = roots + tuple(pool[i] for i in picks)
        dt = time.perf_counter() - t0
    else:
        raise ValueError(f"unknown method {method!r}")
    gains, ld = ordered_gains(com, chosen)
    return Selection(chosen, roots, gains, ld, 0, dt, method,
                     seed=seed if method == "random" else None), dt


def _sweep_repeat(cfg: BenchConfig, r: int):
    """All (fraction, method) trials on one fresh scene.

    Returns (records, n_failures); failed trials are logged to stderr
    and skipped.
    """
    scene_seed = derive_seed(cfg.seed, r)
    scene = generate_scene(cfg.scene_config(scene_seed))
    graph, gt, init = scene.graph, scene.gt, scene.initial
    root = scene.camera_ids[-1]
    universe = sorted(graph.covisible_pool([root]) + [root])
    roots = (root, universe[0])
    com = selection_matrix(graph, init, universe)

    rows, failures = [], 0
    for fi, frac in enumerate(cfg.fractions):
        k = max(len(roots), min(len(universe), round(frac * len(universe))))
        group = {}
        for mi, method in enumerate(cfg.methods):
            seed_m = derive_seed(cfg.seed, r, fi, mi)
            try:
                sel, t_sel = _select(method, graph, com, roots, k,
                                     seed_m, cfg.epsilon)
                sub = recover_subgraph(graph, sel, PriorPolicy.GENERAL_BA)
                solved_graph = gauge_fixed(sub)
                est, report = solve(solved_graph,
                                    init.restrict(solved_graph), cfg.solver)
                group[method] = (sel, sub, est, report, t_sel)
            except BaselError as exc:
                failures += 1
                print(f"[sweep] scene {scene_seed} fraction {frac} "
                      f"{method}: {exc}", file=sys.stderr)
        if not group:
            continue
        common = sorted(set.intersection(
            *(set(sub.free_point_ids) for _, sub, _, _, _ in group.values())))
        for method, (sel, sub, est, report, t_sel) in group.items():
            rows.append(ResultRecord(
                method=method, fraction=frac, k=k,
                n_cameras=len(sel.camera_ids),
                n_points=len(sub.graph.points),
                logdet=sel.logdet,
                select_ms=round(t_sel * 1000.0, 3),
                solve_ms=round(report.wall_time * 1000.0, 3),
                iterations=report.iterations,
                rmse_m=point_rmse(est, gt, sub.free_point_ids),
                rmse_common_m=point_rmse(est, gt, common),
                seed=scene_seed))
    return rows, failures


def _sweep_repeat_star(args):
    return _sweep_repeat(*args)


def run_sweep(cfg: BenchConfig):
    """Returns (records sorted by (fraction, method, seed), failures, trials)."""
    reps = cfg.effective_repeats
    args = [(cfg, r) for r in range(reps)]
    if cfg.workers == 1:
        parts = [_sweep_repeat(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(_sweep_repeat_star, args))
    records = [rec for rows, _ in parts for rec in rows]
    failures = sum(f for _, f in parts)
    records.sort(key=lambda rec: (rec.fraction, rec.method, rec.seed))
    total = reps * len(cfg.methods) * len(cfg.fractions)
    return records, failures, total


# -------------------------------------------------------------------
# calibration
# -------------------------------------------------------------------

DEFAULT_K_LIST = (5, 10, 15, 20, 25, 30)


def run_calibrate(cfg: BenchConfig, k_list=DEFAULT_K_LIST, repeats=3):
    """Measure solve seconds across subgraph sizes and fit the time model.

    Each (k, repeat) trial selects on a fresh scene and times only the
    solve.  The model is fit from the CSV-round-tripped samples so a
    later refit on the exported file reproduces the coefficients bit for
    bit.  Returns (TimeModel, samples CSV text).
    """
    samples = []
    for r in range(repeats):
        for k in sorted(set(int(k) for k in k_list)):
            scene_seed = derive_seed(cfg.seed, r, k)
            scene = generate_scene(cfg.scene_config(scene_seed))
            graph, init = scene.graph, scene.initial
            root = scene.camera_ids[-1]
            universe = sorted(graph.covisible_pool([root]) + [root])
            roots = (root, universe[0])
            com = selection_matrix(graph, init, universe)
            sel = lazier_greedy_select(com, roots, min(k, len(universe)),
                                       epsilon=cfg.epsilon,
                                       seed=derive_seed(cfg.seed, r, k, 1))
            sub = recover_subgraph(graph, sel, PriorPolicy.SLAM_MODE)
            solved_graph = gauge_fixed(sub)
            _, report = solve(solved_graph, init.restrict(solved_graph),
                              cfg.solver)
            samples.append((len(solved_graph.cameras), report.wall_time))
    text = write_calibration_csv(samples)
    model = fit_time_model(read_calibration_csv(text))
    return model, text


# -------------------------------------------------------------------
# pipeline trace
# -------------------------------------------------------------------

def _noisy_pose(pose, rng, trans_rel=0.10, rot_rad=0.02):
    """Predicted-pose noise model: relative Gaussian translation error
    plus a fixed-angle rotation about a random axis."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    sigma = trans_rel * np.linalg.norm(pose.t) / np.sqrt(3.0)
    delta = np.concatenate([axis * rot_rad, rng.normal(0.0, sigma, 3)])
    return pose.retract(delta)


def _cheap_model(n_cameras) -> TimeModel:
    """Placeholder model whose size range always covers the full pool, so
    the budget step never triggers sub-selection (always-full mode).
    Online refits are disabled; real solve times would shrink the range
    and start triggering selection after all."""
    ks = sorted({5, max(6, n_cameras // 3), max(7, (2 * n_cameras) // 3),
                 n_cameras})
    return fit_time_model([(k, 1e-6 * k) for k in ks], refit_interval=10 ** 9)


def run_pipeline(scene, model: TimeModel, params: BudgetParams = BudgetParams(),
                 solve_cfg: SolveConfig = SolveConfig(), mode="gg", seed=0,
                 epsilon=EPSILON_DEFAULT):
    """Walk the trajectory keyframe by keyframe through the budget step.

    The predicted pose for each step is the next keyframe's ground-truth
    pose with the noise model applied (the final keyframe predicts its
    own pose).  ``mode="full"`` swaps in a placeholder time model sized
    so sub-selection never triggers, i.e. every step solves the full
    covisible problem.  Returns (trace rows, final estimates).
    """
    if mode not in ("gg", "full"):
        raise ValueError(f"unknown pipeline mode {mode!r}")
    graph, gt = scene.graph, scene.gt
    est = scene.initial.copy()
    if mode == "full":
        model = _cheap_model(len(graph.cameras))
    rng = np.random.default_rng(derive_seed(seed, 0xB))
    cam_ids = scene.camera_ids
    rows = []
    for i, kf in enumerate(cam_ids):
        nxt = cam_ids[min(i + 1, len(cam_ids) - 1)]
        pred = _noisy_pose(gt.pose(nxt), rng)
        est, dec, sel, report = budget_aware_local_ba(
            graph, est, kf, pred, model, params, solve_cfg,
            seed=derive_seed(seed, i), epsilon=epsilon)
        rows.append({
            "step": kf,
            "n0": dec.n0,
            "n_future": dec.n_future,
            "t_b": dec.t_b,
            "k": dec.k,
            "m": dec.m,
            "triggered": dec.triggered,
            "select_ms": round((sel.wall_time if sel else 0.0) * 1000.0, 3),
            "solve_ms": round(report.wall_time * 1000.0, 3),
            "logdet": sel.logdet if sel else float("nan"),
        })
    return rows, est


def write_trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in rows:
        w.writerow([r["step"], r["n0"], r["n_future"], repr(float(r["t_b"])),
                    r["k"], r["m"], int(r["triggered"]),
                    repr(float(r["select_ms"])), repr(float(r["solve_ms"])),
                    repr(float(r["logdet"]))])
    return buf.getvalue()


def read_trace_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace header {rows[:1]}")
    out = []
    for row in rows[1:]:
        if not row:
            continue
        out.append({
            "step": int(row[0]), "n0": int(row[1]), "n_future": int(row[2]),
            "t_b": float(row[3]), "k": int(row[4]), "m": int(row[5]),
            "triggered": bool(int(row[6])), "select_ms": float(row[7]),
            "solve_ms": float(row[8]), "logdet": float(row[9]),
        })
    return out
