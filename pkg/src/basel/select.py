"""Camera-subset selection on the reduced camera-only matrix.

``greedy_select`` and ``lazier_greedy_select`` maximize the
log-determinant of the selected principal submatrix through persistent
incremental Cholesky extensions; ``covis_select`` / ``random_select``
are the comparison baselines and ``brute_force_select`` the exhaustive
oracle.  ``recover_subgraph`` turns a selection back into a solvable
camera+point problem under a single-view prior policy.
"""

from __future__ import annotations

import enum
import itertools
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import CameraOnlyMatrix, schur_camera_matrix, assemble
from .blockchol import cholesky, extend_cholesky, extension_gain
from .errors import (
    EmptySubProblem,
    EmptySubset,
    KTooLargeWarning,
    TooLargeToEnumerate,
    UnknownCamera,
)
from .graph import BAGraph, Estimates, subgraph

EPSILON_DEFAULT = 0.0025
ENUMERATION_CAP = 2_000_000
# must dominate Schur cancellation noise (grows with point-block
# conditioning) or near-null gauge directions of the all-free selection
# matrix come out slightly negative and refuse to factor
SELECTION_JITTER_REL = 1e-5


@dataclass(frozen=True)
class Selection:
    """Ordered camera subset with its selection trace."""

    camera_ids: tuple      # roots first, then picks in selection order
    root_ids: tuple
    gains: tuple           # per-step marginal logDet (nats), aligned with camera_ids
    logdet: float
    n_evaluations: int
    wall_time: float
    method: str
    seed: int = None

    def __post_init__(self):
        if not set(self.root_ids) <= set(self.camera_ids):
            raise ValueError("roots must be contained in the selection")
        if any(not math.isfinite(g) for g in self.gains):
            raise ValueError("selection gains must be finite")


class PriorPolicy(enum.Enum):
    """How single-view points are handled during subgraph recovery."""

    GENERAL_BA = "general-ba"   # drop them
    SLAM_MODE = "slam-mode"     # keep as fixed priors iff optimized before


@dataclass
class SubProblem:
    graph: BAGraph
    free_point_ids: tuple
    prior_point_ids: tuple
    selection: Selection
    policy: PriorPolicy


def selection_matrix(graph: BAGraph, est: Estimates, camera_ids,
                     delta_rel=1e-8, jitter_rel=SELECTION_JITTER_REL) -> CameraOnlyMatrix:
    """Reduced camera matrix over ``camera_ids`` for selection scoring.

    All listed cameras are treated as free (selection needs every
    candidate present in M); the trace-scaled diagonal jitter keeps the
    unfixed-gauge matrix safely factorable.
    """
    cam_set = set(camera_ids)
    pts = sorted(set().union(*(graph.points_seen_by(c) for c in camera_ids)))
    sub = subgraph(graph, camera_ids, pts,
                   camera_fixed={c: False for c in cam_set})
    system = assemble(sub, est.restrict(sub))
    return schur_camera_matrix(system, delta_rel=delta_rel, jitter_rel=jitter_rel)


# -------------------------------------------------------------------
# shared helpers
# -------------------------------------------------------------------

def _root_factor(com: CameraOnlyMatrix, root_ids):
    """Factor of the roots-only submatrix plus sequential root gains."""
    for r in root_ids:
        if r not in com.block_of:
            raise UnknownCamera(r)
    order = []
    gains = []
    factor = cholesky(np.zeros((0, 0)))
    for r in root_ids:
        b = com.block_of[r]
        B = _border(com, order, b)
        factor, g = extend_cholesky(factor, B, com.M.block(b, b), index=b)
        order.append(b)
        gains.append(g)
    # committed extensions are not oracle evaluations: count starts at 0
    return factor, order, gains, 0


def _border(com: CameraOnlyMatrix, order, c):
    if not order:
        return np.zeros((0, 6))
    return np.concatenate([com.M.block(i, c) for i in order], axis=0)


def _clamp_k(k, n_roots, pool_size, method):
    cap = n_roots + pool_size
    if k > cap:
        warnings.warn(f"{method}: k={k} exceeds pool+roots={cap}, clamped",
                      KTooLargeWarning, stacklevel=3)
        return cap
    if k < n_roots:
        raise ValueError(f"k={k} smaller than the {n_roots} roots")
    return k


def ordered_gains(com: CameraOnlyMatrix, camera_ids):
    """Sequential extension gains and final logDet for a fixed ordering."""
    order = []
    gains = []
    factor = cholesky(np.zeros((0, 0)))
    for cid in camera_ids:
        b = com.block_of[cid]
        factor, g = extend_cholesky(factor, _border(com, order, b),
                                    com.M.block(b, b), index=b)
        order.append(b)
        gains.append(g)
    return tuple(gains), factor.logdet


def subset_logdet(com: CameraOnlyMatrix, camera_ids) -> float:
    """logDet of the principal submatrix for the given cameras."""
    if not len(camera_ids):
        raise EmptySubset("empty camera subset")
    blocks = [com.block_of[c] for c in camera_ids]
    return cholesky(
        com.M.submatrix(blocks)).logdet if blocks else 0.0


# -------------------------------------------------------------------
# selection methods
# -------------------------------------------------------------------

def greedy_select(com: CameraOnlyMatrix, root_ids, k) -> Selection:
    """Pick the candidate with the largest marginal logDet each round.

    Ties break to the lowest camera id; ``k`` counts roots and is
    clamped to the available pool with a warning.
    """
    t0 = time.perf_counter()
    root_ids = tuple(root_ids)
    pool = sorted(c for c in com.camera_ids if c not in set(root_ids))
    k = _clamp_k(k, len(root_ids), len(pool), "greedy_select")
    factor, order, gains, n_eval = _root_factor(com, root_ids)
    chosen = list(root_ids)
    remaining = [(cid, com.block_of[cid]) for cid in pool]
    while len(chosen) < k:
        best = None
        for cid, b in remaining:
            g = extension_gain(factor, _border(com, order, b), com.M.block(b, b))
            n_eval += 1
            if best is None or g > best[0]:
                best = (g, cid, b)
        g, cid, b = best
        factor, _ = extend_cholesky(factor, _border(com, order, b),
                                    com.M.block(b, b), index=b)
        order.append(b)
        chosen.append(cid)
        gains.append(g)
        remaining = [(c, bb) for c, bb in remaining if c != cid]
    return Selection(tuple(chosen), root_ids, tuple(gains), factor.logdet,
                     n_eval, time.perf_counter() - t0, "greedy")


def lazier_greedy_select(com: CameraOnlyMatrix, root_ids, k,
                         epsilon=EPSILON_DEFAULT, seed=0) -> Selection:
    """Greedy over a random candidate sample per round.

    Every round draws ``s = ceil((m / picks) * ln(1/eps))`` candidates
    without replacement from the remaining pool (m = initial pool size,
    picks = k - |roots|), keeping the expected approximation within
    (1 - 1/e - eps) of optimal while evaluating O(m ln(1/eps)) gains
    total, independent of k.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    t0 = time.perf_counter()
    root_ids = tuple(root_ids)
    pool = sorted(c for c in com.camera_ids if c not in set(root_ids))
    k = _clamp_k(k, len(root_ids), len(pool), "lazier_greedy_select")
    picks = k - len(root_ids)
    rng = np.random.default_rng(seed)
    factor, order, gains, n_eval = _root_factor(com, root_ids)
    chosen = list(root_ids)
    remaining = [(cid, com.block_of[cid]) for cid in pool]
    s = max(1, math.ceil((len(pool) / picks) * math.log(1.0 / epsilon))) if picks else 0
    for _ in range(picks):
        take = min(s, len(remaining))
        idx = rng.choice(len(remaining), size=take, replace=False)
        idx.sort()  # ascending id order so exact ties stay deterministic
        best = None
        for i in idx:
            cid, b = remaining[i]
            g = extension_gain(factor, _border(com, order, b), com.M.block(b, b))
            n_eval += 1
            if best is None or g > best[0]:
                best = (g, cid, b)
        g, cid, b = best
        factor, _ = extend_cholesky(factor, _border(com, order, b),
                                    com.M.block(b, b), index=b)
        order.append(b)
        chosen.append(cid)
        gains.append(g)
        remaining = [(c, bb) for c, bb in remaining if c != cid]
    return Selection(tuple(chosen), root_ids, tuple(gains), factor.logdet,
                     n_eval, time.perf_counter() - t0, "lazier", seed=seed)


def covis_select(graph: BAGraph, root, k, com: CameraOnlyMatrix = None) -> Selection:
    """Root plus the top-(k-1) cameras by covisibility weight with the
    root; ties break to the lowest id.  When ``com`` is given the
    selection's logDet trace is filled in, otherwise gains are empty."""
    t0 = time.perf_counter()
    graph.camera_index(root)  # validates
    pool = graph.covisible_pool([root])
    k = _clamp_k(k, 1, len(pool), "covis_select")
    ranked = sorted(pool, key=lambda c: (-graph.covisibility_weight(root, c), c))
    chosen = (root,) + tuple(ranked[:k - 1])
    gains, ld = ((), float("nan"))
    if com is not None:
        gains, ld = ordered_gains(com, chosen)
    return Selection(chosen, (root,), gains, ld, 0,
                     time.perf_counter() - t0, "covis")


def random_select(graph: BAGraph, root, k, seed=0, pool=None,
                  com: CameraOnlyMatrix = None) -> Selection:
    """Root plus a uniform (k-1)-subset of the other cameras."""
    t0 = time.perf_counter()
    graph.camera_index(root)
    if pool is None:
        pool = [c.id for c in graph.cameras if c.id != root]
    pool = sorted(pool)
    k = _clamp_k(k, 1, len(pool), "random_select")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=k - 1, replace=False)
    chosen = (root,) + tuple(pool[i] for i in picks)
    gains, ld = ((), float("nan"))
    if com is not None:
        gains, ld = ordered_gains(com, chosen)
    return Selection(chosen, (root,), gains, ld, 0,
                     time.perf_counter() - t0, "random", seed=seed)


def brute_force_select(com: CameraOnlyMatrix, root_ids, k,
                       cap=ENUMERATION_CAP) -> Selection:
    """Exact argmax of subset logDet by exhaustive enumeration.

    Evaluates determinants through ``numpy.linalg.slogdet`` so the
    result is an oracle independent of the incremental-Cholesky path.
    Ties resolve to the lexicographically smallest id tuple.
    """
    t0 = time.perf_counter()
    root_ids = tuple(root_ids)
    for r in root_ids:
        if r not in com.block_of:
            raise UnknownCamera(r)
    pool = sorted(c for c in com.camera_ids if c not in set(root_ids))
    k = _clamp_k(k, len(root_ids), len(pool), "brute_force_select")
    picks = k - len(root_ids)
    n_subsets = math.comb(len(pool), picks)
    if n_subsets > cap:
        raise TooLargeToEnumerate(n_subsets, cap)
    root_blocks = [com.block_of[r] for r in root_ids]
    best = None
    n_eval = 0
    for combo in itertools.combinations(pool, picks):
        blocks = root_blocks + [com.block_of[c] for c in combo]
        sign, ld = np.linalg.slogdet(com.M.submatrix(blocks))
        n_eval += 1
        if sign <= 0:
            continue
        if best is None or ld > best[0]:
            best = (ld, combo)
    if best is None:
        raise EmptySubset("no positive-definite subset found")
    ld, combo = best
    chosen = root_ids + combo
    gains, _ = ordered_gains(com, chosen)
    return Selection(chosen, root_ids, gains, ld, n_eval,
                     time.perf_counter() - t0, "oracle")


def full_select(com: CameraOnlyMatrix, root_ids) -> Selection:
    """The whole pool, roots first (no selection pressure)."""
    t0 = time.perf_counter()
    root_ids = tuple(root_ids)
    rest = sorted(c for c in com.camera_ids if c not in set(root_ids))
    chosen = root_ids + tuple(rest)
    gains, ld = ordered_gains(com, chosen)
    return Selection(chosen, root_ids, gains, ld, 0,
                     time.perf_counter() - t0, "full")


# -------------------------------------------------------------------
# subgraph recovery
# -------------------------------------------------------------------

def recover_subgraph(graph: BAGraph, selection: Selection,
                     policy: PriorPolicy = PriorPolicy.GENERAL_BA) -> SubProblem:
    """Restrict the problem to the selected cameras and their points.

    Points seen by >= 2 selected cameras stay free.  Single-view points
    are dropped under GENERAL_BA; under SLAM_MODE they are kept as fixed
    priors iff they were optimized before, else dropped.
    """
    cam_ids = list(selection.camera_ids)
    cam_set = set(cam_ids)
    views = {}
    for cid in cam_ids:
        for pid in graph.points_seen_by(cid):
            views[pid] = views.get(pid, 0) + 1

    free_pts, prior_pts = [], []
    for pid, n in views.items():
        if n >= 2:
            free_pts.append(pid)
        elif policy is PriorPolicy.SLAM_MODE:
            if graph.points[graph.point_index(pid)].optimized_before:
                prior_pts.append(pid)
    if not free_pts:
        raise EmptySubProblem(
            f"no point is seen by >= 2 of the {len(cam_ids)} selected cameras")
    free_pts.sort()
    prior_pts.sort()

    point_fixed = {pid: True for pid in prior_pts}
    sub = subgraph(graph, cam_ids, free_pts + prior_pts, point_fixed=point_fixed)
    return SubProblem(sub, tuple(free_pts), tuple(prior_pts), selection, policy)


def gauge_fixed(sub: SubProblem) -> BAGraph:
    """Subproblem graph with the first root and the earliest other
    selected camera marked fixed (monocular gauge anchors)."""
    sel = sub.selection
    anchor = sel.root_ids[0]
    others = sorted(c for c in sel.camera_ids if c != anchor)
    fixed = {anchor: True}
    if others:
        fixed[others[0]] = True
    return subgraph(sub.graph, list(sel.camera_ids),
                    [p.id for p in sub.graph.points], camera_fixed=fixed)
