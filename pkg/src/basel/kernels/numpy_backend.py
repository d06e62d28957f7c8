"""Vectorized NumPy implementations of the numeric hot kernels.

This is the fallback path used when numba is unavailable or disabled via
``BASEL_NO_NUMBA=1``.  Signatures and semantics match
:mod:`basel.kernels.numba_backend` exactly; the parity test suite compares
the two element-wise.
"""

import numpy as np

NAME = "numpy"


def residuals_jacobians(R_all, t_all, intr, pts, cam_idx, pt_idx, meas, whiten, depth_eps):
    """Whitened reprojection residuals and analytical Jacobians.

    Returns ``(r, Jc, Jp, valid)`` with shapes (K,2), (K,2,6), (K,2,3), (K,).
    ``Jc`` columns are ordered [rotation(3) | translation(3)] for the
    right-multiplied pose increment.  Rows with camera-frame depth below
    ``depth_eps`` are flagged invalid and zeroed.
    """
    R = R_all[cam_idx]
    t = t_all[cam_idx]
    pw = pts[pt_idx]
    pc = np.einsum("kij,kj->ki", R, pw) + t
    z = pc[:, 2]
    valid = z > depth_eps
    zs = np.where(valid, z, 1.0)

    fx = intr[cam_idx, 0]
    fy = intr[cam_idx, 1]
    u = fx * pc[:, 0] / zs + intr[cam_idx, 2]
    v = fy * pc[:, 1] / zs + intr[cam_idx, 3]

    K = len(cam_idx)
    Jproj = np.zeros((K, 2, 3))
    Jproj[:, 0, 0] = fx / zs
    Jproj[:, 0, 2] = -fx * pc[:, 0] / (zs * zs)
    Jproj[:, 1, 1] = fy / zs
    Jproj[:, 1, 2] = -fy * pc[:, 1] / (zs * zs)

    Jp = np.einsum("kab,kbi,kij->kaj", whiten, Jproj, R)
    r = np.einsum("kab,kb->ka", whiten, np.stack([u, v], axis=1) - meas)

    # rotation block: -Jp @ [pw]_x
    sk = np.zeros((K, 3, 3))
    sk[:, 0, 1] = -pw[:, 2]
    sk[:, 0, 2] = pw[:, 1]
    sk[:, 1, 0] = pw[:, 2]
    sk[:, 1, 2] = -pw[:, 0]
    sk[:, 2, 0] = -pw[:, 1]
    sk[:, 2, 1] = pw[:, 0]
    Jc = np.concatenate([-np.einsum("kai,kij->kaj", Jp, sk), Jp], axis=2)

    bad = ~valid
    r[bad] = 0.0
    Jc[bad] = 0.0
    Jp[bad] = 0.0
    return r, Jc, Jp, valid


def accumulate_blocks(Jc, Jp, r, valid, cam_slot, pt_slot, n_c, n_p):
    """Accumulate normal-equation blocks from per-observation Jacobians.

    ``cam_slot`` / ``pt_slot`` map observations to free-variable slots, -1
    for fixed vertices.  Returns ``(Hcc, Hpp, Hcp, eta_c, eta_p)`` where
    ``Hcp[k]`` is the camera-point coupling of observation k (zero unless
    both endpoints are free).
    """
    K = len(r)
    mc = valid & (cam_slot >= 0)
    mp = valid & (pt_slot >= 0)
    both = mc & mp

    Hcc = np.zeros((n_c, 6, 6))
    Hpp = np.zeros((n_p, 3, 3))
    eta_c = np.zeros((n_c, 6))
    eta_p = np.zeros((n_p, 3))
    Hcp = np.zeros((K, 6, 3))

    if mc.any():
        np.add.at(Hcc, cam_slot[mc], np.einsum("kai,kaj->kij", Jc[mc], Jc[mc]))
        np.add.at(eta_c, cam_slot[mc], -np.einsum("kai,ka->ki", Jc[mc], r[mc]))
    if mp.any():
        np.add.at(Hpp, pt_slot[mp], np.einsum("kai,kaj->kij", Jp[mp], Jp[mp]))
        np.add.at(eta_p, pt_slot[mp], -np.einsum("kai,ka->ki", Jp[mp], r[mp]))
    if both.any():
        Hcp[both] = np.einsum("kai,kaj->kij", Jc[both], Jp[both])
    return Hcc, Hpp, Hcp, eta_c, eta_p


def schur_reduce(Hcc, Hpp_inv, Hcp, eta_c, eta_p, obs_cam_slot, obs_pt_slot,
                 pair_a, pair_b):
    """Dense camera-only reduced system after eliminating point blocks.

    ``pair_a``/``pair_b`` index observations that share a point and have
    both endpoints free, with ``cam_slot[a] <= cam_slot[b]`` and the
    self-pair (a == b) included once.  Returns ``(M, g)``.
    """
    n_c = Hcc.shape[0]
    dim = 6 * n_c
    M = np.zeros((dim, dim))
    Mv = M.reshape(n_c, 6, n_c, 6).swapaxes(1, 2)  # (n_c, n_c, 6, 6) view
    for i in range(n_c):
        Mv[i, i] += Hcc[i]

    if len(pair_a):
        A = Hcp[pair_a]
        B = Hcp[pair_b]
        Y = Hpp_inv[obs_pt_slot[pair_a]]
        T = np.einsum("qik,qkl,qjl->qij", A, Y, B)
        ia = obs_cam_slot[pair_a]
        ib = obs_cam_slot[pair_b]
        # self-pair A Y A^T is symmetric in exact arithmetic only; skew
        # roundoff grows with cond(Y), so force it before accumulating
        same = ia == ib
        if same.any():
            T[same] = 0.5 * (T[same] + T[same].swapaxes(1, 2))
        np.add.at(Mv, (ia, ib), -T)
        off = ia != ib
        if off.any():
            np.add.at(Mv, (ib[off], ia[off]), -T[off].swapaxes(1, 2))

    g = eta_c.copy()
    both = (obs_cam_slot >= 0) & (obs_pt_slot >= 0)
    if both.any():
        W = Hcp[both]
        Y = Hpp_inv[obs_pt_slot[both]]
        e = eta_p[obs_pt_slot[both]]
        np.add.at(g, obs_cam_slot[both], -np.einsum("kij,kjl,kl->ki", W, Y, e))
    return M, g.reshape(-1)


def backsub_points(Hpp_inv, Hcp, eta_p, delta_c, obs_cam_slot, obs_pt_slot):
    """Recover point increments after the reduced camera solve."""
    rhs = eta_p.copy()
    both = (obs_cam_slot >= 0) & (obs_pt_slot >= 0)
    if both.any():
        dc = delta_c.reshape(-1, 6)[obs_cam_slot[both]]
        np.add.at(rhs, obs_pt_slot[both],
                  -np.einsum("kij,ki->kj", Hcp[both], dc))
    return np.einsum("pij,pj->pi", Hpp_inv, rhs)


def chol_lower(a, piv_tol):
    """Left-looking dense Cholesky; returns ``(L, pivot)``.

    ``pivot`` is -1 on success, else the index of the first diagonal pivot
    whose squared value fell at or below ``piv_tol``.
    """
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j] - L[j, :j] @ L[j, :j]
        if s <= piv_tol:
            return L, j
        d = np.sqrt(s)
        L[j, j] = d
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / d
    return L, -1


def trisolve_lower(L, B):
    """Forward substitution: Y with L @ Y = B (L lower triangular, B (n,d))."""
    n, d = B.shape
    Y = np.zeros((n, d))
    for j in range(n):
        Y[j] = (B[j] - L[j, :j] @ Y[:j]) / L[j, j]
    return Y
