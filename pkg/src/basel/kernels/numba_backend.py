"""Numba-compiled implementations of the numeric hot kernels.

Loop-style twins of :mod:`basel.kernels.numpy_backend`.  fastmath stays off:
selection and the incremental-vs-batch factor tests assert agreement at
1e-9..1e-12 and reassociation would erode that.
"""

import numpy as np
from numba import njit

NAME = "numba"

_JIT = {"cache": True, "fastmath": False}


@njit(**_JIT)
def residuals_jacobians(R_all, t_all, intr, pts, cam_idx, pt_idx, meas, whiten, depth_eps):
    K = cam_idx.shape[0]
    r = np.zeros((K, 2))
    Jc = np.zeros((K, 2, 6))
    Jp = np.zeros((K, 2, 3))
    valid = np.empty(K, dtype=np.bool_)
    for k in range(K):
        c = cam_idx[k]
        p = pt_idx[k]
        R = R_all[c]
        pw = pts[p]
        x = R[0, 0] * pw[0] + R[0, 1] * pw[1] + R[0, 2] * pw[2] + t_all[c, 0]
        y = R[1, 0] * pw[0] + R[1, 1] * pw[1] + R[1, 2] * pw[2] + t_all[c, 1]
        z = R[2, 0] * pw[0] + R[2, 1] * pw[1] + R[2, 2] * pw[2] + t_all[c, 2]
        if z <= depth_eps:
            valid[k] = False
            continue
        valid[k] = True
        fx = intr[c, 0]
        fy = intr[c, 1]
        u = fx * x / z + intr[c, 2]
        v = fy * y / z + intr[c, 3]
        w00 = whiten[k, 0, 0]
        w10 = whiten[k, 1, 0]
        w11 = whiten[k, 1, 1]
        ru = u - meas[k, 0]
        rv = v - meas[k, 1]
        r[k, 0] = w00 * ru
        r[k, 1] = w10 * ru + w11 * rv

        # Jproj rows: [fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]
        a00 = fx / z
        a02 = -fx * x / (z * z)
        a11 = fy / z
        a12 = -fy * y / (z * z)
        # Jp_raw = Jproj @ R, then whiten
        for j in range(3):
            jp0 = a00 * R[0, j] + a02 * R[2, j]
            jp1 = a11 * R[1, j] + a12 * R[2, j]
            Jp[k, 0, j] = w00 * jp0
            Jp[k, 1, j] = w10 * jp0 + w11 * jp1
        # Jc = [-Jp @ skew(pw) | Jp]
        for a in range(2):
            j0 = Jp[k, a, 0]
            j1 = Jp[k, a, 1]
            j2 = Jp[k, a, 2]
            Jc[k, a, 0] = -(j1 * pw[2] - j2 * pw[1])
            Jc[k, a, 1] = -(j2 * pw[0] - j0 * pw[2])
            Jc[k, a, 2] = -(j0 * pw[1] - j1 * pw[0])
            Jc[k, a, 3] = j0
            Jc[k, a, 4] = j1
            Jc[k, a, 5] = j2
    return r, Jc, Jp, valid


@njit(**_JIT)
def accumulate_blocks(Jc, Jp, r, valid, cam_slot, pt_slot, n_c, n_p):
    K = r.shape[0]
    Hcc = np.zeros((n_c, 6, 6))
    Hpp = np.zeros((n_p, 3, 3))
    eta_c = np.zeros((n_c, 6))
    eta_p = np.zeros((n_p, 3))
    Hcp = np.zeros((K, 6, 3))
    for k in range(K):
        if not valid[k]:
            continue
        ci = cam_slot[k]
        pi = pt_slot[k]
        if ci >= 0:
            for i in range(6):
                for j in range(6):
                    Hcc[ci, i, j] += Jc[k, 0, i] * Jc[k, 0, j] + Jc[k, 1, i] * Jc[k, 1, j]
                eta_c[ci, i] -= Jc[k, 0, i] * r[k, 0] + Jc[k, 1, i] * r[k, 1]
        if pi >= 0:
            for i in range(3):
                for j in range(3):
                    Hpp[pi, i, j] += Jp[k, 0, i] * Jp[k, 0, j] + Jp[k, 1, i] * Jp[k, 1, j]
                eta_p[pi, i] -= Jp[k, 0, i] * r[k, 0] + Jp[k, 1, i] * r[k, 1]
        if ci >= 0 and pi >= 0:
            for i in range(6):
                for j in range(3):
                    Hcp[k, i, j] = Jc[k, 0, i] * Jp[k, 0, j] + Jc[k, 1, i] * Jp[k, 1, j]
    return Hcc, Hpp, Hcp, eta_c, eta_p


@njit(**_JIT)
def schur_reduce(Hcc, Hpp_inv, Hcp, eta_c, eta_p, obs_cam_slot, obs_pt_slot,
                 pair_a, pair_b):
    n_c = Hcc.shape[0]
    dim = 6 * n_c
    M = np.zeros((dim, dim))
    for i in range(n_c):
        for a in range(6):
            for b in range(6):
                M[6 * i + a, 6 * i + b] += Hcc[i, a, b]

    AY = np.empty((6, 3))
    T = np.empty((6, 6))
    for q in range(pair_a.shape[0]):
        ka = pair_a[q]
        kb = pair_b[q]
        p = obs_pt_slot[ka]
        ia = obs_cam_slot[ka]
        ib = obs_cam_slot[kb]
        Y = Hpp_inv[p]
        A = Hcp[ka]
        B = Hcp[kb]
        for i in range(6):
            for j in range(3):
                AY[i, j] = A[i, 0] * Y[0, j] + A[i, 1] * Y[1, j] + A[i, 2] * Y[2, j]
        for i in range(6):
            for j in range(6):
                T[i, j] = AY[i, 0] * B[j, 0] + AY[i, 1] * B[j, 1] + AY[i, 2] * B[j, 2]
        if ia == ib:
            # keep the self-pair block exactly symmetric (see numpy twin)
            for i in range(6):
                for j in range(i + 1, 6):
                    avg = 0.5 * (T[i, j] + T[j, i])
                    T[i, j] = avg
                    T[j, i] = avg
        ra = 6 * ia
        rb = 6 * ib
        for i in range(6):
            for j in range(6):
                M[ra + i, rb + j] -= T[i, j]
        if ia != ib:
            for i in range(6):
                for j in range(6):
                    M[rb + i, ra + j] -= T[j, i]

    g = eta_c.copy().reshape(-1)
    for k in range(obs_cam_slot.shape[0]):
        ci = obs_cam_slot[k]
        pi = obs_pt_slot[k]
        if ci < 0 or pi < 0:
            continue
        Y = Hpp_inv[pi]
        W = Hcp[k]
        e0 = Y[0, 0] * eta_p[pi, 0] + Y[0, 1] * eta_p[pi, 1] + Y[0, 2] * eta_p[pi, 2]
        e1 = Y[1, 0] * eta_p[pi, 0] + Y[1, 1] * eta_p[pi, 1] + Y[1, 2] * eta_p[pi, 2]
        e2 = Y[2, 0] * eta_p[pi, 0] + Y[2, 1] * eta_p[pi, 1] + Y[2, 2] * eta_p[pi, 2]
        for i in range(6):
            g[6 * ci + i] -= W[i, 0] * e0 + W[i, 1] * e1 + W[i, 2] * e2
    return M, g


@njit(**_JIT)
def backsub_points(Hpp_inv, Hcp, eta_p, delta_c, obs_cam_slot, obs_pt_slot):
    n_p = eta_p.shape[0]
    rhs = eta_p.copy()
    for k in range(obs_cam_slot.shape[0]):
        ci = obs_cam_slot[k]
        pi = obs_pt_slot[k]
        if ci < 0 or pi < 0:
            continue
        for j in range(3):
            s = 0.0
            for i in range(6):
                s += Hcp[k, i, j] * delta_c[6 * ci + i]
            rhs[pi, j] -= s
    out = np.empty((n_p, 3))
    for p in range(n_p):
        for i in range(3):
            out[p, i] = (Hpp_inv[p, i, 0] * rhs[p, 0]
                         + Hpp_inv[p, i, 1] * rhs[p, 1]
                         + Hpp_inv[p, i, 2] * rhs[p, 2])
    return out


@njit(**_JIT)
def chol_lower(a, piv_tol):
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= piv_tol:
            return L, j
        d = np.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
    return L, -1


@njit(**_JIT)
def trisolve_lower(L, B):
    n = B.shape[0]
    d = B.shape[1]
    Y = np.zeros((n, d))
    for j in range(n):
        for c in range(d):
            s = B[j, c]
            for k in range(j):
                s -= L[j, k] * Y[k, c]
            Y[j, c] = s / L[j, j]
    return Y
