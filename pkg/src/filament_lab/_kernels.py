"""Compiled inner loops for the frame ODEs.

Frames are stored as 3x3 arrays whose rows are (T, e1, e2). Every frame ODE
used here is linear, F' = K F, with K skew-symmetric, so one RK4 kernel per
generator shape covers all cases.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _mgs(F):
    # modified Gram-Schmidt with T kept first
    t = F[0]
    nt = np.sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2])
    F[0] = t / nt
    a = F[1] - (F[1, 0] * F[0, 0] + F[1, 1] * F[0, 1] + F[1, 2] * F[0, 2]) * F[0]
    F[1] = a / np.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    b = F[2] - (F[2, 0] * F[0, 0] + F[2, 1] * F[0, 1] + F[2, 2] * F[0, 2]) * F[0]
    b = b - (b[0] * F[1, 0] + b[1] * F[1, 1] + b[2] * F[1, 2]) * F[1]
    F[2] = b / np.sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2])


@njit(cache=True)
def _apply_x(gr, gi, F, out):
    # T' = gr e1 - gi e2 ; e1' = -gr T ; e2' = gi T
    for k in range(3):
        out[0, k] = gr * F[1, k] - gi * F[2, k]
        out[1, k] = -gr * F[0, k]
        out[2, k] = gi * F[0, k]


@njit(cache=True)
def march_x(F0, g_nodes, g_mid, h, renorm, stride):
    """RK4 march of T' = Re(g N), N' = -conj(g) T.

    ``g_nodes`` has the coefficient at the n nodes in marching order and
    ``g_mid`` at the n-1 midpoints. ``h`` is the signed step. Frames are
    recorded every ``stride`` nodes, together with the running integrals
    I1 = int_0^x F and I2 = int_0^x I1 (trapezoid on the fine grid).
    """
    n = g_nodes.shape[0]
    m = (n - 1) // stride + 1
    frames = np.empty((m, 3, 3))
    i1 = np.zeros((m, 3, 3))
    i2 = np.zeros((m, 3, 3))
    F = F0.copy()
    frames[0] = F
    a1 = np.zeros((3, 3))
    a2 = np.zeros((3, 3))
    k1 = np.empty((3, 3))
    k2 = np.empty((3, 3))
    k3 = np.empty((3, 3))
    k4 = np.empty((3, 3))
    j = 1
    for i in range(n - 1):
        ga = g_nodes[i]
        gm = g_mid[i]
        gb = g_nodes[i + 1]
        _apply_x(ga.real, ga.imag, F, k1)
        _apply_x(gm.real, gm.imag, F + 0.5 * h * k1, k2)
        _apply_x(gm.real, gm.imag, F + 0.5 * h * k2, k3)
        _apply_x(gb.real, gb.imag, F + h * k3, k4)
        F_old = F
        F = F + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if renorm:
            _mgs(F)
        a1_old = a1.copy()
        a1 += 0.5 * h * (F_old + F)
        a2 += 0.5 * h * (a1_old + a1)
        if (i + 1) % stride == 0:
            frames[j] = F
            i1[j] = a1
            i2[j] = a2
            j += 1
    return frames, i1, i2


@njit(cache=True)
def _apply_t(pr, pi, b, F, out):
    # T_t = pr e2 - pi e1 ; e1_t = pi T + b e2 ; e2_t = -pr T - b e1
    for k in range(3):
        out[0, k] = pr * F[2, k] - pi * F[1, k]
        out[1, k] = pi * F[0, k] + b * F[2, k]
        out[2, k] = -pr * F[0, k] - b * F[1, k]


@njit(cache=True)
def march_t(F0, p_nodes, p_mid, b_nodes, b_mid, dts, renorm):
    """RK4 march of T_t = Im(conj(psi_x) N), N_t = -i psi_x T - i b N.

    ``p`` is psi_x and ``b`` = (|psi|^2 - a)/2 at the step nodes and midpoints;
    ``dts`` holds the signed, possibly non-uniform, steps.
    """
    n = p_nodes.shape[0]
    frames = np.empty((n, 3, 3))
    F = F0.copy()
    frames[0] = F
    k1 = np.empty((3, 3))
    k2 = np.empty((3, 3))
    k3 = np.empty((3, 3))
    k4 = np.empty((3, 3))
    for i in range(n - 1):
        dt = dts[i]
        pa = p_nodes[i]
        pm = p_mid[i]
        pb = p_nodes[i + 1]
        _apply_t(pa.real, pa.imag, b_nodes[i], F, k1)
        _apply_t(pm.real, pm.imag, b_mid[i], F + 0.5 * dt * k1, k2)
        _apply_t(pm.real, pm.imag, b_mid[i], F + 0.5 * dt * k2, k3)
        _apply_t(pb.real, pb.imag, b_nodes[i + 1], F + dt * k3, k4)
        F = F + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if renorm:
            _mgs(F)
        frames[i + 1] = F
    return frames
