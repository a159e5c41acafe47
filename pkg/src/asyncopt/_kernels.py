"""numba inner-epoch kernels for the variance-reduced solvers.

The epoch loops are inherently sequential (every step feeds the next
read), so they are jitted as module-level functions over the raw CSR
arrays, mirroring the step-granular python engines in ``solvers``.  All
randomness (delay draws and component indices) comes from the same
counter-based hash the python paths use, so the two paths consume
identical streams.
"""

import numpy as np
from numba import njit

from .delay import schedule_j_nb, splitmix64_nb

LOSS_SQUARED, LOSS_LOGISTIC, LOSS_SMOOTHED_HINGE = 0, 1, 2
FAMILY_ZERO, FAMILY_L2, FAMILY_L1, FAMILY_BOX = 0, 1, 2, 3


@njit(cache=True, nogil=True, inline="always")
def _deriv(loss_id, t, b):
    if loss_id == LOSS_SQUARED:
        return t - b
    if loss_id == LOSS_LOGISTIC:
        m = b * t
        s = np.exp(-abs(m))             # overflow-free, matches the numpy path
        if m >= 0.0:
            return -b * (s / (1.0 + s))
        return -b * (1.0 / (1.0 + s))
    m = b * t
    if m >= 1.0:
        return 0.0
    if m <= 0.0:
        return -b
    return b * (m - 1.0)


@njit(cache=True, nogil=True, inline="always")
def _second_deriv(loss_id, t, b):
    if loss_id == LOSS_SQUARED:
        return 1.0
    if loss_id == LOSS_LOGISTIC:
        s = np.exp(-abs(b * t))
        return s / (1.0 + s) ** 2
    m = b * t
    if 0.0 <= m <= 1.0:
        return b * b
    return 0.0


@njit(cache=True, nogil=True, inline="always")
def _row_dot(row_ptr, col_idx, vals, i, x):
    t = 0.0
    for p in range(row_ptr[i], row_ptr[i + 1]):
        t += vals[p] * x[col_idx[p]]
    return t


@njit(cache=True, nogil=True)
def _prox_inplace(family, mu, lam1, lo, hi, z, g, weight, delta):
    """delta <- argmin_d h(z+d) + <g,d> + (weight/2)||d||^2, closed form."""
    dim = z.shape[0]
    if family == FAMILY_ZERO:
        for q in range(dim):
            delta[q] = -g[q] / weight
    elif family == FAMILY_L2:
        c = mu + weight
        for q in range(dim):
            delta[q] = -(g[q] + mu * z[q]) / c
    elif family == FAMILY_L1:
        thr = lam1 / weight
        for q in range(dim):
            u = z[q] - g[q] / weight
            t = abs(u) - thr
            if t < 0.0:
                t = 0.0
            delta[q] = (t if u >= 0.0 else -t) - z[q]
    else:
        for q in range(dim):
            t = z[q] - g[q] / weight
            if t < lo:
                t = lo
            elif t > hi:
                t = hi
            delta[q] = t - z[q]


@njit(cache=True, nogil=True)
def aasvrg_epoch(row_ptr, col_idx, vals, labels, loss_id,
                 x, z, x_tilde, gbar, tilde_margins,
                 theta1, theta2, a_s, gamma,
                 h_family, h_mu, h_lam1, h_lo, h_hi,
                 sched_kind, tau, sched_seed, warmup, sched_trace,
                 comp_seed, k_base, m, use_hvp,
                 snap_theta3, snap_acc, dump, iterates_out):
    """One inner epoch of the compensated variance-reduced solver.

    ``x``/``z`` are updated in place; ``snap_acc`` accumulates the
    weighted snapshot sum (weights theta3^k; pass 1.0 for the uniform
    rule) and the returned value is the weight total.  With ``use_hvp``
    the delayed compensated gradient is replaced by the first-order
    expansion around the worst-case compensated point.
    """
    n = labels.shape[0]
    dim = x.shape[0]
    ring_len = tau + 3
    ring = np.empty((ring_len, dim))
    for r in range(ring_len):
        ring[r] = x                      # epoch start: momentum reset, x_{-1} = x_0
    w = np.empty(dim)
    g = np.empty(dim)
    delta = np.empty(dim)
    weight = theta1 / gamma
    # worst-case compensation used by the hvp mode
    if a_s < 1.0:
        c_tau = a_s * (1.0 - a_s ** (tau + 1)) / (1.0 - a_s) if a_s > 0.0 else 0.0
    else:
        c_tau = float(tau + 1)
    wsum = 0.0
    wk = 1.0
    for k in range(m):
        if dump:
            iterates_out[k] = x
        wsum += wk
        for q in range(dim):
            snap_acc[q] += wk * x[q]
        wk *= snap_theta3

        kg = k_base + k
        jg = schedule_j_nb(sched_kind, tau, sched_seed, warmup, sched_trace, kg)
        j = jg - k_base
        if j < 0:
            j = 0                        # epoch boundary is a synchronization point
        delay = k - j
        i = int(splitmix64_nb(comp_seed, kg) % np.uint64(n))

        xr_j = ring[(j + 1) % ring_len]
        xr_jm1 = ring[j % ring_len]
        b = labels[i]
        if use_hvp:
            # p compensates as if the delay were tau; the alpha term walks back
            for q in range(dim):
                w[q] = xr_j[q] + c_tau * (xr_j[q] - xr_jm1[q])
            t_p = _row_dot(row_ptr, col_idx, vals, i, w)
            t_dx = 0.0
            for p in range(row_ptr[i], row_ptr[i + 1]):
                t_dx += vals[p] * (xr_j[col_idx[p]] - xr_jm1[col_idx[p]])
            if a_s > 0.0 and a_s < 1.0:
                alpha = a_s ** (delay + 2) * (1.0 - a_s ** (tau - delay)) / (1.0 - a_s)
            elif a_s >= 1.0:
                alpha = float(tau - delay)
            else:
                alpha = 0.0
            s = (_deriv(loss_id, t_p, b)
                 - alpha * _second_deriv(loss_id, t_p, b) * t_dx
                 - _deriv(loss_id, tilde_margins[i], b))
        else:
            if a_s < 1.0:
                c = a_s * (1.0 - a_s ** (delay + 1)) / (1.0 - a_s) if a_s > 0.0 else 0.0
            else:
                c = float(delay + 1)
            for q in range(dim):
                w[q] = xr_j[q] + c * (xr_j[q] - xr_jm1[q])
            t_w = _row_dot(row_ptr, col_idx, vals, i, w)
            s = _deriv(loss_id, t_w, b) - _deriv(loss_id, tilde_margins[i], b)

        for q in range(dim):
            g[q] = gbar[q]
        for p in range(row_ptr[i], row_ptr[i + 1]):
            g[col_idx[p]] += s * vals[p]

        _prox_inplace(h_family, h_mu, h_lam1, h_lo, h_hi, z, g, weight, delta)
        for q in range(dim):
            z[q] += delta[q]
        for q in range(dim):
            x[q] = theta1 * z[q] + theta2 * x_tilde[q] + a_s * x[q]
        ring[(k + 2) % ring_len] = x
    if dump:
        iterates_out[m] = x
    return wsum


@njit(cache=True, nogil=True)
def asvrg_epoch(row_ptr, col_idx, vals, labels, loss_id,
                x, x_tilde, gbar, tilde_margins, gamma,
                h_family, h_mu, h_lam1, h_lo, h_hi,
                sched_kind, tau, sched_seed, warmup, sched_trace,
                comp_seed, k_base, m, snap_acc):
    """One epoch of the unaccelerated delayed variance-reduced baseline.

    Proximal form of the plain loop (reduces to it when h = 0); the
    snapshot sum accumulates x_1..x_m per the analysis.
    """
    n = labels.shape[0]
    dim = x.shape[0]
    ring_len = tau + 2
    ring = np.empty((ring_len, dim))
    for r in range(ring_len):
        ring[r] = x
    g = np.empty(dim)
    delta = np.empty(dim)
    weight = 1.0 / gamma
    for k in range(m):
        kg = k_base + k
        jg = schedule_j_nb(sched_kind, tau, sched_seed, warmup, sched_trace, kg)
        j = jg - k_base
        if j < 0:
            j = 0
        i = int(splitmix64_nb(comp_seed, kg) % np.uint64(n))
        xr = ring[j % ring_len]
        b = labels[i]
        t = _row_dot(row_ptr, col_idx, vals, i, xr)
        s = _deriv(loss_id, t, b) - _deriv(loss_id, tilde_margins[i], b)
        for q in range(dim):
            g[q] = gbar[q]
        for p in range(row_ptr[i], row_ptr[i + 1]):
            g[col_idx[p]] += s * vals[p]
        _prox_inplace(h_family, h_mu, h_lam1, h_lo, h_hi, x, g, weight, delta)
        for q in range(dim):
            x[q] += delta[q]
        for q in range(dim):
            snap_acc[q] += x[q]
        ring[(k + 1) % ring_len] = x
    return float(m)
