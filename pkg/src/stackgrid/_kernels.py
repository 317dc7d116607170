"""Compiled inner loops for the capped best-response dynamics.

The numpy water-filling in ``_waterfill`` is the reference; these kernels
repeat the same breakpoint search with scalar bounds so a whole sweep runs
without interpreter overhead.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def waterfill_scalar(center, scale, lo, hi, total, out):
    """``out = clip(center + scale*lam, lo, hi)`` with ``sum(out) == total``.

    Bounds are scalars; the caller guarantees ``T*lo <= total <= T*hi``.
    """
    T = center.size
    if total <= T * lo:
        out[:] = lo
        return
    if total >= T * hi:
        out[:] = hi
        return
    bps = np.empty(2 * T)
    dsl = np.empty(2 * T)
    for t in range(T):
        bps[t] = (lo - center[t]) / scale[t]
        dsl[t] = scale[t]
        bps[T + t] = (hi - center[t]) / scale[t]
        dsl[T + t] = -scale[t]
    order = np.argsort(bps, kind="mergesort")
    val = T * lo
    slope = 0.0
    lam = bps[order[-1]]
    for k in range(2 * T):
        b = bps[order[k]]
        if k > 0:
            prev = bps[order[k - 1]]
            nxt = val + slope * (b - prev)
            if nxt >= total:
                lam = prev + (total - val) / slope if slope > 0 else b
                break
            val = nxt
        slope += dsl[order[k]]
    s = 0.0
    for t in range(T):
        x = center[t] + scale[t] * lam
        x = min(max(x, lo), hi)
        out[t] = x
        s += x
    drift = total - s
    if drift != 0.0:
        # spread rounding drift over slots that still have room
        w = 0.0
        for t in range(T):
            room = hi - out[t] if drift > 0 else out[t] - lo
            if room > 0:
                w += scale[t]
        if w > 0:
            for t in range(T):
                room = hi - out[t] if drift > 0 else out[t] - lo
                if room > 0:
                    out[t] = min(max(out[t] + drift * scale[t] / w, lo), hi)


@njit(cache=True)
def box_sweep(V, g, caps, wt, rt):
    """One Gauss-Seidel pass in place; returns the l1 change of the profile."""
    n, T = V.shape
    total = np.zeros(T)
    for i in range(n):
        for t in range(T):
            total[t] += V[i, t]
    center = np.empty(T)
    scale = np.empty(T)
    new = np.empty(T)
    for t in range(T):
        scale[t] = 0.5 * wt[t]
    change = 0.0
    for i in range(n):
        for t in range(T):
            center[t] = -0.5 * (total[t] - V[i, t] + rt[t])
        waterfill_scalar(center, scale, 0.0, caps[i], g[i], new)
        for t in range(T):
            change += abs(new[t] - V[i, t])
            total[t] += new[t] - V[i, t]
            V[i, t] = new[t]
    return change


@njit(cache=True)
def box_dynamics(V, g, caps, wt, rt, tol, max_iter, residuals):
    """Sweep until the l1 change drops below ``tol``; returns the sweep count.

    ``residuals`` (length ``max_iter``) receives the per-sweep changes.
    """
    for k in range(max_iter):
        res = box_sweep(V, g, caps, wt, rt)
        residuals[k] = res
        if res < tol:
            return k + 1
    return max_iter
