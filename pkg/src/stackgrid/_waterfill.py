"""Exact solver for separable quadratics under one sum constraint and a box.

Minimizers of ``sum_t (x_t - center_t)^2 / scale_t`` subject to
``sum x = total`` and ``lo <= x <= hi`` have the form
``x_t = clip(center_t + scale_t * lam, lo_t, hi_t)``.  The sum is piecewise
linear and non-decreasing in ``lam``, so the multiplier is located exactly by
sorting the breakpoints, accumulating the slope changes and interpolating
on the bracketing segment.
"""
import numpy as np

from .errors import InfeasibleBounds


def clipped_sum_solve(center, scale, lo, hi, total, tol=1e-12):
    """Return ``(x, lam)`` with ``sum(clip(center + scale*lam, lo, hi)) == total``.

    ``scale`` must be strictly positive.  ``lo``/``hi`` may be scalars or
    arrays and finite.
    """
    center = np.asarray(center, dtype=float)
    scale = np.asarray(scale, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), center.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), center.shape)
    lo_sum, hi_sum = lo.sum(), hi.sum()
    slack = tol * max(1.0, abs(total))
    if total < lo_sum - slack or total > hi_sum + slack:
        raise InfeasibleBounds(
            f"total {total:.12g} outside attainable range [{lo_sum:.12g}, {hi_sum:.12g}]"
        )
    if total <= lo_sum:
        return lo.copy(), -np.inf
    if total >= hi_sum:
        return hi.copy(), np.inf

    lower_bp = (lo - center) / scale
    upper_bp = (hi - center) / scale
    bps = np.concatenate([lower_bp, upper_bp])
    order = np.argsort(bps, kind="stable")
    bps = bps[order]
    # slope of phi just right of each breakpoint; phi = sum(lo) at the first
    slope = np.cumsum(np.concatenate([scale, -scale])[order])
    vals = lo_sum + np.concatenate([[0.0], np.cumsum(slope[:-1] * np.diff(bps))])
    # accumulate guards against rounding wobble in the monotone sums
    vals = np.maximum.accumulate(vals)
    k = min(max(int(np.searchsorted(vals, total)), 1), bps.size - 1)
    # phi is linear between consecutive breakpoints, so interpolation is exact
    v0, v1 = vals[k - 1], vals[k]
    if v1 > v0:
        lam = bps[k - 1] + (total - v0) * (bps[k] - bps[k - 1]) / (v1 - v0)
    else:
        # total sits past the last rounded value, e.g. caps summing exactly to it
        lam = bps[k]
    x = np.clip(center + scale * lam, lo, hi)
    # remove rounding drift from the sum without leaving the box
    drift = total - x.sum()
    if drift != 0.0:
        room = (hi - x) if drift > 0 else (x - lo)
        movable = room > 0
        if movable.any():
            w = np.where(movable, scale, 0.0)
            step = drift * w / w.sum()
            x = np.clip(x + step, lo, hi)
    return x, float(lam)

