"""Independent verifiers: brute-force grid equilibria, finite differences, KKT residuals.

Nothing here calls the closed-form solvers; every quantity is derived from
direct evaluation of the users' bills.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import GridTooLarge
from .gamecore import DemandProfile, FlexUserSet, check_tilde_w, cost_tilde

GRID_GUARD = 10**7


# ---------------------------------------------------------------------------
# finite differences


def _reduced_cost(i, profile, wt, rt, users):
    others = profile.others_sum(i)
    g_i = float(users.g[i])

    def f(d):
        return cost_tilde(np.append(d, g_i - np.sum(d)), others, wt, rt)

    return f


def finite_diff_gradient(i: int, profile: DemandProfile, wt, rt, users: FlexUserSet,
                         h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of user ``i``'s bill in reduced coordinates.

    Moving ``nu_i(t)`` for ``t < T`` is compensated in the last slot so the
    total stays at ``g_i``.  The step is ``h * max(1, max|nu_i|)``.
    """
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    f = _reduced_cost(i, profile, wt, rt, users)
    d = np.asarray(profile.values[i][:-1], dtype=float)
    step = h * max(1.0, float(np.max(np.abs(profile.values[i]))))
    grad = np.empty(d.size)
    for k in range(d.size):
        e = np.zeros(d.size)
        e[k] = step
        grad[k] = (f(d + e) - f(d - e)) / (2 * step)
    return grad


def finite_diff_hessian(i: int, profile: DemandProfile, wt, rt, users: FlexUserSet,
                        h: float = 1e-4) -> np.ndarray:
    """Second differences of the bill in reduced coordinates (symmetrized)."""
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    f = _reduced_cost(i, profile, wt, rt, users)
    d = np.asarray(profile.values[i][:-1], dtype=float)
    step = h * max(1.0, float(np.max(np.abs(profile.values[i]))))
    m = d.size
    H = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            ea = np.zeros(m)
            eb = np.zeros(m)
            ea[a] = step
            eb[b] = step
            H[a, b] = (f(d + ea + eb) - f(d + ea - eb) - f(d - ea + eb) + f(d - ea - eb)) / (4 * step * step)
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# KKT residuals


def cone_projection_norm(x, grad, lo=None, hi=None, atol=1e-12) -> float:
    """Norm of the projection of ``-grad`` onto the tangent cone of
    ``{sum x = const, lo <= x <= hi}`` at ``x``.  Zero exactly at a constrained
    minimizer of a convex function with gradient ``grad``.
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    n = x.size
    at_lo = np.zeros(n, bool) if lo is None else x <= np.asarray(lo, float) + atol
    at_hi = np.zeros(n, bool) if hi is None else x >= np.asarray(hi, float) - atol
    d_lo = np.where(at_lo, 0.0, -np.inf)
    d_hi = np.where(at_hi, 0.0, np.inf)

    def proj(lam):
        return np.clip(-grad + lam, d_lo, d_hi)

    if not (at_lo.any() or at_hi.any()):
        return float(np.linalg.norm(-grad + grad.mean()))
    a, b = float(grad.min()) - 1.0, float(grad.max()) + 1.0
    fa, fb = proj(a).sum(), proj(b).sum()
    if fa == 0:
        lam = a
    elif fb == 0:
        lam = b
    else:
        lam = brentq(lambda t: proj(t).sum(), a, b, xtol=1e-15 * max(1.0, abs(b)), rtol=1e-15)
    return float(np.linalg.norm(proj(lam)))


def projected_stationarity(i: int, profile: DemandProfile, wt, rt, users: FlexUserSet,
                           bounds=None, atol=None) -> float:
    """KKT residual of user ``i``'s schedule; ``bounds=(lo, hi)`` adds the box."""
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    nu = profile.values[i]
    others = profile.others_sum(i)
    grad = (2 * nu + others + rt) / wt
    if atol is None:
        atol = 1e-10 * max(1.0, float(users.g[i]))
    lo, hi = (None, None) if bounds is None else bounds
    if lo is not None:
        lo = np.broadcast_to(lo, nu.shape)
        hi = np.broadcast_to(hi, nu.shape)
    return cone_projection_norm(nu, grad, lo, hi, atol=atol)


def leader_stationarity(nu_N, scenario, cap) -> float:
    """KKT residual of an aggregate schedule for the variance-minimizing leader problem."""
    nu_N = np.asarray(nu_N, dtype=float)
    c = nu_N + scenario.r - scenario.w
    grad = 2.0 * (c - c.mean()) / scenario.T
    atol = 1e-10 * max(1.0, float(cap))
    return cone_projection_norm(nu_N, grad, np.zeros_like(nu_N), np.full_like(nu_N, cap), atol=atol)


# ---------------------------------------------------------------------------
# grid-search equilibrium


@dataclass(frozen=True)
class GridSpec:
    """Per-user grid over the first ``T-1`` slots (last slot implied).

    ``lower`` / ``upper`` are ``n x (T-1)`` arrays (scalars broadcast).
    ``resolution`` is the number of intervals per coordinate.
    """

    resolution: int
    lower: np.ndarray | float = 0.0
    upper: np.ndarray | float | None = None

    def bounds(self, users: FlexUserSet, T: int):
        lo = np.broadcast_to(np.asarray(self.lower, float), (users.n, T - 1)).copy()
        if self.upper is None:
            hi = np.repeat(users.g[:, None], T - 1, axis=1)
        else:
            hi = np.broadcast_to(np.asarray(self.upper, float), (users.n, T - 1)).copy()
        return lo, hi

    def points_per_user(self, T: int) -> int:
        return (self.resolution + 1) ** (T - 1)


@dataclass(frozen=True)
class GridNEResult:
    profile: DemandProfile
    grid_margin: float
    regret: float
    spacing: np.ndarray
    sweeps: int
    converged: bool


def _newton_regret(i, profile, wt, rt, users):
    # cost is quadratic in d, so one Newton step from finite differences is exact
    g = finite_diff_gradient(i, profile, wt, rt, users)
    H = finite_diff_hessian(i, profile, wt, rt, users)
    return max(0.0, 0.5 * float(g @ np.linalg.solve(H, g)))


def grid_search_ne(wt, rt, users: FlexUserSet, spec: GridSpec, max_sweeps: int = 10_000) -> GridNEResult:
    """Pure equilibrium on a per-user grid by exhaustive best responses.

    Each user's grid best response is found by enumerating all of its grid
    points.  Because the bills admit an exact potential, repeated sweeps of
    strict improvements terminate at a grid profile where no unilateral grid
    deviation lowers any bill.

    The certificate carries ``grid_margin`` (largest improvement any user could
    still get on the grid, zero at convergence) and ``regret`` (largest
    improvement against the exact minimizer on the hyperplane, obtained from
    finite-difference Newton steps).
    """
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    T = wt.size
    n = users.n
    per_user = spec.points_per_user(T)
    if per_user > GRID_GUARD:
        raise GridTooLarge(f"{per_user} grid points per user exceed the guard {GRID_GUARD}")
    lo, hi = spec.bounds(users, T)
    m = spec.resolution
    spacing = (hi - lo) / m
    grids = []
    for i in range(n):
        axes = [lo[i, k] + spacing[i, k] * np.arange(m + 1) for k in range(T - 1)]
        D = np.array(list(itertools.product(*axes))) if T > 1 else np.zeros((1, 0))
        grids.append(np.column_stack([D, users.g[i] - D.sum(axis=1)]))

    def bills(i, others):
        P = grids[i]
        return np.sum((P + others + rt) / wt * P, axis=1)

    idx = []
    for i in range(n):
        flat = np.full(T - 1, users.g[i] / T)
        idx.append(int(np.argmin(np.sum((grids[i][:, :-1] - flat) ** 2, axis=1))))
    V = np.array([grids[i][idx[i]] for i in range(n)])

    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        moved = False
        for i in range(n):
            others = V.sum(axis=0) - V[i]
            b = bills(i, others)
            k = int(np.argmin(b))
            if b[k] < b[idx[i]]:
                idx[i] = k
                V[i] = grids[i][k]
                moved = True
        if not moved:
            converged = True
            break

    margin = 0.0
    for i in range(n):
        others = V.sum(axis=0) - V[i]
        b = bills(i, others)
        margin = max(margin, float(b[idx[i]] - b.min()))
    profile = DemandProfile(V)
    regret = max(_newton_regret(i, profile, wt, rt, users) for i in range(n)) if T > 1 else 0.0
    return GridNEResult(profile=profile, grid_margin=margin, regret=regret,
                        spacing=spacing, sweeps=sweeps, converged=converged)
