"""Numerical follower machinery.

Best responses on the total-demand hyperplane (closed form) and on the
capped strategy set (exact water-filling), sequential best-response sweeps,
the affine form of one sweep and its contraction factor, and a randomized
strict-equilibrium check.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._waterfill import clipped_sum_solve
from .errors import InfeasibleBounds, MaxIterExceeded
from .gamecore import (
    DemandProfile,
    FlexUserSet,
    PricingRule,
    Scenario,
    check_tilde_w,
    cost_tilde,
    tilde_transform,
)

RHO_CHECK_CAP = 200


# ---------------------------------------------------------------------------
# single-user best responses


def _hyperplane_br(g_i, g_N, others, wt, rt):
    alpha = (g_N + g_i + rt.sum()) / (2.0 * wt.sum())
    return -0.5 * others + alpha * wt - 0.5 * rt


def _box_br(g_i, cap, others, wt, rt):
    # stationarity 2 nu / wt + (others + rt) / wt = lam, clipped to [0, cap]
    x, _ = clipped_sum_solve(-0.5 * (others + rt), 0.5 * wt, 0.0, cap, g_i)
    return x


def hyperplane_best_response(i: int, profile: DemandProfile, wt, rt,
                             users: FlexUserSet) -> np.ndarray:
    """Cost-minimizing schedule of user ``i`` subject only to ``sum_t nu_i(t) = g_i``.

    ``nu_i = -1/2 sum_{j!=i} nu_j + alpha_i wt - 1/2 rt`` with
    ``alpha_i = (g_N + g_i + sum rt) / (2 sum wt)``.  Row ``i`` of ``profile``
    is ignored.
    """
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    return _hyperplane_br(users.g[i], users.g_N, profile.others_sum(i), wt, rt)


def box_best_response(i: int, profile: DemandProfile, wt, rt, users: FlexUserSet) -> np.ndarray:
    """Exact best response of user ``i`` over ``{sum nu = g_i, 0 <= nu <= nu_max_i}``.

    The cost is separable per slot once the others are fixed, so the
    minimizer is ``clip(wt (lam - h) / 2, 0, nu_max_i)`` with ``h = (others +
    rt) / wt`` and the multiplier ``lam`` found by exact breakpoint search.
    """
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    T = wt.size
    g_i, cap = float(users.g[i]), float(users.nu_max[i])
    if g_i > T * cap * (1 + 1e-12):
        raise InfeasibleBounds(f"user {i + 1}: g={g_i:.6g} exceeds T*nu_max={T * cap:.6g}")
    return _box_br(g_i, cap, profile.others_sum(i), wt, rt)


# ---------------------------------------------------------------------------
# sequential best-response dynamics


@dataclass
class BRIterationTrace:
    """Residual history of the sequential best-response sweeps."""

    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("inf")


def sweep(values: np.ndarray, wt, rt, users: FlexUserSet, use_box: bool = False) -> np.ndarray:
    """One Gauss-Seidel pass over the users in index order (returns a new array)."""
    V = np.array(values, dtype=float)
    if use_box:
        _kernels.box_sweep(V, users.g, users.nu_max, np.asarray(wt, float), np.asarray(rt, float))
        return V
    total = V.sum(axis=0)
    g_N = users.g_N
    for i in range(V.shape[0]):
        others = total - V[i]
        new = _hyperplane_br(users.g[i], g_N, others, wt, rt)
        total = others + new
        V[i] = new
    return V


def best_response_dynamics(wt, rt, users: FlexUserSet, *, use_box: bool = False,
                           tol: float = 1e-8, max_iter: int | None = None,
                           init=None):
    """Iterate sweeps from the flat schedule until the l1 change drops below ``tol``.

    Parameters
    ----------
    wt, rt : array_like
        Adjusted supply and load defining the price.
    users : FlexUserSet
    use_box : bool
        Respect per-slot caps (the capped game) instead of only the totals.
    tol : float
        Stop once ``||nu^(k+1) - nu^(k)||_1 < tol`` over the stacked profile.
    max_iter : int, optional
        Sweep cap, ``10 n T`` by default.
    init : array_like, optional
        Starting profile (``n x T``); defaults to ``g_i / T`` in every slot.

    Returns
    -------
    (DemandProfile, BRIterationTrace)

    Raises
    ------
    MaxIterExceeded
        Carries the trace and the last iterate.
    """
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    T, n = wt.size, users.n
    if use_box:
        users.check_box_feasible(T)
    if max_iter is None:
        max_iter = 10 * n * T
    if init is None:
        V = np.repeat(users.g[:, None] / T, T, axis=1)
    else:
        V = np.array(init, dtype=float)
        if V.shape != (n, T):
            raise ValueError(f"init has shape {V.shape}, expected {(n, T)}")
    trace = BRIterationTrace()
    if use_box:
        res = np.zeros(max_iter)
        k = _kernels.box_dynamics(V, users.g, users.nu_max, wt, rt, tol, max_iter, res)
        trace.iterations = int(k)
        trace.residuals = res[:k].tolist()
        trace.converged = bool(k > 0 and res[k - 1] < tol)
    else:
        while trace.iterations < max_iter:
            new = sweep(V, wt, rt, users)
            res = float(np.abs(new - V).sum())
            V = new
            trace.iterations += 1
            trace.residuals.append(res)
            if res < tol:
                trace.converged = True
                break
    if trace.converged:
        return DemandProfile(V), trace
    raise MaxIterExceeded(
        f"best-response dynamics did not reach {tol:g} in {max_iter} sweeps "
        f"(last residual {trace.final_residual:.3g})",
        trace=trace, last=DemandProfile(V),
    )


def solve_followers(scenario: Scenario, rule: PricingRule, users: FlexUserSet, **kwargs):
    """:func:`best_response_dynamics` for a scenario and pricing rule."""
    wt, rt = tilde_transform(scenario, rule)
    return best_response_dynamics(wt, rt, users, **kwargs)


# ---------------------------------------------------------------------------
# affine form of one sweep


def contraction_matrix(n: int) -> np.ndarray:
    """Linear part of one hyperplane sweep acting on the user index.

    Row ``i`` (1-based) is ``-1/2 (e_i - sum_{j<i} 2^{-(i-j)} e_j)`` where
    ``e_j`` has ``j`` leading zeros followed by ones.
    """
    E = np.triu(np.ones((n, n)), k=1)  # row k = e_{k+1}
    L = np.empty((n, n))
    for k in range(n):
        row = E[k].copy()
        for j in range(k):
            row -= E[j] * 0.5 ** (k - j)
        L[k] = -0.5 * row
    return L


@dataclass(frozen=True)
class BRAffineMap:
    """One sweep written as ``F(nu) = L nu + M`` on ``n x T`` profiles."""

    L: np.ndarray
    M: np.ndarray
    rho: float

    def apply(self, values) -> np.ndarray:
        return self.L @ np.asarray(values, dtype=float) + self.M


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if np.size(A) else 0.0


def br_map(wt, rt, users: FlexUserSet) -> BRAffineMap:
    """Explicit affine map of a hyperplane sweep.

    ``M`` row ``i`` is ``(alpha_i - sum_{j<i} alpha_j / 2^{i-j}) wt - rt / 2^i``.
    """
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    n = users.n
    L = contraction_matrix(n)
    alpha = (users.g_N + users.g + rt.sum()) / (2.0 * wt.sum())
    coef = np.empty(n)
    for k in range(n):
        coef[k] = alpha[k] - sum(alpha[j] * 0.5 ** (k - j) for j in range(k))
    M = np.outer(coef, wt) - np.outer(0.5 ** np.arange(1, n + 1), rt)
    rho = spectral_radius(L)
    if n <= RHO_CHECK_CAP and not rho < 1:
        raise ArithmeticError(f"sweep map is not contractive for n={n}: rho={rho}")
    return BRAffineMap(L=L, M=M, rho=rho)


# ---------------------------------------------------------------------------
# strict equilibrium spot check


@dataclass
class StrictNECheck:
    passed: bool
    failed_users: list
    worst_user: int | None
    stationarity: np.ndarray
    counterexample: dict | None
    seed: int
    samples: int

    def __bool__(self):
        return self.passed


def _random_box_point(rng, g_i, cap, T):
    x, _ = clipped_sum_solve(rng.uniform(0.0, cap, T), np.ones(T), 0.0, cap, g_i)
    return x


def verify_strict_ne(profile: DemandProfile, wt, rt, users: FlexUserSet, *,
                     samples: int = 100, use_box: bool = False, seed: int = 0,
                     stationarity_tol: float = 1e-7) -> StrictNECheck:
    """Randomized falsification of the strict Nash property.

    For every user, ``samples`` feasible unilateral deviations are drawn and
    each must strictly raise that user's bill.  First-order stationarity is
    checked as well (norm of the projected gradient, relative to the gradient
    scale).  The user with the largest stationarity violation is reported as
    ``worst_user`` on failure.
    """
    from .oracle import projected_stationarity

    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    rng = np.random.default_rng(seed)
    V = profile.values
    T = wt.size
    total = V.sum(axis=0)
    failed = []
    counter = None
    stat = np.zeros(users.n)
    for i in range(users.n):
        nu = V[i]
        others = total - nu
        base = cost_tilde(nu, others, wt, rt)
        grad_scale = max(1.0, float(np.max(np.abs((2 * nu + others + rt) / wt))))
        bounds = (0.0, float(users.nu_max[i])) if use_box else None
        stat[i] = projected_stationarity(i, profile, wt, rt, users, bounds) / grad_scale
        bad = stat[i] > stationarity_tol
        g_i = float(users.g[i])
        for _ in range(samples):
            theta = 10.0 ** rng.uniform(-3, 0)
            if use_box:
                y = _random_box_point(rng, g_i, float(users.nu_max[i]), T)
                dev = nu + theta * (y - nu)
            else:
                z = rng.standard_normal(T)
                z -= z.mean()
                dev = nu + theta * (g_i / T) * z / np.max(np.abs(z))
            if np.max(np.abs(dev - nu)) <= 1e-12 * max(1.0, g_i):
                continue
            diff = cost_tilde(dev, others, wt, rt) - base
            if not diff > 0:
                bad = True
                if counter is None:
                    counter = {"user": i, "deviation": dev.tolist(), "cost_change": float(diff)}
                break
        if bad:
            failed.append(i)
    worst = int(np.argmax(stat)) if failed else None
    return StrictNECheck(passed=not failed, failed_users=failed, worst_user=worst,
                         stationarity=stat, counterexample=counter, seed=seed,
                         samples=samples)
