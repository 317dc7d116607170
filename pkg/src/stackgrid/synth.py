"""Seeded synthetic scenarios and user fleets.

Daily curves are continuous functions of the hour ``h in [0, 24)``; slot
energies are their exact integrals over each slot, rescaled to the requested
daily total.  Everything is driven by ``numpy.random.default_rng(seed)`` so
equal seeds give equal floats on every platform.

Curve kinds
-----------
sinusoid
    ``1 + a sin(2 pi (h - phi) / 24)`` for both supply and load, with
    ``a ~ U(0.3, 0.7)`` and independent phases ``phi ~ U(0, 24)``.
two-peak
    Load is ``0.3 + A1 N(h; 8 + j1, s1) + A2 N(h; 19 + j2, s2)`` (morning
    and evening peaks, Gaussian bumps); supply is ``0.02 + B N(h; 13 + j3, s3)``
    (a solar-like midday peak).  Jitters ``j ~ U(-1, 1)``, widths
    ``s ~ U(1.5, 3)`` (``U(2, 3)`` for supply), amplitudes ``A, B ~ U(0.6, 1.4)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

from .gamecore import FlexUserSet, Scenario

KINDS = ("sinusoid", "two-peak")

# daily requirements of the twenty-household fleet
HOUSEHOLD_G = (1.55, 1.49, 1.04, 4.13, 3.7, 2.03, 2.29, 0.92, 4.47, 0.81,
              8.98, 0.02, 0.29, 0.37, 0.13, 4.64, 4.65, 4.83, 4.49, 0.26)
HOUSEHOLD_SUPPLY_SHARE = 0.6222
HOUSEHOLD_FLEX_SHARE = 0.2941


def _edges(T):
    return np.linspace(0.0, 24.0, T + 1)


def _sin_integral(edges, amp, phase):
    # integral of 1 + amp sin(2 pi (h - phase) / 24)
    k = 2 * np.pi / 24.0
    F = edges - amp / k * np.cos(k * (edges - phase))
    return np.diff(F)


def _bump_integral(edges, centre, width):
    # integral of the Gaussian density, wrapped once around midnight
    F = np.zeros_like(edges)
    for shift in (-24.0, 0.0, 24.0):
        F += 0.5 * (1 + erf((edges - centre - shift) / (np.sqrt(2) * width)))
    return np.diff(F)


def day_curves(kind: str, T: int, seed: int):
    """Unnormalized slot energies ``(w_shape, r_shape)`` of a synthetic day."""
    if kind not in KINDS:
        raise ValueError(f"unknown curve kind {kind!r}; choose from {', '.join(KINDS)}")
    if T < 2:
        raise ValueError("T must be at least 2")
    rng = np.random.default_rng(seed)
    e = _edges(T)
    if kind == "sinusoid":
        aw, ar = rng.uniform(0.3, 0.7, 2)
        pw, pr = rng.uniform(0.0, 24.0, 2)
        return _sin_integral(e, aw, pw), _sin_integral(e, ar, pr)
    j1, j2, j3 = rng.uniform(-1.0, 1.0, 3)
    s1, s2 = rng.uniform(1.5, 3.0, 2)
    s3 = rng.uniform(2.0, 3.0)
    a1, a2, b = rng.uniform(0.6, 1.4, 3)
    width = 24.0 / T
    r = 0.3 * width + a1 * _bump_integral(e, 8 + j1, s1) + a2 * _bump_integral(e, 19 + j2, s2)
    w = 0.02 * width + b * _bump_integral(e, 13 + j3, s3)
    return w, r


def synth_scenario(kind: str, T: int, seed: int, w_total: float, r_total: float,
                   slot_hours: float | None = None) -> Scenario:
    """Synthetic scenario whose supply and load sum to the given daily totals."""
    if not (w_total > 0 and r_total > 0):
        raise ValueError("daily totals must be positive")
    w, r = day_curves(kind, T, seed)
    w = w * (w_total / w.sum())
    r = r * (r_total / r.sum())
    return Scenario(w, r, slot_hours=24.0 / T if slot_hours is None else slot_hours)


def household_instance(seed: int = 1, T: int = 24, kind: str = "two-peak"):
    """Twenty-household fleet with caps ``2 g_i / T`` on a synthetic day.

    Daily totals use fixed shares: flexible demand is 29.41% of all
    demand and uncontrollable supply covers 62.22% of it.
    """
    users = FlexUserSet.uniform_caps(np.array(HOUSEHOLD_G), 2.0, T)
    demand = users.g_N / HOUSEHOLD_FLEX_SHARE
    scenario = synth_scenario(kind, T, seed, HOUSEHOLD_SUPPLY_SHARE * demand,
                              demand - users.g_N)
    return scenario, users


def random_users(rng, n: int, T: int, cap_factor=(1.2, 3.0)) -> FlexUserSet:
    g = rng.uniform(0.2, 5.0, n)
    nu_max = g / T * rng.uniform(*cap_factor, n)
    return FlexUserSet(g, nu_max)


def instance_with_tilde(rng, users: FlexUserSet, wt_star, shift: float = 0.0,
                        r_scale: float | None = None) -> Scenario:
    """Scenario whose optimal adjusted supply equals ``wt_star``.

    ``wt_star`` must sum to ``g_N``; then ``w - r = wt_star + shift`` for any
    constant ``shift`` reproduces it.  ``r`` is drawn positive and ``w`` is
    lifted where needed so it stays nonnegative.
    """
    wt_star = np.asarray(wt_star, dtype=float)
    T = wt_star.size
    net = wt_star + shift
    scale = users.g_N / T if r_scale is None else r_scale
    r = rng.uniform(1.0, 3.0, T) * scale
    r = np.maximum(r, -net + 1e-3 * scale)
    return Scenario(r + net, r)


def random_interior_tilde(rng, users: FlexUserSet, T: int, slack=(0.3, 0.95)):
    """A positive ``T``-vector summing to ``g_N`` and below the condition bound."""
    bound = users.min_cap_ratio * users.g_N
    mean = users.g_N / T
    # start flat, then move mass pairwise inside (0, bound]
    x = np.full(T, mean)
    hi = bound * rng.uniform(*slack)
    for _ in range(2 * T):
        a, b = rng.choice(T, 2, replace=False)
        room = min(x[a] * 0.9, hi - x[b])
        if room > 0:
            m = rng.uniform(0, room)
            x[a] -= m
            x[b] += m
    return x * (users.g_N / x.sum())


def random_instance(rng, n_range=(1, 20), T_range=(2, 48), condition: bool = True):
    """Random ``(scenario, users)``; ``condition=True`` makes the optimal rule feasible."""
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    T = int(rng.integers(T_range[0], T_range[1] + 1))
    users = random_users(rng, n, T)
    if condition:
        wt = random_interior_tilde(rng, users, T)
        shift = rng.uniform(-2.0, 2.0) * users.g_N / T
        return instance_with_tilde(rng, users, wt, shift), users
    scale = users.g_N / T
    r = rng.uniform(0.5, 3.0, T) * scale
    w = rng.uniform(0.0, 3.0, T) * scale
    return Scenario(w, r), users


def renewable_only_instance(rng, n: int, T: int):
    """Instance with ``0 < w - r <= bound`` and ``sum w = g_N + sum r``."""
    users = random_users(rng, n, T)
    wt = random_interior_tilde(rng, users, T)
    return instance_with_tilde(rng, users, wt, 0.0), users
