"""Domain types and the quadratic-form algebra shared by every solver.

Conventions
-----------
* Arrays are ``numpy.ndarray`` of ``float64``; demand profiles are ``n x T``.
* Internally slots are 0-based; anything user-facing (errors, reports) uses
  1-based slot numbers.
* ``wt`` / ``rt`` denote the adjusted sequences ``w + a1`` and ``r + a2`` that
  define the price ``pi(t) = (nu_N(t) + rt(t)) / wt(t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleBounds, NonpositiveTildeW

FEAS_TOL = 1e-9


def _frozen_array(x, ndim=1, name="array"):
    a = np.array(x, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a.setflags(write=False)
    return a


def population_variance(x) -> float:
    """Mean squared deviation from the mean (divides by the sample count)."""
    x = np.asarray(x, dtype=float)
    return float(np.mean((x - x.mean()) ** 2))


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Scenario:
    """Per-slot renewable generation ``w`` and inflexible load ``r``."""

    w: np.ndarray
    r: np.ndarray
    slot_hours: float = 1.0
    allow_single_slot: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        w = _frozen_array(self.w, name="w")
        r = _frozen_array(self.r, name="r")
        if w.shape != r.shape:
            raise ValueError(f"w and r lengths differ ({w.size} vs {r.size})")
        min_T = 1 if self.allow_single_slot else 2
        if w.size < min_T:
            raise ValueError(f"scenario needs at least {min_T} slots, got {w.size}")
        if not self.slot_hours > 0:
            raise ValueError("slot_hours must be positive")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "slot_hours", float(self.slot_hours))

    @property
    def T(self) -> int:
        return int(self.w.size)

    @property
    def net(self) -> np.ndarray:
        """Residual renewable supply ``w - r`` per slot."""
        return self.w - self.r


@dataclass(frozen=True)
class FlexUserSet:
    """Flexible users: total demand ``g`` and per-slot cap ``nu_max``."""

    g: np.ndarray
    nu_max: np.ndarray

    def __post_init__(self):
        g = _frozen_array(self.g, name="g")
        nu_max = _frozen_array(self.nu_max, name="nu_max")
        if g.size < 1:
            raise ValueError("need at least one flexible user")
        if g.shape != nu_max.shape:
            raise ValueError("g and nu_max lengths differ")
        if np.any(g <= 0):
            raise ValueError("every g_i must be positive")
        if np.any(nu_max <= 0):
            raise ValueError("every nu_max_i must be positive")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "nu_max", nu_max)

    @property
    def n(self) -> int:
        return int(self.g.size)

    @property
    def g_N(self) -> float:
        return float(self.g.sum())

    @property
    def nu_max_N(self) -> float:
        return float(self.nu_max.sum())

    @property
    def min_cap_ratio(self) -> float:
        """``min_i nu_max_i / g_i``; scales the upper bound of the closed-form conditions."""
        return float(np.min(self.nu_max / self.g))

    def infeasible_users(self, T: int) -> list[int]:
        """0-based indices of users with ``g_i > T * nu_max_i``."""
        bad = self.g > T * self.nu_max * (1 + FEAS_TOL)
        return [int(i) for i in np.flatnonzero(bad)]

    def check_box_feasible(self, T: int) -> None:
        bad = self.infeasible_users(T)
        if bad:
            i = bad[0]
            raise InfeasibleBounds(
                f"user {i + 1}: g={self.g[i]:.6g} exceeds T*nu_max={T * self.nu_max[i]:.6g}"
            )

    @classmethod
    def uniform_caps(cls, g, factor: float, T: int) -> "FlexUserSet":
        """Users with ``nu_max_i = factor * g_i / T``."""
        g = np.asarray(g, dtype=float)
        return cls(g=g, nu_max=factor * g / T)


@dataclass(frozen=True)
class PricingRule:
    """Adjustment sequences ``(a1, a2)`` of the ratio price family."""

    a1: np.ndarray
    a2: np.ndarray

    def __post_init__(self):
        a1 = _frozen_array(self.a1, name="a1")
        a2 = _frozen_array(self.a2, name="a2")
        if a1.shape != a2.shape:
            raise ValueError("a1 and a2 lengths differ")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @classmethod
    def from_tilde(cls, scenario: Scenario, wt, rt) -> "PricingRule":
        return cls(a1=np.asarray(wt, float) - scenario.w, a2=np.asarray(rt, float) - scenario.r)

    def tilde(self, scenario: Scenario):
        return tilde_transform(scenario, self)


@dataclass(frozen=True)
class DemandProfile:
    """``n x T`` matrix of flexible demand ``nu_i(t)``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, ndim=2, name="demand"))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def T(self) -> int:
        return int(self.values.shape[1])

    @property
    def aggregate(self) -> np.ndarray:
        """``nu_N(t)``, the column sums."""
        return self.values.sum(axis=0)

    def others_sum(self, i: int) -> np.ndarray:
        """``sum_{j != i} nu_j(t)``."""
        return self.values.sum(axis=0) - self.values[i]

    def hyperplane_violations(self, users: FlexUserSet) -> list[int]:
        """0-based users whose row sum misses ``g_i`` beyond tolerance."""
        err = np.abs(self.values.sum(axis=1) - users.g)
        tol = FEAS_TOL * np.maximum(1.0, users.g)
        return [int(i) for i in np.flatnonzero(err > tol)]

    def box_violations(self, users: FlexUserSet) -> list[int]:
        tol = FEAS_TOL * np.maximum(1.0, users.nu_max)[:, None]
        bad = (self.values < -tol) | (self.values > users.nu_max[:, None] + tol)
        return [int(i) for i in np.flatnonzero(bad.any(axis=1))]

    def is_feasible(self, users: FlexUserSet, box: bool = False) -> bool:
        if self.values.shape[0] != users.n:
            return False
        if self.hyperplane_violations(users):
            return False
        return not (box and self.box_violations(users))

    @classmethod
    def flat(cls, users: FlexUserSet, T: int) -> "DemandProfile":
        """Every user spreads its demand evenly, ``nu_i(t) = g_i / T``."""
        return cls(np.repeat(users.g[:, None] / T, T, axis=1))


@dataclass(frozen=True)
class QuadraticForm:
    """User ``i``'s cost in reduced coordinates ``d = nu_i(1..T-1)``.

    ``cost(d) = d^T C d + mu^T d + const_term``; the last slot is implied by the
    total-demand constraint.
    """

    C: np.ndarray
    mu: np.ndarray
    const_term: float
    user: int

    def evaluate(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return float(d @ self.C @ d + self.mu @ d + self.const_term)

    def gradient(self, d) -> np.ndarray:
        return 2.0 * self.C @ np.asarray(d, dtype=float) + self.mu

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(2.0 * self.C, -self.mu)


@dataclass(frozen=True)
class EquilibriumReport:
    """Demands, prices and costs of a (candidate) Stackelberg equilibrium."""

    demand: DemandProfile
    prices: np.ndarray
    controllable: np.ndarray
    leader_cost: float
    user_costs: np.ndarray
    rule: PricingRule
    rule_feasible: bool
    strict_ne: bool | None
    method: str
    iterations: int = 0
    residual: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)


# ---------------------------------------------------------------------------
# operations


def check_tilde_w(wt) -> np.ndarray:
    wt = np.asarray(wt, dtype=float)
    bad = np.flatnonzero(~(wt > 0))
    if bad.size:
        raise NonpositiveTildeW(bad + 1, wt[bad])
    return wt


def tilde_transform(scenario: Scenario, rule: PricingRule):
    """Adjusted supply ``w + a1`` and load ``r + a2``; rejects ``w + a1 <= 0``."""
    if rule.a1.size != scenario.T:
        raise ValueError(f"rule has {rule.a1.size} slots, scenario has {scenario.T}")
    wt = scenario.w + rule.a1
    rt = scenario.r + rule.a2
    check_tilde_w(wt)
    return wt, rt


def price_series(scenario: Scenario, rule: PricingRule, demand: DemandProfile) -> np.ndarray:
    """Per-slot price ``(nu_N + r + a2) / (w + a1)``."""
    wt, _ = tilde_transform(scenario, rule)
    return (demand.aggregate + scenario.r + rule.a2) / wt


def prices_tilde(nu_N, wt, rt) -> np.ndarray:
    return (np.asarray(nu_N, float) + rt) / check_tilde_w(wt)


def user_cost(i: int, demand: DemandProfile, scenario: Scenario, rule: PricingRule) -> float:
    """Electricity bill of user ``i``: ``sum_t pi(t) nu_i(t)``."""
    pi = price_series(scenario, rule, demand)
    return float(pi @ demand.values[i])


def user_costs(demand: DemandProfile, scenario: Scenario, rule: PricingRule) -> np.ndarray:
    pi = price_series(scenario, rule, demand)
    return demand.values @ pi


def controllable_supply(scenario: Scenario, demand: DemandProfile) -> np.ndarray:
    """Balancing generation ``c(t) = nu_N(t) + r(t) - w(t)``."""
    return demand.aggregate + scenario.r - scenario.w


def leader_cost(scenario: Scenario, demand: DemandProfile) -> float:
    """Variance of the controllable supply over the horizon."""
    return population_variance(controllable_supply(scenario, demand))


def reduce_demand(nu_i) -> np.ndarray:
    return np.asarray(nu_i, dtype=float)[:-1]


def lift_demand(d, g_i: float) -> np.ndarray:
    """Append the implied last slot ``g_i - sum(d)``."""
    d = np.asarray(d, dtype=float)
    return np.append(d, g_i - d.sum())


def c_matrix(wt) -> np.ndarray:
    """``diag(1/wt[:-1]) + (1/wt[-1]) 11^T``."""
    wt = check_tilde_w(wt)
    m = wt.size - 1
    return np.diag(1.0 / wt[:-1]) + np.full((m, m), 1.0 / wt[-1])


def sherman_morrison_inverse(wt) -> np.ndarray:
    """Closed-form inverse of :func:`c_matrix` via a rank-one update.

    ``C^{-1} = diag(wt[:-1]) - wt[:-1] wt[:-1]^T / sum(wt)``.
    """
    wt = check_tilde_w(wt)
    head = wt[:-1]
    return np.diag(head) - np.outer(head, head) / wt.sum()


def g_tilde(i: int, wt, rt, users: FlexUserSet) -> np.ndarray:
    """Constant part of the linear coefficient: ``mu_i = C sum_{j!=i} d_j - g~_i``."""
    return (users.g_N + users.g[i] + rt[-1]) / wt[-1] - rt[:-1] / wt[:-1]


def _form_tilde(i, others_sum, wt, rt, users, raw):
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    C = c_matrix(wt)
    g_i = float(users.g[i])
    h = (others_sum + rt) / wt
    if raw:
        mu = h[:-1] - h[-1] - 2.0 * g_i / wt[-1]
    else:
        mu = C @ others_sum[:-1] - g_tilde(i, wt, rt, users)
    const = h[-1] * g_i + g_i**2 / wt[-1]
    return QuadraticForm(C=C, mu=mu, const_term=float(const), user=int(i))


def quadratic_form_tilde(i, demand: DemandProfile, wt, rt, users: FlexUserSet,
                         raw: bool = False) -> QuadraticForm:
    """Quadratic form of user ``i`` given the other rows of ``demand``.

    Row ``i`` of ``demand`` is ignored.  With ``raw=True`` the linear
    coefficient is assembled from per-slot differences of
    ``h_i(t) = (sum_{j!=i} nu_j(t) + rt(t)) / wt(t)``; otherwise from the
    reduced form ``C sum_{j!=i} d_j - g~_i``, which additionally assumes the
    other users sit on their total-demand hyperplanes.
    """
    return _form_tilde(i, demand.others_sum(i), wt, rt, users, raw)


def quadratic_form(i, demand: DemandProfile, scenario: Scenario, rule: PricingRule,
                   users: FlexUserSet, raw: bool = False) -> QuadraticForm:
    wt, rt = tilde_transform(scenario, rule)
    return quadratic_form_tilde(i, demand, wt, rt, users, raw=raw)


def cost_tilde(nu_i, others_sum, wt, rt) -> float:
    """Direct bill ``sum_t (nu_i + others + rt) / wt * nu_i``."""
    nu_i = np.asarray(nu_i, dtype=float)
    return float(np.sum((nu_i + others_sum + rt) / wt * nu_i))


def stacked_jacobian(wt, n: int) -> np.ndarray:
    """Jacobian of the stacked reduced gradients, ``(11^T + I) kron C``."""
    C = c_matrix(wt)
    return np.kron(np.ones((n, n)) + np.eye(n), C)


def make_report(scenario: Scenario, users: FlexUserSet, rule: PricingRule,
                demand: DemandProfile, *, method: str, rule_feasible: bool,
                strict_ne: bool | None = None, iterations: int = 0,
                residual: float = 0.0, extra: dict | None = None) -> EquilibriumReport:
    """Assemble an :class:`EquilibriumReport`, deriving prices and costs from the inputs."""
    prices = price_series(scenario, rule, demand)
    c = controllable_supply(scenario, demand)
    return EquilibriumReport(
        demand=demand,
        prices=prices,
        controllable=c,
        leader_cost=population_variance(c),
        user_costs=demand.values @ prices,
        rule=rule,
        rule_feasible=bool(rule_feasible),
        strict_ne=strict_ne,
        method=method,
        iterations=int(iterations),
        residual=float(residual),
        extra=dict(extra or {}),
    )
