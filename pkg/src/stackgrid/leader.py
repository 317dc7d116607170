"""Leader-side numerics: the variance-minimizing aggregate schedule and the
price-sequence search that steers the follower equilibrium onto it."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._waterfill import clipped_sum_solve
from .analytic import check_perfect_se, optimal_tilde
from .errors import InfeasibleBounds, MaxIterExceeded
from .followers import best_response_dynamics, verify_strict_ne
from .gamecore import (
    FlexUserSet,
    PricingRule,
    Scenario,
    check_tilde_w,
    leader_cost,
    make_report,
    population_variance,
)


@dataclass(frozen=True)
class LeaderTarget:
    """Optimal aggregate flexible demand for the leader."""

    nu_N_star: np.ndarray
    multiplier: float
    active_lower: tuple
    active_upper: tuple
    value: float
    cap: float


def leader_qp(scenario: Scenario, users: FlexUserSet) -> LeaderTarget:
    """Minimize the variance of ``c = nu_N + r - w`` over aggregate schedules.

    Constraints: ``sum nu_N = g_N`` and ``0 <= nu_N(t) <= sum_i nu_max_i``.
    The solution is ``clip(w - r + lam, 0, cap)`` with ``lam`` fixed by the
    total; active slots are reported 1-based.
    """
    T = scenario.T
    cap = users.nu_max_N
    if users.g_N > T * cap * (1 + 1e-12):
        raise InfeasibleBounds(f"g_N={users.g_N:.6g} exceeds T*nu_N_max={T * cap:.6g}")
    x, lam = clipped_sum_solve(scenario.net, np.ones(T), 0.0, cap, users.g_N)
    tol = 1e-12 * max(1.0, cap)
    lower = tuple(int(t) + 1 for t in np.flatnonzero(x <= tol))
    upper = tuple(int(t) + 1 for t in np.flatnonzero(x >= cap - tol))
    value = population_variance(x + scenario.r - scenario.w)
    x.setflags(write=False)
    return LeaderTarget(x, lam, lower, upper, value, cap)


@dataclass
class PriceSearchTrace:
    iterations: int = 0
    errors: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    inner_sweeps: list = field(default_factory=list)
    converged: bool = False
    final_rt: np.ndarray | None = None


def default_eps(scenario: Scenario, users: FlexUserSet) -> float:
    """``1e-3 g_N / T``: a per-slot aggregate tolerance in energy units."""
    return 1e-3 * users.g_N / scenario.T


def price_search(scenario: Scenario, users: FlexUserSet, eps: float, init_wt, init_rt, *,
                 eps_step: float | None = None, max_outer: int = 5000,
                 inner_tol: float = 1e-8, stall_window: int = 50,
                 target: LeaderTarget | None = None, verify_samples: int = 20,
                 seed: int = 0):
    """Fixed-step search over ``rt`` until the follower equilibrium matches the target.

    ``wt`` stays at ``init_wt``.  Each outer step raises ``rt(t)`` by the step
    where aggregate demand exceeds the target and lowers it where demand falls
    short, then re-solves the capped follower game (warm-started from the
    previous equilibrium).  If the sup-norm error has not improved for
    ``stall_window`` steps the step is halved, never below ``eps / 16``.

    Returns ``(rule, report, trace)``.  On hitting ``max_outer`` a
    :class:`MaxIterExceeded` is raised with the trace and the best-found
    ``(rule, report)`` attached as ``last``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    users.check_box_feasible(scenario.T)
    wt = check_tilde_w(np.array(init_wt, dtype=float))
    rt = np.array(init_rt, dtype=float)
    step = float(eps if eps_step is None else eps_step)
    floor = eps / 16.0
    if target is None:
        target = leader_qp(scenario, users)
    goal = target.nu_N_star

    trace = PriceSearchTrace()
    demand, inner = best_response_dynamics(wt, rt, users, use_box=True, tol=inner_tol)
    best = None

    def record(demand, inner):
        err = float(np.max(np.abs(demand.aggregate - goal)))
        trace.errors.append(err)
        trace.costs.append(leader_cost(scenario, demand))
        trace.steps.append(step)
        trace.inner_sweeps.append(inner.iterations)
        return err

    err = record(demand, inner)
    best = (err, rt.copy(), demand, inner)
    since_best = 0
    while err >= eps:
        if trace.iterations >= max_outer:
            b_err, b_rt, b_demand, b_inner = best
            trace.final_rt = b_rt
            rule = PricingRule.from_tilde(scenario, wt, b_rt)
            rep = make_report(scenario, users, rule, b_demand, method="numeric",
                              rule_feasible=check_perfect_se(scenario, users).satisfied,
                              iterations=trace.iterations, residual=b_err)
            raise MaxIterExceeded(
                f"price search did not reach {eps:g} in {max_outer} steps (best error {b_err:.3g})",
                trace=trace, last=(rule, rep),
            )
        rt = rt + step * np.sign(demand.aggregate - goal)
        demand, inner = best_response_dynamics(wt, rt, users, use_box=True, tol=inner_tol,
                                               init=demand.values)
        trace.iterations += 1
        err = record(demand, inner)
        if err < best[0]:
            best = (err, rt.copy(), demand, inner)
            since_best = 0
        else:
            since_best += 1
            if since_best >= stall_window and step > floor:
                step = max(step / 2.0, floor)
                since_best = 0
    trace.converged = True
    trace.final_rt = rt.copy()
    rule = PricingRule.from_tilde(scenario, wt, rt)
    strict = None
    if verify_samples > 0:
        strict = verify_strict_ne(demand, wt, rt, users, samples=verify_samples,
                                  use_box=True, seed=seed, stationarity_tol=1e-6).passed
    rep = make_report(scenario, users, rule, demand, method="numeric",
                      rule_feasible=check_perfect_se(scenario, users).satisfied,
                      strict_ne=strict, iterations=trace.iterations, residual=err,
                      extra={"eps": eps, "eps_step": float(eps if eps_step is None else eps_step),
                             "target_cost": target.value,
                             "inner_sweeps": int(sum(trace.inner_sweeps)),
                             "verify_seed": seed, "verify_samples": verify_samples})
    return rule, rep, trace


DEFAULT_INIT_FLOOR = 0.5


def default_init(scenario: Scenario, users: FlexUserSet, random_init: bool = False,
                 seed: int | None = None, floor: float = DEFAULT_INIT_FLOOR):
    """Starting ``(wt, rt)`` for the price search, with ``rt = (n+1)/n wt``.

    When the closed-form conditions hold, ``wt`` is the optimal-rule ``wt*``
    itself.  Otherwise ``wt = max(wt*, floor * g_N / T)``: with ``wt`` held
    fixed, slots where it is close to zero give every unclipped user nearly
    the same demand regardless of its requirement, which can make the
    leader's target unreachable for any ``rt``.
    ``random_init`` draws ``wt`` uniformly in ``[0.5, 1.5] g_N / T`` instead.
    """
    T, n = scenario.T, users.n
    scale = users.g_N / T
    if random_init:
        rng = np.random.default_rng(seed)
        wt = rng.uniform(0.5, 1.5, T) * scale
    else:
        wt, _ = optimal_tilde(scenario, users)
        if not check_perfect_se(scenario, users).satisfied:
            wt = np.maximum(wt, floor * scale)
    return wt, (n + 1) / n * wt


def numeric_se(scenario: Scenario, users: FlexUserSet, eps: float | None = None, *,
               eps_step: float | None = None, max_outer: int = 5000,
               random_init: bool = False, seed: int | None = None, inner_tol: float = 1e-8,
               verify_samples: int = 20, init_floor: float = DEFAULT_INIT_FLOOR):
    """Numerical Stackelberg equilibrium: leader target, then price search.

    Returns the equilibrium report (``method == "numeric"``).  The search
    history is kept in ``report.extra`` under ``trace_errors``,
    ``trace_costs`` and ``outer_iterations``.
    """
    users.check_box_feasible(scenario.T)
    if eps is None:
        eps = default_eps(scenario, users)
    target = leader_qp(scenario, users)
    wt, rt = default_init(scenario, users, random_init=random_init, seed=seed,
                          floor=init_floor)
    _, rep, trace = price_search(scenario, users, eps, wt, rt, eps_step=eps_step,
                                 max_outer=max_outer, inner_tol=inner_tol, target=target,
                                 verify_samples=verify_samples,
                                 seed=0 if seed is None else seed)
    gap = np.max(np.abs(rep.demand.aggregate - target.nu_N_star))
    if not gap < eps:
        raise ArithmeticError(f"aggregate demand misses the leader target by {gap:.3g}")
    rep.extra.update({"random_init": random_init, "init_seed": seed, "init_floor": init_floor,
                      "target_active_lower": list(target.active_lower),
                      "target_active_upper": list(target.active_upper),
                      "outer_iterations": trace.iterations,
                      "trace_errors": list(trace.errors),
                      "trace_costs": list(trace.costs)})
    return rep

