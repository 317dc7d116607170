"""Closed-form equilibria of the ratio price family.

Covers the Nash equilibrium of the total-demand game for arbitrary adjusted
sequences, the variance-eliminating pricing rule and its perfect Stackelberg
equilibrium, the renewable-only special case, and the forecast-based price
with its residual leader cost.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CLAUSES, ConditionViolation, NonpositiveTildeW
from .gamecore import (
    DemandProfile,
    FlexUserSet,
    PricingRule,
    Scenario,
    check_tilde_w,
    controllable_supply,
    make_report,
    population_variance,
)


@dataclass(frozen=True)
class ConditionReport:
    """Per-slot margins of a ``0 < x(t) <= bound`` condition.

    ``lower`` holds ``x(t)`` and ``upper`` holds ``bound - x(t)``.  The lower
    side is strict, the upper side is not.
    """

    name: str
    satisfied: bool
    lower: np.ndarray
    upper: np.ndarray
    bound: float
    violated_slots: tuple
    binding_slots: tuple

    def render(self) -> str:
        verdict = "holds" if self.satisfied else "violated"
        lines = [f"{CLAUSES.get(self.name, self.name)}: {verdict}"]
        lines.append(f"  upper bound          {self.bound:.10g}")
        lines.append(f"  min lower margin     {self.lower.min():.10g} (slot {int(np.argmin(self.lower)) + 1})")
        lines.append(f"  min upper margin     {self.upper.min():.10g} (slot {int(np.argmin(self.upper)) + 1})")
        if self.violated_slots:
            lines.append("  violated slots       " + " ".join(str(t) for t in self.violated_slots))
        tight = [t for t in self.binding_slots if t not in self.violated_slots]
        if tight:
            lines.append("  tight slots          " + " ".join(str(t) for t in tight))
        return "\n".join(lines)


def _interval_condition(name, x, bound, rtol=1e-12) -> ConditionReport:
    x = np.asarray(x, dtype=float)
    lower = x.copy()
    upper = bound - x
    bad = (lower <= 0) | (upper < 0)
    tight = np.abs(upper) <= rtol * max(1.0, abs(bound))
    violated = tuple(int(t) + 1 for t in np.flatnonzero(bad))
    binding = tuple(int(t) + 1 for t in np.flatnonzero(bad | tight))
    return ConditionReport(name, not violated, lower, upper, float(bound), violated, binding)


# ---------------------------------------------------------------------------
# general price family


def general_nash(wt, rt, users: FlexUserSet) -> DemandProfile:
    """Unique Nash equilibrium of the total-demand game (no per-slot caps).

    ``nu_i(t) = wt(t) g_i / W + (wt(t) R - W rt(t)) / ((n + 1) W)`` with
    ``W = sum wt`` and ``R = sum rt``; the second term is the pairwise sum
    ``sum_s wt(s) wt(t) [rt(s)/wt(s) - rt(t)/wt(t)]`` collapsed.
    """
    wt = check_tilde_w(wt)
    rt = np.asarray(rt, dtype=float)
    W, R = wt.sum(), rt.sum()
    share = np.outer(users.g, wt / W)
    tilt = (wt * R - W * rt) / ((users.n + 1) * W)
    return DemandProfile(share + tilt[None, :])


# ---------------------------------------------------------------------------
# optimal pricing and the perfect equilibrium


def optimal_tilde(scenario: Scenario, users: FlexUserSet):
    """``(wt*, rt*)`` of the variance-eliminating rule (``wt*`` may be non-positive)."""
    T = scenario.T
    wt = users.g_N / T + scenario.net + np.mean(scenario.r - scenario.w)
    rt = (users.n + 1) / users.n * wt
    return wt, rt


def optimal_rule(scenario: Scenario, users: FlexUserSet) -> PricingRule:
    """Adjustments ``a1*(t) = g_N/T - r(t) + mean(r - w)`` and
    ``a2*(t) = (n+1)/n (w(t) + a1*(t)) - r(t)``."""
    T = scenario.T
    a1 = users.g_N / T - scenario.r + np.mean(scenario.r - scenario.w)
    a2 = (users.n + 1) / users.n * (scenario.w + a1) - scenario.r
    return PricingRule(a1, a2)


def check_perfect_se(scenario: Scenario, users: FlexUserSet) -> ConditionReport:
    """``0 < wt*(t) <= min_i(nu_max_i / g_i) g_N`` for every slot."""
    wt, _ = optimal_tilde(scenario, users)
    return _interval_condition("12", wt, users.min_cap_ratio * users.g_N)


def analytic_nash(scenario: Scenario, users: FlexUserSet) -> DemandProfile:
    """Follower equilibrium under the optimal rule: ``nu_i*(t) = g_i wt*(t) / g_N``.

    A single-slot scenario has the trivial equilibrium ``nu_i(1) = g_i``.
    """
    if scenario.T == 1:
        return DemandProfile(users.g[:, None].copy())
    wt, _ = optimal_tilde(scenario, users)
    check_tilde_w(wt)
    T = scenario.T
    g = users.g[:, None]
    nu = g / T + g / users.g_N * scenario.net[None, :] + g / (users.g_N * T) * np.sum(scenario.r - scenario.w)
    return DemandProfile(nu)


def perfect_se(scenario: Scenario, users: FlexUserSet, *, verify_samples: int = 20,
               seed: int = 0):
    """Analytic Stackelberg equilibrium; raises :class:`ConditionViolation` if
    the closed-form conditions fail."""
    from .followers import verify_strict_ne

    cond = check_perfect_se(scenario, users)
    if not cond.satisfied:
        raise ConditionViolation("12", cond.violated_slots)
    rule = optimal_rule(scenario, users)
    demand = analytic_nash(scenario, users)
    wt, rt = rule.tilde(scenario)
    strict = None
    if verify_samples > 0:
        strict = verify_strict_ne(demand, wt, rt, users, samples=verify_samples,
                                  use_box=True, seed=seed).passed
    return make_report(scenario, users, rule, demand, method="analytic",
                       rule_feasible=True, strict_ne=strict,
                       extra={"verify_seed": seed, "verify_samples": verify_samples})


def renewable_only_se(scenario: Scenario, users: FlexUserSet, rtol: float = 1e-9):
    """Perfect equilibrium in which renewables cover all demand.

    Requires ``0 < w(t) - r(t) <= min_i(nu_max_i/g_i) g_N`` in every slot and
    ``sum w = g_N + sum r``.  Demand is ``chi_i(t) = g_i (w(t) - r(t)) / g_N``
    and the controllable supply vanishes.
    """
    cond = _interval_condition("13", scenario.net, users.min_cap_ratio * users.g_N)
    if not cond.satisfied:
        raise ConditionViolation("13", cond.violated_slots)
    lhs, rhs = scenario.w.sum(), users.g_N + scenario.r.sum()
    if abs(lhs - rhs) > rtol * max(abs(lhs), abs(rhs), 1.0):
        raise ConditionViolation("14", detail=f"sum w = {lhs:.12g} but g_N + sum r = {rhs:.12g}")
    demand = DemandProfile(np.outer(users.g / users.g_N, scenario.net))
    # with the totals balanced the optimal rule reduces to wt = w - r
    wt = scenario.net
    rule = PricingRule.from_tilde(scenario, wt, (users.n + 1) / users.n * wt)
    return make_report(scenario, users, rule, demand, method="analytic", rule_feasible=True,
                       extra={"case": "renewable-only"})


# ---------------------------------------------------------------------------
# forecast-based pricing


@dataclass(frozen=True)
class PredictionSetting:
    """Forecast ``b`` of ``mean(r - w)`` used in place of the realized mean."""

    b: float

    def delta(self, scenario: Scenario) -> float:
        """Prediction error ``b - mean(r - w)``."""
        return float(self.b - np.mean(scenario.r - scenario.w))

    def denominator(self, scenario: Scenario, users: FlexUserSet) -> float:
        """``g_N + T delta``, which equals ``sum_t wt(t)`` under the forecast rule."""
        return users.g_N + scenario.T * self.delta(scenario)


def prediction_tilde(scenario: Scenario, users: FlexUserSet, setting: PredictionSetting):
    wt = scenario.net + users.g_N / scenario.T + setting.b
    return wt, (users.n + 1) / users.n * wt


def prediction_price_rule(scenario: Scenario, users: FlexUserSet,
                          setting: PredictionSetting) -> PricingRule:
    """Rule whose price is ``1 + 1/n + nu_N(t) / (w(t) - r(t) + g_N/T + b)``."""
    wt, rt = prediction_tilde(scenario, users, setting)
    check_tilde_w(wt)
    return PricingRule.from_tilde(scenario, wt, rt)


def check_prediction_condition(scenario: Scenario, users: FlexUserSet,
                               setting: PredictionSetting) -> ConditionReport:
    """``0 < wt(t) <= (g_N + T delta) min_i(nu_max_i/g_i)`` for every slot."""
    wt, _ = prediction_tilde(scenario, users, setting)
    denom = setting.denominator(scenario, users)
    return _interval_condition("17", wt, denom * users.min_cap_ratio)


def _sigma(scenario, users, setting):
    denom = setting.denominator(scenario, users)
    if not denom > 0:
        raise ConditionViolation("17", detail=f"g_N + T*delta = {denom:.12g} is not positive")
    wt, _ = prediction_tilde(scenario, users, setting)
    return DemandProfile(np.outer(users.g / denom, wt))


def prediction_nash(scenario: Scenario, users: FlexUserSet, setting: PredictionSetting,
                    check_condition: bool = True) -> DemandProfile:
    """Follower equilibrium ``sigma_i(t) = g_i wt(t) / (g_N + T delta)`` under the forecast rule."""
    if check_condition:
        cond = check_prediction_condition(scenario, users, setting)
        if not cond.satisfied:
            raise ConditionViolation("17", cond.violated_slots)
    return _sigma(scenario, users, setting)


def prediction_cost_formula(scenario: Scenario, users: FlexUserSet,
                            setting: PredictionSetting) -> float:
    """``(T delta / (g_N + T delta))^2 Var(w - r)``."""
    Td = scenario.T * setting.delta(scenario)
    denom = users.g_N + Td
    if not denom > 0:
        raise ConditionViolation("17", detail=f"g_N + T*delta = {denom:.12g} is not positive")
    return (Td / denom) ** 2 * population_variance(scenario.net)


def prediction_cost_direct(scenario: Scenario, users: FlexUserSet,
                           setting: PredictionSetting) -> float:
    """Leader cost recomputed from ``sigma`` through the balance constraint."""
    sigma = _sigma(scenario, users, setting)
    return population_variance(controllable_supply(scenario, sigma))


def prediction_cost(scenario: Scenario, users: FlexUserSet, setting: PredictionSetting,
                    check_condition: bool = True, rtol: float = 1e-10) -> float:
    """Leader cost at the forecast-rule equilibrium.

    The closed form is cross-checked against direct simulation; a
    disagreement beyond ``rtol`` raises ``ArithmeticError``.
    """
    if check_condition:
        prediction_nash(scenario, users, setting)
    formula = prediction_cost_formula(scenario, users, setting)
    direct = prediction_cost_direct(scenario, users, setting)
    scale = max(population_variance(scenario.net), (users.g_N / scenario.T) ** 2, 1e-300)
    if abs(formula - direct) > rtol * max(abs(formula), abs(direct)) + 1e-14 * scale:
        raise ArithmeticError(f"closed-form cost {formula!r} disagrees with simulation {direct!r}")
    return formula


def prediction_report(scenario: Scenario, users: FlexUserSet, setting: PredictionSetting):
    sigma = prediction_nash(scenario, users, setting)
    rule = prediction_price_rule(scenario, users, setting)
    cost = prediction_cost(scenario, users, setting)
    rep = make_report(scenario, users, rule, sigma, method="analytic-prediction",
                      rule_feasible=check_perfect_se(scenario, users).satisfied)
    Td = scenario.T * setting.delta(scenario)
    extra = {
        "b": setting.b,
        "delta": setting.delta(scenario),
        "T_delta": Td,
        "prefactor": (Td / (users.g_N + Td)) ** 2,
        "var_net": population_variance(scenario.net),
        "leader_cost_formula": cost,
        "leader_cost_direct": rep.leader_cost,
    }
    rep.extra.update(extra)
    return rep


# ---------------------------------------------------------------------------
# slot-length sweep


@dataclass(frozen=True)
class SweepRow:
    T: int
    delta: float
    T_delta: float
    var: float
    cost: float
    ratio: float
    prefactor: float
    forecast_feasible: bool


def _threads():
    raw = os.environ.get("STACKGRID_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return min(4, os.cpu_count() or 1)


def table2_sweep(daily_w_total, daily_r_total, predicted_w, predicted_r, g_N,
                 scenario_generator, T_list, *, rtol=1e-9, workers=None) -> list[SweepRow]:
    """Leader cost of the forecast rule for several slot counts over one day.

    The forecast of ``sum(r - w)`` over the day, ``predicted_r - predicted_w``,
    is held fixed, so ``T delta`` does not depend on ``T``.
    ``scenario_generator(T)`` must return a :class:`Scenario` whose totals
    match ``daily_w_total`` / ``daily_r_total``.
    """
    T_list = [int(T) for T in T_list]
    if not T_list:
        raise ValueError("T_list is empty")
    Tb = predicted_r - predicted_w
    actual = daily_r_total - daily_w_total
    users = FlexUserSet(g=[g_N], nu_max=[g_N])

    def row(T):
        sc = scenario_generator(T)
        if sc.T != T:
            raise ValueError(f"generator returned {sc.T} slots for T={T}")
        for name, got, want in (("w", sc.w.sum(), daily_w_total), ("r", sc.r.sum(), daily_r_total)):
            if abs(got - want) > 1e-9 * max(1.0, abs(want)):
                raise ValueError(f"generated {name} total {got:.12g} != {want:.12g} for T={T}")
        delta = (Tb - actual) / T
        setting = PredictionSetting(b=Tb / T)
        # the generator's float totals may differ from the parameters in the last bits
        setting = PredictionSetting(b=setting.b + (delta - setting.delta(sc)))
        cond = check_prediction_condition(sc, users, setting).satisfied
        cost = prediction_cost(sc, users, setting, check_condition=False)
        var = population_variance(sc.net)
        prefactor = (T * delta / (g_N + T * delta)) ** 2
        ratio = cost / var if var > 0 else float("nan")
        if var > 0 and abs(ratio - prefactor) > rtol * prefactor + 1e-15:
            raise ArithmeticError(f"T={T}: cost/Var = {ratio!r} differs from {prefactor!r}")
        return SweepRow(T, delta, T * delta, var, cost, ratio, prefactor, cond)

    n_workers = workers or _threads()
    if n_workers > 1 and len(T_list) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(row, T_list))
    return [row(T) for T in T_list]


__all__ = [
    "ConditionReport",
    "NonpositiveTildeW",
    "PredictionSetting",
    "SweepRow",
    "analytic_nash",
    "check_perfect_se",
    "check_prediction_condition",
    "general_nash",
    "optimal_rule",
    "optimal_tilde",
    "perfect_se",
    "prediction_cost",
    "prediction_cost_direct",
    "prediction_cost_formula",
    "prediction_nash",
    "prediction_price_rule",
    "prediction_report",
    "renewable_only_se",
    "table2_sweep",
]
