"""Acceptance suite: one PASS/FAIL line per criterion, printed at run time.

Each test measures the quantity, prints the verdict with the observed value
and wall time, then asserts both the tolerance and the runtime budget.
"""
import time

import numpy as np
import pytest

from stackgrid.analytic import (
    PredictionSetting,
    analytic_nash,
    check_perfect_se,
    check_prediction_condition,
    general_nash,
    optimal_tilde,
    perfect_se,
    prediction_cost_direct,
    prediction_cost_formula,
    renewable_only_se,
    table2_sweep,
)
from stackgrid.followers import (
    best_response_dynamics,
    contraction_matrix,
    spectral_radius,
    sweep,
    verify_strict_ne,
)
from stackgrid.gamecore import (
    DemandProfile,
    controllable_supply,
    population_variance,
    quadratic_form_tilde,
)
from stackgrid.leader import default_eps, leader_qp, numeric_se
from stackgrid.oracle import GridSpec, finite_diff_gradient, grid_search_ne
from stackgrid.synth import random_instance, renewable_only_instance, household_instance, synth_scenario

from conftest import random_tilde


def _verdict(capsys, number, title, ok, detail, elapsed, budget):
    within = elapsed < budget
    status = "PASS" if ok and within else "FAIL"
    with capsys.disabled():
        print(f"\n[{status}] criterion {number:>2}: {title} | {detail} | {elapsed:.2f}s (budget {budget:g}s)")
    assert ok, detail
    assert within, f"took {elapsed:.2f}s, budget {budget}s"


@pytest.fixture(scope="module")
def condition_instances():
    rng = np.random.default_rng(20240601)
    out = []
    while len(out) < 100:
        sc, users = random_instance(rng, n_range=(1, 20), T_range=(2, 48))
        if check_perfect_se(sc, users).satisfied:
            out.append((sc, users))
    return out


def test_criterion_01_perfect_se_zero_cost(capsys, condition_instances):
    t0 = time.perf_counter()
    worst_cost, worst_spread = 0.0, 0.0
    for sc, users in condition_instances:
        rep = perfect_se(sc, users, verify_samples=0)
        c = rep.controllable
        worst_cost = max(worst_cost, rep.leader_cost)
        worst_spread = max(worst_spread, float(c.max() - c.min()) / users.g_N)
    elapsed = time.perf_counter() - t0
    ok = worst_cost <= 1e-12 and worst_spread <= 1e-9
    _verdict(capsys, 1, "perfect equilibrium has zero leader cost", ok,
             f"max u_l={worst_cost:.2e} (<=1e-12), max c spread/g_N={worst_spread:.2e} (<=1e-9)",
             elapsed, 5)


def test_criterion_02_closed_form_is_fixed_point(capsys, condition_instances):
    t0 = time.perf_counter()
    worst = 0.0
    for sc, users in condition_instances:
        wt, rt = optimal_tilde(sc, users)
        nu = analytic_nash(sc, users).values
        worst = max(worst, float(np.abs(sweep(nu, wt, rt, users) - nu).sum()))
    elapsed = time.perf_counter() - t0
    _verdict(capsys, 2, "closed-form equilibrium is a sweep fixed point", worst <= 1e-9,
             f"max ||F(nu)-nu||_1={worst:.2e} (<=1e-9)", elapsed, 5)


def test_criterion_03_strict_equilibrium(capsys, condition_instances):
    t0 = time.perf_counter()
    violations = 0
    for k, (sc, users) in enumerate(condition_instances):
        wt, rt = optimal_tilde(sc, users)
        check = verify_strict_ne(analytic_nash(sc, users), wt, rt, users,
                                 samples=100, use_box=True, seed=k)
        violations += len(check.failed_users)
    elapsed = time.perf_counter() - t0
    _verdict(capsys, 3, "100 unilateral deviations per user all raise the bill", violations == 0,
             f"users with a non-increasing deviation: {violations}", elapsed, 30)


def test_criterion_04_grid_oracle_agrees(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        while True:
            wt, rt, users = random_tilde(rng, 2, 3)
            exact = general_nash(wt, rt, users).values
            if np.all(exact > 0) and np.all(exact < users.g[:, None]):
                break
        res = grid_search_ne(wt, rt, users, GridSpec(200))
        spacings = np.abs(res.profile.values - exact) / users.g[:, None] * 200
        worst = max(worst, float(spacings.max()))
    elapsed = time.perf_counter() - t0
    _verdict(capsys, 4, "grid search at resolution 200 matches the closed form", worst <= 2.0,
             f"max deviation={worst:.3f} grid spacings (<=2)", elapsed, 60)


def test_criterion_05_table2_reproduction(capsys):
    t0 = time.perf_counter()
    daily_w, daily_r = 110.1, 121.1

    def gen(T):
        return synth_scenario("two-peak", T, 1, daily_w, daily_r)

    rows = table2_sweep(daily_w, daily_r, 125.0, 120.0, 41.6, gen, [24, 36, 48, 60])
    deltas = np.array([row.delta for row in rows])
    expected = np.array([-2 / 3, -4 / 9, -1 / 3, -4 / 15])
    delta_err = float(np.max(np.abs(deltas - expected)))
    ratio_err = max(abs(row.ratio - 0.390625) for row in rows)
    printed = 0.68 / 1.74
    elapsed = time.perf_counter() - t0
    ok = delta_err <= 1e-12 and ratio_err <= 1e-9 and 0.3885 <= printed <= 0.3935
    _verdict(capsys, 5, "forecast-rule sweep over slot counts", ok,
             f"delta row err={delta_err:.1e}, max |ratio-0.390625|={ratio_err:.1e}, "
             f"0.68/1.74={printed:.4f}", elapsed, 1)


def test_criterion_06_forecast_cost_closed_form(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, pairs = 0.0, 0
    while pairs < 50:
        sc, users = random_instance(rng, n_range=(1, 12), T_range=(2, 48))
        mean = float(np.mean(sc.r - sc.w))
        b = mean + rng.uniform(-0.3, 0.3) * users.g_N / sc.T
        setting = PredictionSetting(b)
        # flat net supply makes both sides exactly zero, which tests nothing
        if population_variance(sc.net) <= 1e-12 * (users.g_N / sc.T) ** 2:
            continue
        if abs(setting.delta(sc)) < 1e-9 or not check_prediction_condition(sc, users, setting).satisfied:
            continue
        f = prediction_cost_formula(sc, users, setting)
        d = prediction_cost_direct(sc, users, setting)
        worst = max(worst, abs(f - d) / abs(d))
        pairs += 1
    elapsed = time.perf_counter() - t0
    _verdict(capsys, 6, "forecast-rule cost formula equals direct simulation", worst <= 1e-10,
             f"max relative error={worst:.2e} over 50 pairs (<=1e-10)", elapsed, 5)


def test_criterion_07_contraction(capsys):
    t0 = time.perf_counter()
    rhos = [spectral_radius(contraction_matrix(n)) for n in range(1, 51)]
    rho2 = rhos[1]
    elapsed = time.perf_counter() - t0
    ok = max(rhos) < 1 and abs(rho2 - 0.25) <= 1e-12
    _verdict(capsys, 7, "sweep map is a contraction", ok,
             f"max rho(L_n), n<=50: {max(rhos):.6f}; rho(L_2)={rho2!r}", elapsed, 1)


def test_criterion_08_best_response_dynamics(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst_err, worst_sweeps, failures = 0.0, 0, 0
    for _ in range(100):
        n, T = int(rng.integers(1, 9)), int(rng.integers(2, 17))
        wt, rt, users = random_tilde(rng, n, T)
        try:
            prof, trace = best_response_dynamics(wt, rt, users, tol=1e-8, max_iter=200)
        except Exception:
            failures += 1
            continue
        worst_sweeps = max(worst_sweeps, trace.iterations)
        exact = general_nash(wt, rt, users).values
        worst_err = max(worst_err, float(np.max(np.abs(prof.values - exact))))
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and worst_err <= 1e-7
    _verdict(capsys, 8, "sequential best responses converge to the closed form", ok,
             f"non-converged={failures}, max sweeps={worst_sweeps} (<=200), "
             f"max error={worst_err:.2e} (<=1e-7)", elapsed, 30)


def test_criterion_09_price_search(capsys):
    sc, users = household_instance(1)
    assert users.n == 20 and sc.T == 24
    np.testing.assert_allclose(users.nu_max, 2 * users.g / sc.T)
    assert not check_perfect_se(sc, users).satisfied
    eps = default_eps(sc, users)
    t0 = time.perf_counter()
    rep = numeric_se(sc, users, eps)
    elapsed = time.perf_counter() - t0
    target = leader_qp(sc, users)
    gap = (rep.leader_cost - target.value) / target.value
    err = float(np.max(np.abs(rep.demand.aggregate - target.nu_N_star)))
    ok = gap <= 0.01 and err < eps and rep.iterations <= 5000
    _verdict(capsys, 9, "price search reaches the leader optimum", ok,
             f"cost gap={gap:.2e} (<=1%), sup error={err:.2e} (<{eps:.2e}), "
             f"iterations={rep.iterations} (<=5000)", elapsed, 120)


def test_criterion_10_gradient_check(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        n, T = int(rng.integers(1, 6)), int(rng.integers(2, 12))
        wt, rt, users = random_tilde(rng, n, T)
        V = rng.uniform(0.2, 1.0, (n, T))
        prof = DemandProfile(V * (users.g / V.sum(1))[:, None])
        i = int(rng.integers(n))
        exact = quadratic_form_tilde(i, prof, wt, rt, users).gradient(prof.values[i, :-1])
        fd = finite_diff_gradient(i, prof, wt, rt, users)
        worst = max(worst, float(np.max(np.abs(fd - exact)) / np.max(np.abs(exact))))
    elapsed = time.perf_counter() - t0
    _verdict(capsys, 10, "analytic gradient 2Cd+mu matches central differences", worst <= 1e-4,
             f"max relative error={worst:.2e} (<=1e-4)", elapsed, 5)


def test_criterion_11_renewable_only(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_c, worst_p = 0.0, 0.0
    for _ in range(20):
        n, T = int(rng.integers(1, 10)), int(rng.integers(2, 30))
        sc, users = renewable_only_instance(rng, n, T)
        rep = renewable_only_se(sc, users)
        c = controllable_supply(sc, rep.demand)
        worst_c = max(worst_c, float(np.max(np.abs(c))) / users.g_N)
        worst_p = max(worst_p, float(np.max(np.abs(rep.prices - (2 + 1 / n)))))
    elapsed = time.perf_counter() - t0
    ok = worst_c <= 1e-10 and worst_p <= 1e-10
    _verdict(capsys, 11, "renewables cover demand: zero controllable supply", ok,
             f"max |c|/g_N={worst_c:.2e} (<=1e-10), max |price-(2+1/n)|={worst_p:.2e} (<=1e-10)",
             elapsed, 1)
