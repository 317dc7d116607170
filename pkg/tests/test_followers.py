import numpy as np
import pytest
from scipy.optimize import minimize

from stackgrid import _kernels
from stackgrid._waterfill import clipped_sum_solve
from stackgrid.analytic import general_nash
from stackgrid.errors import InfeasibleBounds, MaxIterExceeded, NonpositiveTildeW
from stackgrid.followers import (
    best_response_dynamics,
    box_best_response,
    br_map,
    contraction_matrix,
    hyperplane_best_response,
    spectral_radius,
    sweep,
    verify_strict_ne,
)
from stackgrid.gamecore import DemandProfile, FlexUserSet, cost_tilde
from stackgrid.oracle import projected_stationarity

from conftest import random_tilde


def _random_profile(rng, users, T):
    V = rng.uniform(0.1, 1.0, (users.n, T))
    return DemandProfile(V * (users.g / V.sum(1))[:, None])


# ---------------------------------------------------------------------------
# water-filling


def test_waterfill_hits_total_and_bounds(rng):
    for _ in range(200):
        T = rng.integers(1, 30)
        c, s = rng.normal(size=T), rng.uniform(0.1, 2, T)
        lo, hi = rng.uniform(-1, 0, T), rng.uniform(0, 1, T)
        total = rng.uniform(lo.sum(), hi.sum())
        x, lam = clipped_sum_solve(c, s, lo, hi, total)
        assert abs(x.sum() - total) <= 1e-12 * max(1, abs(total))
        assert np.all(x >= lo) and np.all(x <= hi)
        free = (x > lo + 1e-9) & (x < hi - 1e-9)
        np.testing.assert_allclose(x[free], c[free] + s[free] * lam, atol=1e-9)


def test_waterfill_extremes_and_infeasible():
    x, _ = clipped_sum_solve([0.0, 0.0], [1.0, 1.0], 0.0, 1.0, 2.0)
    np.testing.assert_array_equal(x, [1.0, 1.0])
    with pytest.raises(InfeasibleBounds):
        clipped_sum_solve([0.0, 0.0], [1.0, 1.0], 0.0, 1.0, 2.5)


def test_kernel_matches_reference_waterfill(rng):
    for _ in range(200):
        T = int(rng.integers(1, 30))
        c, s = rng.normal(size=T), rng.uniform(0.01, 2, T)
        cap = rng.uniform(0.05, 1.0)
        total = rng.uniform(0, T * cap)
        ref, _ = clipped_sum_solve(c, s, 0.0, cap, total)
        out = np.empty(T)
        _kernels.waterfill_scalar(c, s, 0.0, cap, total, out)
        np.testing.assert_allclose(out, ref, atol=1e-12)


# ---------------------------------------------------------------------------
# best responses


def test_hyperplane_br_flat_for_single_user_constant_prices():
    users = FlexUserSet([3.0], [3.0])
    prof = DemandProfile.flat(users, 6)
    br = hyperplane_best_response(0, prof, np.full(6, 2.0), np.full(6, 0.5), users)
    np.testing.assert_allclose(br, 0.5, rtol=1e-14)


def test_hyperplane_br_is_constrained_minimizer(rng):
    wt, rt, users = random_tilde(rng, 3, 4)
    prof = _random_profile(rng, users, 4)
    i = 1
    br = hyperplane_best_response(i, prof, wt, rt, users)
    assert br.sum() == pytest.approx(users.g[i], rel=1e-10)
    others = prof.others_sum(i)
    res = minimize(lambda x: cost_tilde(x, others, wt, rt), np.full(4, users.g[i] / 4),
                   constraints=[{"type": "eq", "fun": lambda x: x.sum() - users.g[i]}],
                   method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    np.testing.assert_allclose(br, res.x, atol=1e-6)
    # exact check through the linear KKT system
    grad = (2 * br + others + rt) / wt
    assert np.ptp(grad) < 1e-9 * np.abs(grad).max()


def test_hyperplane_br_rejects_nonpositive_wt(small_users):
    prof = DemandProfile.flat(small_users, 3)
    with pytest.raises(NonpositiveTildeW):
        hyperplane_best_response(0, prof, [1.0, -1.0, 1.0], np.zeros(3), small_users)


def test_box_br_equals_hyperplane_when_inactive(rng):
    wt, rt, users = random_tilde(rng, 4, 6)
    users = FlexUserSet(users.g, users.g)  # caps never bind here
    prof = _random_profile(rng, users, 6)
    for i in range(users.n):
        h = hyperplane_best_response(i, prof, wt, rt, users)
        if np.all(h >= 0):
            np.testing.assert_allclose(box_best_response(i, prof, wt, rt, users), h, atol=1e-9)


def test_box_br_singleton_feasible_set():
    users = FlexUserSet([2.4, 1.0], [0.4, 1.0])
    prof = DemandProfile.flat(users, 6)
    wt = np.linspace(1, 2, 6)
    br = box_best_response(0, prof, wt, np.linspace(0, 1, 6), users)
    np.testing.assert_array_equal(br, np.full(6, 0.4))


def test_box_br_kkt_and_projected_gradient_oracle(rng):
    for _ in range(5):
        wt, rt, users = random_tilde(rng, 3, 3)
        users = FlexUserSet(users.g, users.g / 3 * 1.3)
        prof = _random_profile(rng, users, 3)
        br = box_best_response(0, prof, wt, rt, users)
        V = prof.values.copy()
        V[0] = br
        stat = projected_stationarity(0, DemandProfile(V), wt, rt, users, (0.0, users.nu_max[0]))
        assert stat <= 1e-8
        # long-horizon projected gradient from the flat point reaches the same minimizer
        x = np.full(3, users.g[0] / 3)
        others = prof.others_sum(0)
        step = 0.5 * wt.min()  # inverse Lipschitz constant of the gradient
        for _ in range(2000):
            grad = (2 * x + others + rt) / wt
            x, _ = clipped_sum_solve(x - step * grad, np.ones(3), 0.0, users.nu_max[0], users.g[0])
        np.testing.assert_allclose(br, x, atol=1e-10)


def test_box_br_infeasible(small_users):
    prof = DemandProfile.flat(small_users, 2)
    bad = FlexUserSet([3.0], [1.0])
    with pytest.raises(InfeasibleBounds):
        box_best_response(0, DemandProfile.flat(bad, 2), [1.0, 1.0], [0.0, 0.0], bad)


# ---------------------------------------------------------------------------
# dynamics


def test_dynamics_hyperplane_reaches_closed_form(rng):
    for _ in range(10):
        n, T = int(rng.integers(1, 8)), int(rng.integers(2, 12))
        wt, rt, users = random_tilde(rng, n, T)
        prof, trace = best_response_dynamics(wt, rt, users)
        assert trace.converged and trace.final_residual < 1e-8
        np.testing.assert_allclose(prof.values, general_nash(wt, rt, users).values, atol=1e-7)


def test_single_user_settles_after_first_sweep(rng):
    wt, rt, users = random_tilde(rng, 1, 7)
    prof, trace = best_response_dynamics(wt, rt, users)
    assert trace.iterations == 2 and trace.residuals[1] < 1e-12
    first = sweep(DemandProfile.flat(users, 7).values, wt, rt, users)
    np.testing.assert_allclose(first, general_nash(wt, rt, users).values, atol=1e-12)


def test_cycle_monotone_residuals(rng):
    for _ in range(10):
        n = int(rng.integers(2, 8))
        wt, rt, users = random_tilde(rng, n, 8)
        _, trace = best_response_dynamics(wt, rt, users)
        res = trace.residuals
        for k in range(1, len(res) - n):
            assert res[k + n] <= res[k] * (1 + 1e-9) + 1e-15


def test_uniqueness_from_random_starts(rng):
    wt, rt, users = random_tilde(rng, 5, 6)
    profiles = []
    for _ in range(10):
        start = _random_profile(rng, users, 6).values
        prof, _ = best_response_dynamics(wt, rt, users, init=start)
        profiles.append(prof.values)
    for P in profiles[1:]:
        assert np.abs(P - profiles[0]).sum() <= 1e-7


def test_dynamics_box_converges_to_kkt_point(rng):
    wt, rt, users = random_tilde(rng, 6, 10)
    users = FlexUserSet(users.g, 1.3 * users.g / 10)
    prof, trace = best_response_dynamics(wt, rt, users, use_box=True)
    assert trace.converged and not prof.box_violations(users)
    for i in range(users.n):
        assert projected_stationarity(i, prof, wt, rt, users, (0.0, users.nu_max[i])) < 1e-6


def test_box_kernel_sweep_matches_reference_sweep(rng):
    wt, rt, users = random_tilde(rng, 5, 9)
    users = FlexUserSet(users.g, 1.4 * users.g / 9)
    V = _random_profile(rng, users, 9).values
    ref = V.copy()
    for i in range(users.n):
        ref[i] = box_best_response(i, DemandProfile(ref), wt, rt, users)
    np.testing.assert_allclose(sweep(V, wt, rt, users, use_box=True), ref, atol=1e-12)


def test_dynamics_max_iter_carries_trace(rng):
    wt, rt, users = random_tilde(rng, 6, 8)
    with pytest.raises(MaxIterExceeded) as exc:
        best_response_dynamics(wt, rt, users, max_iter=3)
    assert exc.value.trace.iterations == 3
    assert exc.value.last.values.shape == (6, 8)


def test_dynamics_rejects_bad_init(rng):
    wt, rt, users = random_tilde(rng, 2, 4)
    with pytest.raises(ValueError, match="shape"):
        best_response_dynamics(wt, rt, users, init=np.zeros((3, 4)))


# ---------------------------------------------------------------------------
# affine sweep map


def test_contraction_matrix_small_cases():
    np.testing.assert_array_equal(contraction_matrix(1), [[0.0]])
    np.testing.assert_allclose(contraction_matrix(2), [[0, -0.5], [0, 0.25]])
    assert spectral_radius(contraction_matrix(2)) == pytest.approx(0.25, abs=1e-12)


def test_contraction_below_one_up_to_fifty():
    rhos = [spectral_radius(contraction_matrix(n)) for n in range(1, 51)]
    assert max(rhos) < 1
    assert all(b >= a for a, b in zip(rhos, rhos[1:]))


def test_affine_map_equals_one_sweep(rng):
    for n in (1, 2, 5, 9):
        wt, rt, users = random_tilde(rng, n, 7)
        V = _random_profile(rng, users, 7).values
        m = br_map(wt, rt, users)
        np.testing.assert_allclose(m.apply(V), sweep(V, wt, rt, users), atol=1e-12)


def test_affine_map_fixed_point_is_closed_form(rng):
    for _ in range(20):
        n, T = int(rng.integers(1, 9)), int(rng.integers(2, 17))
        wt, rt, users = random_tilde(rng, n, T)
        nu = general_nash(wt, rt, users).values
        assert np.abs(br_map(wt, rt, users).apply(nu) - nu).sum() <= 1e-9


def test_rho_independent_of_inputs(rng):
    a = br_map(*random_tilde(rng, 6, 5))
    wt, rt, users = random_tilde(rng, 6, 9)
    b = br_map(wt * 3, rt - 1, users)
    np.testing.assert_array_equal(a.L, b.L)
    assert a.rho == b.rho


# ---------------------------------------------------------------------------
# strict equilibrium check


def test_verify_strict_ne_accepts_closed_form(rng):
    wt, rt, users = random_tilde(rng, 4, 6)
    prof = general_nash(wt, rt, users)
    check = verify_strict_ne(prof, wt, rt, users, samples=50, seed=3)
    assert check.passed and check.seed == 3


def test_verify_strict_ne_finds_shifted_user(rng):
    wt, rt, users = random_tilde(rng, 4, 6)
    V = general_nash(wt, rt, users).values.copy()
    V[2, 0] += 0.01
    V[2, 1] -= 0.01
    check = verify_strict_ne(DemandProfile(V), wt, rt, users, samples=50)
    assert not check.passed
    assert 2 in check.failed_users and check.worst_user == 2


def test_verify_strict_ne_forced_point_passes():
    users = FlexUserSet([2.0], [0.5])
    prof = DemandProfile.flat(users, 4)
    check = verify_strict_ne(prof, np.ones(4), np.zeros(4), users, use_box=True)
    assert check.passed


def test_waterfill_caps_summing_exactly_to_total():
    g, T = 0.1015625, 7
    cap = g / T
    x, _ = clipped_sum_solve(np.full(T, -1.0), np.ones(T), 0.0, cap, g)
    assert np.all(np.isfinite(x)) and abs(x.sum() - g) <= 1e-15
    assert np.all(x <= cap)
