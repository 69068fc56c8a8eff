import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import netforge.sop as sop_mod
from conftest import random_feasible_alpha
from netforge.errors import ConvergenceError, DataError, UniquenessError
from netforge.graph import CompatibilityList, WeightList, flat_to_pair, n_pairs, pair_to_flat, to_matrix
from netforge.sop import (
    SocialObjective,
    check_marginal_reciprocity,
    check_pairwise_stability,
    newton_direction,
    projected_gradient_norm,
    recover_compat,
    solve_sop,
)
from netforge.utility import Alky
from netforge.structgen import StructureSpec, gen_random_structure

# bisection on 20c - 2 g(a) - 4a = 0 with c = 0.1035434
ALPHA_TWO = 0.5000545365046086
CBAR_HALF = 0.10352939824832166


def _random_c(seed, n):
    return gen_random_structure(StructureSpec(n, seed=seed))


def test_two_agent_optimum(alky):
    sol = solve_sop(CompatibilityList([0.1035434]), alky)
    assert sol.alpha_star.values[0] == pytest.approx(ALPHA_TWO, abs=1e-8)
    assert sol.kkt_residual < 1e-8
    assert sol.active_lower == []


def test_two_agent_vanishing_compat(alky):
    prev = 1.0
    for c in (1e-1, 1e-3, 1e-5, 1e-7):
        a = solve_sop(CompatibilityList([c]), alky, tol=1e-12).alpha_star.values[0]
        assert 0 <= a < prev
        prev = a
    assert prev < 1e-6


def test_isolated_agent_warns(alky):
    with pytest.warns(RuntimeWarning, match="isolated"):
        sol = solve_sop(CompatibilityList([1.0, 1e-6, 1e-6]), alky)
    assert sol.alpha_star.values[1] == sol.alpha_star.values[2] == 0.0
    assert sol.warnings


def test_symmetric_three_agents(alky):
    sol = solve_sop(CompatibilityList.uniform(3, 0.4), alky)
    v = sol.alpha_star.values
    assert np.ptp(v) < 1e-8 and v[0] > 0


def test_objective_trace_non_decreasing(alky):
    sol = solve_sop(_random_c(3, 10), alky, n_starts=1)
    tr = np.asarray(sol.objective_trace)
    assert np.all(np.diff(tr) >= -1e-12 * (1 + np.abs(tr[1:])))


def test_sidecar_fields(alky):
    sol = solve_sop(_random_c(1, 5), alky, n_starts=2)
    side = sol.sidecar()
    assert {"objective_value", "kkt_residual", "iterations"} <= set(side)
    assert side["starts"] == 2


def test_active_lower_has_no_ascent(alky):
    c = _random_c(7, 12)
    sol = solve_sop(c, alky)
    G = SocialObjective(c, alky).gradient(sol.alpha_star.matrix())
    for i, j in sol.active_lower:
        assert G[i, j] <= 1e-8


def test_convergence_error_reports_residual(alky):
    with pytest.raises(ConvergenceError) as err:
        solve_sop(_random_c(2, 16), alky, max_iter=1, n_starts=1)
    assert err.value.residual > 0


def test_uniqueness_violation_raises(alky, monkeypatch):
    real = sop_mod._snap
    calls = []

    def skewed(obj, W, tol):
        W = real(obj, W, tol)
        calls.append(1)
        return W + 1e-3 * (len(calls) > 1) * (W > 0)

    monkeypatch.setattr(sop_mod, "_snap", skewed)
    with pytest.raises(UniquenessError, match="uniqueness check failed"):
        solve_sop(_random_c(4, 6), alky, n_starts=2)


def test_bad_arguments(alky):
    c = CompatibilityList([0.3])
    with pytest.raises(ValueError):
        solve_sop(c, alky, tol=0)
    with pytest.raises(ValueError):
        solve_sop(c, alky, n_starts=0)


def test_hessian_flat_matches_finite_difference(alky, rng):
    c = _random_c(5, 5)
    obj = SocialObjective(c, alky)
    n = c.n_agents
    w = rng.uniform(0.05, 0.8, n_pairs(n))
    flat_grad = lambda v: obj.gradient(to_matrix(v, n))[np.triu_indices(n, 1)]
    h = 1e-6
    fd = np.empty((w.size, w.size))
    for k in range(w.size):
        e = np.zeros(w.size)
        e[k] = h
        fd[:, k] = (flat_grad(w + e) - flat_grad(w - e)) / (2 * h)
    np.testing.assert_allclose(obj.hessian_flat(to_matrix(w, n)), fd, rtol=1e-4, atol=1e-5)


def test_newton_direction_matches_dense_solve(alky, rng):
    c = _random_c(6, 7)
    obj = SocialObjective(c, alky)
    n = c.n_agents
    W = to_matrix(rng.uniform(0.05, 0.8, n_pairs(n)), n)
    G = obj.gradient(W)
    A, sig = obj.curvature(W)
    off = ~np.eye(n, dtype=bool)
    d = newton_direction(G, np.where(off, A, 1.0), sig, off)
    iu = np.triu_indices(n, 1)
    dense = np.linalg.solve(-obj.hessian_flat(W), G[iu])
    np.testing.assert_allclose(d[iu], dense, rtol=1e-10, atol=1e-12)


def test_projected_gradient_norm_blocks_outward_moves():
    W = np.array([[0, 0.0], [0.0, 0]])
    G = np.array([[0, -3.0], [-3.0, 0]])
    assert projected_gradient_norm(W, G) == 0.0
    assert projected_gradient_norm(W + 0.5 * (1 - np.eye(2)), G) == 0.5


def test_recover_two_agent(alky):
    rec = recover_compat(WeightList([0.5]), alky)
    assert rec.c_bar.values[0] == pytest.approx(CBAR_HALF, rel=1e-13)
    assert rec.slack_pairs == []


def test_recover_errors(alky):
    with pytest.raises(DataError, match="infeasible weight list"):
        recover_compat(WeightList([0.5, 0.0, 0.0]), alky)


def test_recover_round_trip_n8(alky):
    a = random_feasible_alpha(np.random.default_rng(8), 8, 0.4)
    rec = recover_compat(a, alky)
    assert np.all(rec.c_bar.values > 0)
    sol = solve_sop(rec.c_bar, alky, tol=1e-12, n_starts=1)
    assert np.abs(sol.alpha_star.values - a.values).max() < 1e-5


def test_slack_interval(alky):
    # 3 agents on a path: pair (0, 2) is absent
    a = WeightList([0.4, 0.0, 0.6])
    rec = recover_compat(a, alky)
    assert rec.slack_pairs == [(0, 2)]
    vals = rec.c_bar.values.copy()
    vals[1] /= 2
    sol = solve_sop(CompatibilityList(vals, 3), alky, tol=1e-12)
    assert sol.alpha_star.values[1] == 0.0
    np.testing.assert_allclose(sol.alpha_star.values, a.values, atol=1e-6)


def test_recover_inverts_solve_on_support(alky):
    c = _random_c(11, 9)
    sol = solve_sop(c, alky, tol=1e-12)
    rec = recover_compat(sol.alpha_star, alky)
    on = sol.alpha_star.values > 0
    np.testing.assert_allclose(rec.c_bar.values[on], c.values[on], rtol=1e-6)
    # dropped pairs are exactly those whose compatibility sits in the slack interval
    assert np.all(c.values[~on] <= rec.c_bar.values[~on] * (1 + 1e-6))


@pytest.mark.parametrize("seed", [21, 22, 23])
def test_joint_stability_on_solver_output(alky, seed):
    c = _random_c(seed, 8)
    sol = solve_sop(c, alky)
    assert check_pairwise_stability(sol.alpha_star, c, alky, severance="joint") == []


def test_unilateral_severing_can_pay_at_the_optimum(alky):
    # weak ties of a strongly matched pair: each of agents 0 and 1 gains by
    # cutting agent 2, while the social objective loses
    c = CompatibilityList([1.0, 0.2, 0.2])
    sol = solve_sop(c, alky, tol=1e-12)
    np.testing.assert_allclose(sol.alpha_star.values, [0.884145, 0.370877, 0.370877], atol=1e-6)
    bad = check_pairwise_stability(sol.alpha_star, c, alky)
    assert sorted((v.pair, v.agent) for v in bad) == [((0, 2), 0), ((1, 2), 1)]
    assert all(v.gain == pytest.approx(0.05175, abs=1e-5) for v in bad)
    assert all(v.kind == "sever" for v in bad)


def test_unilateral_stability_where_marginals_agree(alky):
    # uniform compatibilities give every endpoint the same marginal
    c = CompatibilityList.uniform(6, 0.3)
    sol = solve_sop(c, alky)
    assert check_pairwise_stability(sol.alpha_star, c, alky) == []


def test_stability_mode_validated(alky):
    with pytest.raises(ValueError):
        check_pairwise_stability(WeightList([0.5]), CompatibilityList([0.1]), alky, severance="x")


def test_stability_flags_bad_edge(alky):
    g = WeightList([0.9, 0.4, 0.4])
    c = CompatibilityList([1e-6, 0.3, 0.3])
    bad = check_pairwise_stability(g, c, alky)
    assert any(v.kind == "sever" and v.pair == (0, 1) for v in bad)


def test_stability_flags_missing_edge(alky):
    c = _random_c(22, 6)
    sol = solve_sop(c, alky)
    zeros = sol.active_lower
    if not zeros:
        g = sol.alpha_star.values.copy()
        k = int(np.argmin(g))
        g[k] = 0.0
        pair = flat_to_pair(k, 6)
        alpha = WeightList(g, 6)
    else:
        pair, alpha = zeros[0], sol.alpha_star
    vals = c.values.copy()
    vals[pair_to_flat(*pair, 6)] = 10.0
    bad = check_pairwise_stability(alpha, CompatibilityList(vals, 6), alky)
    assert any(v.kind == "add" and v.pair == pair for v in bad)


def test_reciprocity(alky):
    c = _random_c(31, 8)
    sol = solve_sop(c, alky)
    assert check_marginal_reciprocity(sol, c, alky) < 1e-7
    two = WeightList([ALPHA_TWO])
    assert check_marginal_reciprocity(two, CompatibilityList([0.1035434]), alky) < 1e-8
    vals = sol.alpha_star.values.copy()
    k = int(np.argmax(vals))
    vals[k] += 0.05
    assert check_marginal_reciprocity(WeightList(vals, 8), c, alky) > 1e-3


@settings(max_examples=10)
@given(st.integers(0, 10**6))
def test_multistart_agree(seed):
    c = _random_c(seed, 5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = solve_sop(c, Alky(), n_starts=1, seed=seed).alpha_star.values
        b = solve_sop(c, Alky(), n_starts=1, seed=seed + 1).alpha_star.values
    assert np.abs(a - b).max() < 1e-7
