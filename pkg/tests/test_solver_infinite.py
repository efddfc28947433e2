# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
"""
Test sandwich value iteration, analytic error bounds, policy evaluation and improvement.
"""

import itertools
import math

import numpy as np
import pytest

from smdp_risk import (
    Assumption1Certificate,
    ExponentialUtility,
    LinearUtility,
    Log1pUtility,
    NonConvergence,
    PolicyTable,
    apply_T,
    certify_assumption1,
    error_bound,
    evaluate_stationary,
    improve_policy,
    policy_iteration,
    solve_infinite,
)
from smdp_risk.numerics import build_envelope

TOL = 1e-4


@pytest.fixture
def half_cert() -> Assumption1Certificate:
    return Assumption1Certificate(delta=math.log(2.0), epsilon=0.5)


@pytest.mark.unit
class TestErrorBound:
    """Geometric distance between n-jump and infinite-horizon values."""

    def test_linear(self, one_step_model, half_cert):
        got = error_bound(LinearUtility(), one_step_model, half_cert, 2, 1.0, 0.0)
        assert got == pytest.approx(0.5625)

    def test_zero_jumps_is_full_envelope(self, one_step_model, half_cert):
        assert error_bound(Log1pUtility(), one_step_model, half_cert, 0, 1.0, 0.0) == (
            pytest.approx(1.0)
        )

    def test_convex_branch(self, one_step_model, half_cert):
        u = ExponentialUtility(gamma=1.0)
        got = error_bound(u, one_step_model, half_cert, 1, 1.0, 0.0)
        assert got == pytest.approx(math.e * 0.75)

    def test_scales_with_w(self, one_step_model, half_cert):
        w = np.array([1.0, 0.5, 0.25])
        got = error_bound(LinearUtility(), one_step_model, half_cert, 1, w, 0.0)
        np.testing.assert_allclose(got, 0.75 * w)

    def test_negative_n(self, one_step_model, half_cert):
        with pytest.raises(ValueError):
            error_bound(LinearUtility(), one_step_model, half_cert, -1, 1.0, 0.0)


@pytest.mark.unit
class TestSolveInfinite:
    """Sandwich iteration between U(lambda) and U(w*c/alpha + lambda)."""

    def test_zero_cost_converges_at_once(self, zero_cost_model, small_grid):
        grid, quad = small_grid(zero_cost_model)
        u = Log1pUtility()
        res = solve_infinite(zero_cost_model, u, grid, quad, None, TOL, 100)
        assert res.n_iters == 1
        assert res.gap == 0.0
        expected = np.broadcast_to(np.log1p(grid.lam_nodes), res.lower.values.shape)
        np.testing.assert_allclose(res.lower.values, expected, atol=1e-12)
        np.testing.assert_allclose(res.upper.values, expected, atol=1e-12)

    def test_constant_cost_linear(self, constant_cost_model, small_grid):
        model = constant_cost_model
        grid, quad = small_grid(model, W=32, L=32, M=32)
        cert = certify_assumption1(model)
        res = solve_infinite(model, LinearUtility(), grid, quad, cert, TOL, 1000)
        for i in range(model.n_states):
            assert abs(res.J(i) - 2.0) <= TOL + res.grid_budget

    def test_constant_cost_exponential(self, constant_cost_model, small_grid):
        model = constant_cost_model
        grid, quad = small_grid(model, W=32, L=32, M=32)
        cert = certify_assumption1(model)
        res = solve_infinite(model, ExponentialUtility(gamma=1.0), grid, quad, cert, TOL, 1000)
        for i in range(model.n_states):
            assert abs(res.J(i) - math.exp(2.0)) <= TOL + res.grid_budget

    @pytest.mark.parametrize(
        "utility", [Log1pUtility(), ExponentialUtility(gamma=1.0)], ids=["log1p", "exp"]
    )
    def test_sandwich_is_monotone(self, maintenance_model, small_grid, utility):
        model = maintenance_model
        grid, quad = small_grid(model)
        env = build_envelope(grid, utility, model)
        lower, upper = env.lower_table(2), env.upper_table(2)
        for _ in range(15):
            nxt_lo, _ = apply_T(lower, model, quad, env)
            nxt_hi, _ = apply_T(upper, model, quad, env)
            assert np.all(nxt_lo.values >= lower.values)
            assert np.all(nxt_hi.values <= upper.values)
            assert np.all(nxt_lo.values <= nxt_hi.values)
            lower, upper = nxt_lo, nxt_hi

    @pytest.mark.parametrize(
        "utility", [Log1pUtility(), ExponentialUtility(gamma=1.0)], ids=["log1p", "exp"]
    )
    def test_gap_within_analytic_bound(self, maintenance_model, small_grid, utility):
        model = maintenance_model
        grid, quad = small_grid(model)
        cert = certify_assumption1(model)
        res = solve_infinite(model, utility, grid, quad, cert, TOL, 1000)
        assert res.gap <= TOL
        assert len(res.history) == res.n_iters
        for row in res.history:
            assert row["gap"] <= row["bound"] + res.grid_budget
        gaps = [row["gap"] for row in res.history]
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))

    def test_fixed_point_residual(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        res = solve_infinite(maintenance_model, Log1pUtility(), grid, quad, None, TOL, 1000)
        assert res.residual <= 2.0 * TOL

    def test_bracket_contains_midpoint(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        res = solve_infinite(
            maintenance_model, ExponentialUtility(gamma=1.0), grid, quad, None, TOL, 1000
        )
        lo, hi = res.J_bracket(0)
        assert lo <= res.J(0) <= hi
        assert hi - lo <= TOL

    def test_non_convergence_reports_gap(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        cert = certify_assumption1(maintenance_model)
        with pytest.raises(NonConvergence) as exc:
            solve_infinite(maintenance_model, Log1pUtility(), grid, quad, cert, TOL, 1)
        assert exc.value.n_iters == 1
        assert exc.value.gap > TOL
        assert exc.value.bound > 0.0

    def test_tolerance_must_be_positive(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        with pytest.raises(ValueError):
            solve_infinite(maintenance_model, LinearUtility(), grid, quad, None, 0.0, 10)

    def test_zero_iteration_cap_rejected(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        with pytest.raises(ValueError, match="max_iter"):
            solve_infinite(maintenance_model, LinearUtility(), grid, quad, None, TOL, 0)


@pytest.mark.unit
class TestGridBudget:
    """Tail error plus the change against a half-resolution solve."""

    def test_budget_is_informative_on_constant_cost(self, constant_cost_model, small_grid):
        model = constant_cost_model
        grid, quad = small_grid(model, W=32, L=32, M=32)
        res = solve_infinite(model, LinearUtility(), grid, quad, None, TOL, 1000)
        assert 0.0 < res.grid_budget < 0.25
        for i in range(model.n_states):
            assert abs(res.J(i) - 2.0) <= TOL + res.grid_budget

    def test_budget_can_be_skipped(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        res = solve_infinite(
            maintenance_model, Log1pUtility(), grid, quad, None, TOL, 1000, budget=False
        )
        assert res.grid_budget == 0.0

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "fixture, utility",
        [
            ("constant_cost_model", LinearUtility()),
            ("maintenance_model", ExponentialUtility(gamma=1.0)),
        ],
        ids=["constant-linear", "maintenance-exp"],
    )
    def test_doubling_stays_within_reported_budget(self, request, small_grid, fixture, utility):
        model = request.getfixturevalue(fixture)
        grid, quad = small_grid(model, W=16, L=16, M=16)
        coarse = solve_infinite(model, utility, grid, quad, None, TOL, 2000)
        grid, quad = small_grid(model, W=32, L=32, M=32)
        fine = solve_infinite(model, utility, grid, quad, None, TOL, 2000, budget=False)
        for i in range(model.n_states):
            assert abs(fine.J(i) - coarse.J(i)) <= coarse.grid_budget + 2.0 * TOL


@pytest.mark.unit
class TestPolicyEvaluation:
    """V_f = T_f V_f by sandwich iteration of T_f."""

    def test_single_action_matches_solver(self, constant_cost_model, small_grid):
        model = constant_cost_model
        grid, quad = small_grid(model)
        u = Log1pUtility()
        best = solve_infinite(model, u, grid, quad, None, TOL, 1000)
        f = PolicyTable.constant(grid, [0, 0])
        v_f = evaluate_stationary(model, u, grid, quad, f, TOL, 1000)
        np.testing.assert_allclose(v_f.values, best.value.values, rtol=0.0, atol=2.0 * TOL)

    def test_optimal_policy_attains_value(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        u = ExponentialUtility(gamma=1.0)
        cert = certify_assumption1(model)
        best = solve_infinite(model, u, grid, quad, cert, TOL, 1000)
        v_f = evaluate_stationary(model, u, grid, quad, best.policy, TOL, 1000)
        diff = np.abs(v_f.values - best.value.values)
        assert diff.max() <= 2.0 * TOL + best.grid_budget

    def test_bad_policy_is_worse(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        u = ExponentialUtility(gamma=1.0)
        best = solve_infinite(model, u, grid, quad, None, TOL, 1000)
        # inspect while good, keep running while worn
        bad = PolicyTable.constant(grid, [1, 0])
        v_f = evaluate_stationary(model, u, grid, quad, bad, TOL, 1000)
        assert np.all(v_f.values >= best.value.values - TOL)
        assert np.max(v_f.values - best.value.values) > 10.0 * TOL

    def test_zero_iteration_cap_rejected(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        f = PolicyTable.constant(grid, [0, 0])
        with pytest.raises(ValueError, match="max_iter"):
            evaluate_stationary(maintenance_model, LinearUtility(), grid, quad, f, TOL, 0)

    def test_brute_force_over_constant_policies(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        u = ExponentialUtility(gamma=1.0)
        best = solve_infinite(model, u, grid, quad, None, TOL, 1000)
        tables = [
            evaluate_stationary(model, u, grid, quad, PolicyTable.constant(grid, acts), TOL, 1000)
            for acts in itertools.product(range(2), range(2))
        ]
        floor = np.min(np.stack([t.values for t in tables]), axis=0)
        assert np.all(floor >= best.value.values - 2.0 * TOL)


@pytest.mark.unit
class TestPolicyImprovement:
    """Switch where an action beats V_f by more than the margin."""

    def test_optimal_policy_is_not_improved(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        u = ExponentialUtility(gamma=1.0)
        best = solve_infinite(model, u, grid, quad, None, TOL, 1000)
        policy, improved = improve_policy(model, u, grid, quad, best.policy, TOL)
        assert not improved
        assert policy.equals(best.policy)

    def test_single_action_is_never_improved(self, constant_cost_model, small_grid):
        grid, quad = small_grid(constant_cost_model)
        f = PolicyTable.constant(grid, [0, 0])
        _, improved = improve_policy(constant_cost_model, LinearUtility(), grid, quad, f, TOL)
        assert not improved

    def test_bad_policy_is_improved(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        u = ExponentialUtility(gamma=1.0)
        f = PolicyTable.constant(grid, [1, 0])
        h, improved = improve_policy(model, u, grid, quad, f, TOL)
        assert improved
        v_f = evaluate_stationary(model, u, grid, quad, f, TOL, 1000)
        v_h = evaluate_stationary(model, u, grid, quad, h, TOL, 1000)
        assert np.all(v_h.values <= v_f.values + 2.0 * TOL)

    def test_iteration_from_worst_policy(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        u = ExponentialUtility(gamma=1.0)
        candidates = [PolicyTable.constant(grid, a) for a in itertools.product(range(2), range(2))]
        worst = max(
            candidates,
            key=lambda f: evaluate_stationary(model, u, grid, quad, f, TOL, 1000).J(0),
        )
        result = policy_iteration(model, u, grid, quad, worst, TOL, max_rounds=10)
        assert result.converged
        for prev, nxt in zip(result.values, result.values[1:]):
            assert np.all(nxt.values <= prev.values + 2.0 * TOL)

        cert = certify_assumption1(model)
        best = solve_infinite(model, u, grid, quad, cert, TOL, 1000)
        margin = 10.0 * TOL
        for i in range(model.n_states):
            assert abs(result.value.J(i) - best.J(i)) <= best.grid_budget + 2.0 * TOL + 10 * margin
