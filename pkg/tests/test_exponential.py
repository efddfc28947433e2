# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
"""
Test the lambda-free h-recursion for exponential utility and its agreement with
the general augmented-state solver.
"""

import logging
import math

import numpy as np
import pytest

from smdp_risk import (
    ExponentialUtility,
    GridError,
    HTable,
    certify_assumption1,
    h_step,
    lambda_independence_violations,
    solve_exponential,
    solve_exponential_finite,
    solve_finite,
    solve_infinite,
    splitting_residual,
    value_table_from_h,
)
from smdp_risk.exponential import compare_paths

TOL = 1e-4


@pytest.mark.unit
class TestHStep:
    """One application of the h-recursion."""

    def test_zero_cost_fixes_reciprocal_gamma(self, zero_cost_model, small_grid):
        grid, quad = small_grid(zero_cost_model)
        h = HTable(grid=grid, data=np.full((2, grid.W), 0.5), gamma=2.0)
        nxt, choice = h_step(h, zero_cost_model, quad)
        np.testing.assert_allclose(nxt.values, 0.5, atol=1e-12)
        assert choice.shape == (2, grid.W)

    def test_single_atom_closed_form(self, one_step_model, small_grid):
        grid, quad = small_grid(one_step_model)
        fin = solve_exponential_finite(one_step_model, 1.0, grid, quad, 1)
        assert fin.J(0) == pytest.approx(math.exp(0.5), abs=1e-12)

    def test_finite_zero_cost(self, zero_cost_model, small_grid):
        grid, quad = small_grid(zero_cost_model)
        fin = solve_exponential_finite(zero_cost_model, -0.5, grid, quad, 3)
        for h in fin.h:
            np.testing.assert_allclose(h.values, -2.0, atol=1e-12)

    def test_rejects_non_finite(self, zero_cost_model, small_grid):
        grid, _ = small_grid(zero_cost_model)
        data = np.ones((2, grid.W))
        data[0, 3] = np.inf
        with pytest.raises(GridError):
            HTable(grid=grid, data=data, gamma=1.0)


@pytest.mark.unit
class TestSolveExponential:
    """Sandwich iteration on h and the splitting V = exp(gamma*lambda) h."""

    def test_zero_cost_converges_at_once(self, zero_cost_model, small_grid):
        grid, quad = small_grid(zero_cost_model)
        res = solve_exponential(zero_cost_model, 1.0, grid, quad, None, TOL, 50)
        assert res.n_iters == 1
        assert res.J(0) == pytest.approx(1.0)

    def test_zero_iteration_cap_rejected(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        with pytest.raises(ValueError, match="max_iter"):
            solve_exponential(maintenance_model, 1.0, grid, quad, None, TOL, 0)

    def test_constant_cost_closed_form(self, constant_cost_model, small_grid):
        model = constant_cost_model
        grid, quad = small_grid(model, W=32, L=32, M=32)
        cert = certify_assumption1(model)
        res = solve_exponential(model, 1.0, grid, quad, cert, TOL, 1000)
        for i in range(model.n_states):
            assert abs(res.J(i) - math.exp(2.0)) <= res.value_gap + res.grid_budget

    def test_policy_depends_on_state_and_w_only(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        res = solve_exponential(maintenance_model, 1.0, grid, quad, None, TOL, 1000)
        choice = res.policy.choice
        assert np.all(choice == choice[:, :, :1])

    def test_negative_gamma_stays_in_envelope(self, maintenance_model, small_grid):
        grid, quad = small_grid(maintenance_model)
        res = solve_exponential(maintenance_model, -0.5, grid, quad, None, TOL, 1000)
        h = res.h.values
        assert np.all(h >= -2.0 - 1e-12)
        assert np.all(h <= -2.0 * np.exp(-2.0 * grid.w_nodes * 0.5) + 1e-12)
        assert res.J(0) < 0.0

    def test_log_domain_agrees_with_linear(self, maintenance_model, small_grid, caplog):
        grid, quad = small_grid(maintenance_model)
        linear = solve_exponential(maintenance_model, 1.0, grid, quad, None, TOL, 1000)
        with caplog.at_level(logging.WARNING, logger="smdp_risk.exponential"):
            logged = solve_exponential(
                maintenance_model, 1.0, grid, quad, None, TOL, 1000, overflow_threshold=0.5
            )
        assert logged.h.log_domain and not linear.h.log_domain
        assert any("log-magnitudes" in r.getMessage() for r in caplog.records)
        for i in range(maintenance_model.n_states):
            assert logged.J(i) == pytest.approx(linear.J(i), rel=2e-2)

    def test_finite_matches_general_solver(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        general = solve_finite(model, ExponentialUtility(gamma=1.0), grid, quad, 5)
        fin = solve_exponential_finite(model, 1.0, grid, quad, 5)
        diff = np.abs(general.values[-1].values[:, :, 0] - fin.h[-1].values)
        assert diff.max() <= 2.0 * general.grid_budget + 1e-9
        assert fin.policies[0].choice.shape == (2,) + grid.shape


@pytest.mark.unit
class TestCrossChecks:
    """Splitting residual and lambda-independence of the general solver's policy."""

    @pytest.mark.parametrize("gamma", [-0.5, 1.0])
    def test_splitting_identity(self, maintenance_model, small_grid, gamma):
        model = maintenance_model
        grid, quad = small_grid(model)
        cert = certify_assumption1(model)
        u = ExponentialUtility(gamma=gamma)
        general = solve_infinite(model, u, grid, quad, cert, TOL, 1000)
        exp = solve_exponential(model, gamma, grid, quad, cert, TOL, 1000)
        report = compare_paths(general, exp, model)
        assert report.ok
        assert report.residual == pytest.approx(splitting_residual(general.value, exp.h))
        assert report.general_iterations == general.n_iters

    def test_general_policy_is_lambda_free_up_to_ties(self, maintenance_model, small_grid):
        model = maintenance_model
        grid, quad = small_grid(model)
        cert = certify_assumption1(model)
        general = solve_infinite(model, ExponentialUtility(gamma=1.0), grid, quad, cert, TOL, 1000)
        assert lambda_independence_violations(general, model, quad) == []

    def test_value_table_from_h(self, maintenance_model, small_grid):
        grid, _ = small_grid(maintenance_model)
        h = HTable(grid=grid, data=np.full((2, grid.W), 2.0), gamma=0.5)
        table = value_table_from_h(h)
        np.testing.assert_allclose(table.values[1, 4], 2.0 * np.exp(0.5 * grid.lam_nodes))
        np.testing.assert_allclose(table.floor, 2.0 * np.exp(0.5 * grid.lam_nodes))

    def test_grid_mismatch(self, maintenance_model, small_grid):
        grid, _ = small_grid(maintenance_model)
        other, _ = small_grid(maintenance_model, W=8)
        h = HTable(grid=other, data=np.ones((2, other.W)), gamma=1.0)
        table = value_table_from_h(HTable(grid=grid, data=np.ones((2, grid.W)), gamma=1.0))
        with pytest.raises(GridError):
            splitting_residual(table, h)
