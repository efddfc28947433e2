# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .bellman import (
    PolicyTable,
    action_stack,
    apply_T,
    apply_Tf,
    select_min,
)
from .model import Assumption1Certificate, SmdpModel
from .numerics import (
    AugGrid,
    Envelope,
    QuadratureRule,
    ValueTable,
    build_envelope,
    coarse_companion,
    doubling_gap,
    tail_error,
)
from .tracing import IterationTrace, start_span
from .utility import _UtilityBase

logger = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    def __init__(self, gap: float, bound: float, n_iters: int):
        self.gap = gap
        self.bound = bound
        self.n_iters = n_iters
        super().__init__(
            f"no convergence after {n_iters} iterations: gap {gap:.6g}, analytic bound {bound:.6g}"
        )


def error_bound(
    utility: _UtilityBase,
    model: SmdpModel,
    cert: Assumption1Certificate,
    n: int,
    w,
    lam,
):
    """Analytic distance between n-jump and infinite-horizon values.

    Concave U: U'_-(lam) * w*c_bar/alpha * rho**n.
    Convex U:  U'_+(w*c_bar/alpha + lam) * w*c_bar/alpha * rho**n.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    span = np.asarray(w, dtype=float) * (model.c_bar / model.alpha)
    rho = cert.rho(model.alpha)
    if utility.is_concave:
        slope = utility.deriv_left(lam)
    elif utility.is_convex:
        slope = utility.deriv_right(span + np.asarray(lam, dtype=float))
    else:  # pragma: no cover - every utility kind is classified
        raise ValueError("utility shape must be concave or convex")
    out = slope * span * rho**n
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SandwichResult:
    lower: ValueTable
    upper: ValueTable
    n_iters: int
    gap: float
    bound: np.ndarray
    policy: PolicyTable
    grid_budget: float = 0.0
    residual: float = 0.0
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def value(self) -> ValueTable:
        """Midpoint estimate; half the gap is its error bar."""
        return self.lower.replace(0.5 * (self.lower.values + self.upper.values))

    @property
    def half_gap(self) -> float:
        return 0.5 * self.gap

    def J(self, i: int) -> float:
        return self.value.J(i)

    def J_bracket(self, i: int) -> Tuple[float, float]:
        return self.lower.J(i), self.upper.J(i)


Step = Callable[[ValueTable], ValueTable]


def _sandwich(
    step: Step,
    lower: ValueTable,
    upper: ValueTable,
    *,
    tol: float,
    max_iter: int,
    bound_at: Callable[[int], float],
    trace: IterationTrace,
    label: str,
) -> Tuple[ValueTable, ValueTable, int, float, List[Dict[str, float]]]:
    history: List[Dict[str, float]] = []
    for n in range(1, max_iter + 1):
        lower = step(lower)
        upper = step(upper)
        gap = float(np.max(upper.values - lower.values))
        row = {"n": n, "gap": gap, "bound": bound_at(n)}
        history.append(row)
        trace.record("iteration", **row)
        logger.debug(f"[SOLVER] {label} n={n} gap={gap:.6g} bound={row['bound']:.6g}")
        if gap <= tol:
            return lower, upper, n, gap, history
    logger.warning(f"[SOLVER] {label} stopped at max_iter={max_iter} with gap {gap:.6g}")
    raise NonConvergence(gap, bound_at(max_iter), max_iter)


def _bound_fn(
    utility: _UtilityBase, model: SmdpModel, cert: Optional[Assumption1Certificate], grid: AugGrid
) -> Callable[[int], float]:
    if cert is None:
        return lambda n: float("nan")
    w, lam = grid.mesh()
    return lambda n: float(np.max(error_bound(utility, model, cert, n, w, lam)))


def _grid_budget(
    fine: ValueTable,
    model: SmdpModel,
    utility: _UtilityBase,
    quad: QuadratureRule,
    cert: Optional[Assumption1Certificate],
    tol: float,
    max_iter: int,
    workers: int,
) -> float:
    """Tail error plus the node-wise change against a half-resolution solve."""
    grid, coarse_quad = coarse_companion(fine.grid, quad, model)
    coarse = solve_infinite(
        model, utility, grid, coarse_quad, cert, tol, max_iter, workers=workers, budget=False
    )
    change = doubling_gap(fine, coarse.value)
    logger.debug(f"[SOLVER] {grid.W}x{grid.L} companion moves values by {change:.3g}")
    return tail_error(build_envelope(fine.grid, utility, model)) + change


def _check_limits(tol: float, max_iter: int) -> None:
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")


def solve_infinite(
    model: SmdpModel,
    utility: _UtilityBase,
    grid: AugGrid,
    quad: QuadratureRule,
    cert: Optional[Assumption1Certificate],
    tol: float,
    max_iter: int,
    *,
    workers: int = 1,
    budget: bool = True,
    trace: Optional[IterationTrace] = None,
) -> SandwichResult:
    """Sandwich value iteration from U(lambda) and U(w*c/alpha + lambda)."""
    _check_limits(tol, max_iter)
    env = build_envelope(grid, utility, model)
    trace = trace if trace is not None else IterationTrace("sandwich")
    bound_at = _bound_fn(utility, model, cert, grid)

    def step(v: ValueTable) -> ValueTable:
        return apply_T(v, model, quad, env, workers=workers)[0]

    with start_span("solver.sandwich", tol=tol, max_iter=max_iter) as span:
        lower, upper, n, gap, history = _sandwich(
            step,
            env.lower_table(model.n_states),
            env.upper_table(model.n_states),
            tol=tol,
            max_iter=max_iter,
            bound_at=bound_at,
            trace=trace,
            label="sandwich",
        )
        t_lower, policy = apply_T(lower, model, quad, env, workers=workers)
        residual = float(np.max(np.abs(t_lower.values - lower.values)))
        span.set_attribute("iterations", n)
        span.set_attribute("gap", gap)
    value = lower.replace(0.5 * (lower.values + upper.values))
    grid_budget = 0.0
    if budget:
        grid_budget = _grid_budget(value, model, utility, quad, cert, tol, max_iter, workers)
    w, lam = grid.mesh()
    bound = (
        error_bound(utility, model, cert, n, w, lam) * np.ones(grid.shape)
        if cert is not None
        else np.full(grid.shape, np.nan)
    )
    trace.finish(n_iters=n, gap=gap, grid_budget=grid_budget)
    logger.info(
        f"[SOLVER] sandwich converged in {n} iterations: gap={gap:.3g} "
        f"residual={residual:.3g} grid budget={grid_budget:.3g}"
    )
    return SandwichResult(
        lower=lower,
        upper=upper,
        n_iters=n,
        gap=gap,
        bound=bound,
        policy=policy,
        grid_budget=grid_budget,
        residual=residual,
        history=history,
    )


def evaluate_policy(
    model: SmdpModel,
    utility: _UtilityBase,
    grid: AugGrid,
    quad: QuadratureRule,
    f: PolicyTable,
    tol: float,
    max_iter: int,
    *,
    cert: Optional[Assumption1Certificate] = None,
    workers: int = 1,
    trace: Optional[IterationTrace] = None,
) -> SandwichResult:
    """Sandwich iteration of T_f; the bracket around V_f with ``f`` as the policy."""
    _check_limits(tol, max_iter)
    f.check(model)
    env = build_envelope(grid, utility, model)
    trace = trace if trace is not None else IterationTrace("policy_evaluation")

    def step(v: ValueTable) -> ValueTable:
        return apply_Tf(v, f, model, quad, env, workers=workers)

    with start_span("solver.policy_evaluation", tol=tol) as span:
        lower, upper, n, gap, history = _sandwich(
            step,
            env.lower_table(model.n_states),
            env.upper_table(model.n_states),
            tol=tol,
            max_iter=max_iter,
            bound_at=_bound_fn(utility, model, cert, grid),
            trace=trace,
            label="policy evaluation",
        )
        span.set_attribute("iterations", n)
    trace.finish(n_iters=n, gap=gap)
    return SandwichResult(
        lower=lower,
        upper=upper,
        n_iters=n,
        gap=gap,
        bound=np.full(grid.shape, np.nan),
        policy=f,
        history=history,
    )


def evaluate_stationary(
    model: SmdpModel,
    utility: _UtilityBase,
    grid: AugGrid,
    quad: QuadratureRule,
    f: PolicyTable,
    tol: float,
    max_iter: int,
    *,
    workers: int = 1,
) -> ValueTable:
    return evaluate_policy(model, utility, grid, quad, f, tol, max_iter, workers=workers).value


def _improve_against(
    v_f: ValueTable,
    f: PolicyTable,
    model: SmdpModel,
    quad: QuadratureRule,
    env: Envelope,
    margin: float,
) -> Tuple[PolicyTable, bool]:
    choice = f.choice.copy()
    for i in range(model.n_states):
        stack = np.stack([env.project(s) for s in action_stack(v_f, model, quad, i)])
        best_val, best = select_min(stack)
        switch = best_val < v_f.values[i] - margin
        choice[i] = np.where(switch, best, choice[i])
    improved = not np.array_equal(choice, f.choice)
    return PolicyTable(grid=f.grid, choice=choice), improved


def improve_policy(
    model: SmdpModel,
    utility: _UtilityBase,
    grid: AugGrid,
    quad: QuadratureRule,
    f: PolicyTable,
    tol: float,
    *,
    margin: Optional[float] = None,
    max_iter: int = 1000,
    workers: int = 1,
) -> Tuple[PolicyTable, bool]:
    """Switch to the minimizing action wherever it beats V_f by more than ``margin``."""
    margin = 10.0 * tol if margin is None else margin
    v_f = evaluate_stationary(model, utility, grid, quad, f, tol, max_iter, workers=workers)
    env = build_envelope(grid, utility, model)
    return _improve_against(v_f, f, model, quad, env, margin)


@dataclass
class PolicyIterationResult:
    policies: List[PolicyTable]
    values: List[ValueTable]
    converged: bool

    @property
    def policy(self) -> PolicyTable:
        return self.policies[-1]

    @property
    def value(self) -> ValueTable:
        return self.values[-1]


def policy_iteration(
    model: SmdpModel,
    utility: _UtilityBase,
    grid: AugGrid,
    quad: QuadratureRule,
    f0: PolicyTable,
    tol: float,
    *,
    max_rounds: int = 20,
    margin: Optional[float] = None,
    max_iter: int = 1000,
    workers: int = 1,
) -> PolicyIterationResult:
    """Evaluate-then-improve rounds until no node switches or ``max_rounds`` is hit.

    ``values[k]`` is V of ``policies[k]``; the sequence is nonincreasing up to 2*tol.
    """
    margin = 10.0 * tol if margin is None else margin
    env = build_envelope(grid, utility, model)
    policies, values = [f0], []
    f = f0
    for k in range(max_rounds):
        v_f = evaluate_stationary(model, utility, grid, quad, f, tol, max_iter, workers=workers)
        values.append(v_f)
        f_next, improved = _improve_against(v_f, f, model, quad, env, margin)
        J = [v_f.J(i) for i in range(model.n_states)]
        logger.info(f"[SOLVER] policy iteration round {k + 1}: J={J} improved={improved}")
        if not improved:
            return PolicyIterationResult(policies=policies, values=values, converged=True)
        policies.append(f_next)
        f = f_next
    v_f = evaluate_stationary(model, utility, grid, quad, f, tol, max_iter, workers=workers)
    values.append(v_f)
    return PolicyIterationResult(policies=policies, values=values, converged=False)
