# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .bellman import PolicyTable, apply_T, apply_Tf
from .model import SmdpModel
from .numerics import (
    AugGrid,
    GridError,
    QuadratureRule,
    ValueTable,
    bracket_violation,
    build_envelope,
    coarse_companion,
    doubling_gap,
    tail_error,
)
from .tracing import IterationTrace, start_span
from .utility import _UtilityBase

logger = logging.getLogger(__name__)


@dataclass
class FiniteSolution:
    """V_0..V_N and the time-to-go policies f*_1..f*_N.

    ``policies[n - 1]`` minimizes V_{n-1}; at jump k of an N-jump run the
    optimal action is read from ``policies[N - 1 - k]``.
    """

    values: List[ValueTable]
    policies: List[PolicyTable]
    grid_budget: float = 0.0
    trace: Optional[IterationTrace] = field(default=None, repr=False)

    @property
    def horizon(self) -> int:
        return len(self.policies)

    def J(self, i: int) -> float:
        return self.values[-1].J(i)


def solve_finite(
    model: SmdpModel,
    utility: _UtilityBase,
    grid: AugGrid,
    quad: QuadratureRule,
    N: int,
    *,
    workers: int = 1,
    budget: bool = True,
    trace: Optional[IterationTrace] = None,
) -> FiniteSolution:
    if N < 1:
        raise GridError(f"horizon must be >= 1, got {N}")
    env = build_envelope(grid, utility, model)
    trace = trace if trace is not None else IterationTrace("finite")
    values = [env.lower_table(model.n_states)]
    policies: List[PolicyTable] = []
    with start_span("solver.finite", horizon=N, states=model.n_states) as span:
        for n in range(1, N + 1):
            nxt, policy = apply_T(values[-1], model, quad, env, workers=workers)
            violation = bracket_violation(nxt, env)
            if violation > 0.0:  # pragma: no cover - projection keeps tables inside
                logger.warning(f"[SOLVER] V_{n} leaves the envelope by {violation:.3g}")
            values.append(nxt)
            policies.append(policy)
            J = [nxt.J(i) for i in range(model.n_states)]
            trace.record("iteration", n=n, J=J)
            logger.debug(f"[SOLVER] finite n={n} J={J}")
        grid_budget = 0.0
        if budget:
            coarse_grid, coarse_quad = coarse_companion(grid, quad, model)
            coarse = solve_finite(
                model, utility, coarse_grid, coarse_quad, N, workers=workers, budget=False
            )
            grid_budget = tail_error(env) + doubling_gap(values[-1], coarse.values[-1])
        span.set_attribute("grid_budget", grid_budget)
    trace.finish(grid_budget=grid_budget)
    logger.info(f"[SOLVER] finite horizon N={N} solved; grid budget {grid_budget:.3g}")
    return FiniteSolution(values=values, policies=policies, grid_budget=grid_budget, trace=trace)


def evaluate_markov_policy(
    model: SmdpModel,
    utility: _UtilityBase,
    grid: AugGrid,
    quad: QuadratureRule,
    policy_seq: Sequence[PolicyTable],
    *,
    workers: int = 1,
) -> ValueTable:
    """V_{N,pi} for a Markov policy given in time-to-go order (``policy_seq[0]`` acts last)."""
    if not policy_seq:
        raise GridError("policy sequence must be nonempty")
    env = build_envelope(grid, utility, model)
    v = env.lower_table(model.n_states)
    for f in policy_seq:
        f.check(model)
        v = apply_Tf(v, f, model, quad, env, workers=workers)
    return v
