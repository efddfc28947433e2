# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
"""Exponential utility U(lam) = exp(gamma*lam)/gamma.

Values split as V(i, w, lam) = exp(gamma*lam) * h(i, w), so the lambda axis drops
out and the recursion runs on h alone.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.special import logsumexp

from .bellman import PolicyTable, action_stack
from .model import Assumption1Certificate, SmdpModel
from .numerics import AugGrid, GridError, QuadratureRule, ValueTable, coarse_companion
from .solver_infinite import NonConvergence, SandwichResult, error_bound
from .tracing import IterationTrace, start_span
from .utility import ExponentialUtility

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HTable:
    """h(i, w) on the w-nodes of ``grid``.

    ``data`` holds h itself, or log|h| when ``log_domain`` is set (h has the sign of gamma).
    """

    grid: AugGrid
    data: np.ndarray
    gamma: float
    log_domain: bool = False

    def __post_init__(self) -> None:
        if self.data.shape[1:] != (self.grid.W,):
            raise GridError("h-table must be (S, W)")
        if not np.all(np.isfinite(self.data)):
            raise GridError("h-table has non-finite entries")

    @property
    def sign(self) -> float:
        return 1.0 if self.gamma > 0 else -1.0

    @property
    def values(self) -> np.ndarray:
        if self.log_domain:
            return self.sign * np.exp(self.data)
        return self.data

    def J(self, i: int) -> float:
        return float(self.values[i, 0])

    def replace(self, data: np.ndarray) -> "HTable":
        return HTable(grid=self.grid, data=data, gamma=self.gamma, log_domain=self.log_domain)

    def at(self, i: int, w) -> np.ndarray:
        return _interp_h(self, self.data[i], w)


@dataclass(frozen=True, eq=False)
class HEnvelope:
    """h lies between 1/gamma and exp(gamma*w*span)/gamma, in ``data`` units."""

    grid: AugGrid
    gamma: float
    span: float
    log_domain: bool

    def floor(self) -> float:
        return -math.log(abs(self.gamma)) if self.log_domain else 1.0 / self.gamma

    def cap(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.log_domain:
            return self.floor() + self.gamma * w * self.span
        return np.exp(self.gamma * w * self.span) / self.gamma

    def project(self, data: np.ndarray, w) -> np.ndarray:
        a = np.full(np.shape(data), self.floor())
        b = self.cap(w) + 0.0 * a
        return np.clip(data, np.minimum(a, b), np.maximum(a, b))

    def tables(self, n_states: int, log_domain: bool) -> Tuple[HTable, HTable]:
        lo = np.full((n_states, self.grid.W), self.floor())
        hi = np.broadcast_to(self.cap(self.grid.w_nodes), (n_states, self.grid.W)).copy()
        return (
            HTable(grid=self.grid, data=lo, gamma=self.gamma, log_domain=log_domain),
            HTable(grid=self.grid, data=hi, gamma=self.gamma, log_domain=log_domain),
        )


def _interp_h(h: HTable, row: np.ndarray, w) -> np.ndarray:
    grid = h.grid
    w = np.asarray(w, dtype=float)
    u = grid.w_coord(w)
    below = u > grid.W - 1
    k0 = np.clip(np.floor(u), 0, grid.W - 2).astype(np.intp)
    s = np.clip(u - k0, 0.0, 1.0)
    out = (1.0 - s) * row[k0] + s * row[k0 + 1]
    if grid.tail != "pinch" or not np.any(below):
        return out
    r = np.where(below, np.minimum(w, 1.0) / grid.w_min, 1.0)
    if h.log_domain:
        g_floor = -math.log(abs(h.gamma))
        with np.errstate(divide="ignore"):
            blended = np.logaddexp(np.log1p(-r) + g_floor, np.log(r) + out)
        return np.where(below, blended, out)
    base = 1.0 / h.gamma
    return np.where(below, base + r * (out - base), out)


def use_log_domain(model: SmdpModel, gamma: float, threshold: float) -> bool:
    scale = abs(gamma) * model.c_bar / model.alpha
    if scale > threshold:
        logger.warning(
            f"[EXP] |gamma|*c_bar/alpha = {scale:.3g} exceeds {threshold:g}; "
            "h-table switches to log-magnitudes"
        )
        return True
    return False


def _h_envelope(grid: AugGrid, gamma: float, model: SmdpModel, log_domain: bool) -> HEnvelope:
    return HEnvelope(
        grid=grid, gamma=gamma, span=model.envelope_rate / model.alpha, log_domain=log_domain
    )


def _action_h(h: HTable, model: SmdpModel, quad: QuadratureRule, i: int, a: int, w) -> np.ndarray:
    """One-jump expectation for action a at weights w, in ``h.data`` units."""
    w = np.asarray(w, dtype=float)
    rate = h.gamma * model.cost_rate(i, a) / model.alpha
    parts = []
    total = None
    for j, p in model.successors(i, a):
        d = quad.decay[(i, a, j)].reshape((quad.M,) + (1,) * w.ndim)
        expo = rate * w * (1.0 - d)
        hv = _interp_h(h, h.data[j], w * d)
        if h.log_domain:
            parts.append(math.log(p) - math.log(quad.M) + expo + hv)
        else:
            term = p * np.tensordot(quad.weights, np.exp(expo) * hv, axes=(0, 0))
            total = term if total is None else total + term
    if h.log_domain:
        return logsumexp(np.concatenate(parts, axis=0), axis=0)
    return total


def _h_apply(
    h: HTable, model: SmdpModel, quad: QuadratureRule, env: HEnvelope, w, workers: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    def node(i: int):
        stack = np.stack([_action_h(h, model, quad, i, a, w) for a in range(model.n_actions(i))])
        key = h.sign * stack if h.log_domain else stack
        best = np.argmin(key, axis=0)
        vals = np.take_along_axis(stack, best[None], axis=0)[0]
        return env.project(vals, w), best

    if workers > 1 and model.n_states > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(node, range(model.n_states)))
    else:
        out = [node(i) for i in range(model.n_states)]
    return np.stack([o[0] for o in out]), np.stack([o[1] for o in out]).astype(np.int64)


def h_step(
    h: HTable, model: SmdpModel, quad: QuadratureRule, *, workers: int = 1
) -> Tuple[HTable, np.ndarray]:
    """One application of the h-recursion; returns the new table and the (S, W) argmin."""
    env = _h_envelope(h.grid, h.gamma, model, h.log_domain)
    data, choice = _h_apply(h, model, quad, env, h.grid.w_nodes, workers)
    return h.replace(data), choice


def policy_from_choice(grid: AugGrid, choice: np.ndarray) -> PolicyTable:
    """Lift an (S, W) action table to a PolicyTable constant along lambda."""
    full = np.broadcast_to(choice[:, :, None], choice.shape + (grid.L,)).copy()
    return PolicyTable(grid=grid, choice=full)


def _midpoint(a: HTable, b: HTable) -> HTable:
    mid = 0.5 * (a.values + b.values)
    data = np.log(np.abs(mid)) if a.log_domain else mid
    return a.replace(data)


@dataclass
class ExponentialFinite:
    h: List[HTable]
    policies: List[PolicyTable]

    def J(self, i: int) -> float:
        return self.h[-1].J(i)


def solve_exponential_finite(
    model: SmdpModel,
    gamma: float,
    grid: AugGrid,
    quad: QuadratureRule,
    N: int,
    *,
    overflow_threshold: float = 30.0,
    workers: int = 1,
) -> ExponentialFinite:
    """h_0 = 1/gamma, h_n = step(h_{n-1}); V_n = exp(gamma*lam) * h_n."""
    if N < 1:
        raise GridError(f"horizon must be >= 1, got {N}")
    log_domain = use_log_domain(model, gamma, overflow_threshold)
    env = _h_envelope(grid, gamma, model, log_domain)
    hs = [env.tables(model.n_states, log_domain)[0]]
    policies = []
    for _ in range(N):
        nxt, choice = h_step(hs[-1], model, quad, workers=workers)
        hs.append(nxt)
        policies.append(policy_from_choice(grid, choice))
    J = [hs[-1].J(i) for i in range(model.n_states)]
    logger.info(f"[EXP] finite horizon N={N}: J={J}")
    return ExponentialFinite(h=hs, policies=policies)


@dataclass
class ExponentialResult:
    h: HTable
    lower: HTable
    upper: HTable
    n_iters: int
    gap: float
    policy: PolicyTable
    grid_budget: float = 0.0
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def value_gap(self) -> float:
        return float(np.max(np.abs(self.upper.values - self.lower.values)))

    def J(self, i: int) -> float:
        return self.h.J(i)


def solve_exponential(
    model: SmdpModel,
    gamma: float,
    grid: AugGrid,
    quad: QuadratureRule,
    cert: Optional[Assumption1Certificate],
    tol: float,
    max_iter: int,
    *,
    overflow_threshold: float = 30.0,
    workers: int = 1,
    budget: bool = True,
    trace: Optional[IterationTrace] = None,
) -> ExponentialResult:
    """Sandwich iteration of the h-recursion between 1/gamma and exp(gamma*w*c/alpha)/gamma."""
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    utility = ExponentialUtility(gamma=gamma)
    log_domain = use_log_domain(model, gamma, overflow_threshold)
    env = _h_envelope(grid, gamma, model, log_domain)
    lower, upper = env.tables(model.n_states, log_domain)
    trace = trace if trace is not None else IterationTrace("exponential")
    history: List[Dict[str, float]] = []
    bound = float("nan")
    with start_span("exp.sandwich", gamma=gamma, tol=tol, log_domain=log_domain) as span:
        for n in range(1, max_iter + 1):
            lower, _ = h_step(lower, model, quad, workers=workers)
            upper, _ = h_step(upper, model, quad, workers=workers)
            gap = float(np.max(np.abs(upper.data - lower.data)))
            if cert is not None:
                bound = float(np.max(error_bound(utility, model, cert, n, grid.w_nodes, 0.0)))
            row = {"n": n, "gap": gap, "bound": bound}
            history.append(row)
            trace.record("iteration", **row)
            logger.debug(f"[EXP] n={n} gap={gap:.6g}")
            if gap <= tol:
                break
        else:
            logger.warning(f"[EXP] stopped at max_iter={max_iter} with gap {gap:.6g}")
            raise NonConvergence(gap, bound, max_iter)
        _, choice = h_step(lower, model, quad, workers=workers)
        span.set_attribute("iterations", n)
        span.set_attribute("gap", gap)
    h = _midpoint(lower, upper)
    grid_budget = 0.0
    if budget:
        coarse_grid, coarse_quad = coarse_companion(grid, quad, model)
        coarse = solve_exponential(
            model,
            gamma,
            coarse_grid,
            coarse_quad,
            cert,
            tol,
            max_iter,
            overflow_threshold=overflow_threshold,
            workers=workers,
            budget=False,
        )
        grid_budget = _h_budget(h, coarse.h, env)
    trace.finish(n_iters=n, gap=gap, grid_budget=grid_budget)
    logger.info(
        f"[EXP] converged in {n} iterations: gap={gap:.3g} "
        f"J={[h.J(i) for i in range(model.n_states)]}"
    )
    return ExponentialResult(
        h=h,
        lower=lower,
        upper=upper,
        n_iters=n,
        gap=gap,
        policy=policy_from_choice(grid, choice),
        grid_budget=grid_budget,
        history=history,
    )


def _h_budget(h: HTable, coarse: HTable, env: HEnvelope) -> float:
    """Tail error plus the node-wise change against a half-resolution solve, in h units."""
    grid = h.grid
    tail = abs(math.expm1(h.gamma * grid.w_min * env.span) / h.gamma)
    change = max(
        float(np.max(np.abs(h.values[i] - _h_value(coarse, coarse.at(i, grid.w_nodes)))))
        for i in range(h.values.shape[0])
    )
    return tail + change


def _h_value(h: HTable, data: np.ndarray) -> np.ndarray:
    return h.sign * np.exp(data) if h.log_domain else data


# -------------------------------
# Cross-checks against the general solver
# -------------------------------


def value_table_from_h(h: HTable) -> ValueTable:
    lam = h.grid.lam_nodes
    scale = np.exp(h.gamma * lam)
    values = h.values[:, :, None] * scale[None, None, :]
    return ValueTable(
        grid=h.grid, values=values, floor=scale / h.gamma, utility=ExponentialUtility(gamma=h.gamma)
    )


def splitting_residual(table: ValueTable, h: HTable) -> float:
    """max |V - exp(gamma*lam) h| over nodes reachable from (w=1, lam=0)."""
    if not table.grid.same_as(h.grid):
        raise GridError("value table and h-table live on different grids")
    mask = table.grid.reachable()
    diff = np.abs(table.values - value_table_from_h(h).values)
    return float(np.max(diff[:, mask]))


def splitting_budget(general: SandwichResult, exp: ExponentialResult) -> float:
    lam = general.lower.grid.lam_nodes
    mask = general.lower.grid.reachable()
    scale = float(np.max(np.broadcast_to(np.exp(exp.h.gamma * lam)[None, :], mask.shape)[mask]))
    return general.gap + general.grid_budget + scale * (exp.value_gap + exp.grid_budget)


def lambda_independence_violations(
    result: SandwichResult,
    model: SmdpModel,
    quad: QuadratureRule,
    tie_tol: Optional[float] = None,
) -> List[Tuple[int, int]]:
    """(state, w-index) slices whose chosen actions are not all near-minimal across lambda."""
    tie_tol = 2.0 * result.gap + result.grid_budget if tie_tol is None else tie_tol
    mask = result.lower.grid.reachable()
    out = []
    for i in range(model.n_states):
        stack = action_stack(result.lower, model, quad, i)
        best = stack.min(axis=0)
        for k in range(result.lower.grid.W):
            cols = mask[k]
            if not cols.any():
                continue
            for a in np.unique(result.policy.choice[i, k, cols]):
                if np.any(stack[a, k, cols] - best[k, cols] > tie_tol):
                    out.append((i, k))
                    break
    return out


class CompareReport(BaseModel):
    gamma: float
    residual: float
    budget: float
    general_iterations: int
    exponential_iterations: int
    J_general: List[float]
    J_exponential: List[float]

    @property
    def ok(self) -> bool:
        return self.residual <= self.budget


def compare_paths(
    general: SandwichResult, exp: ExponentialResult, model: SmdpModel
) -> CompareReport:
    return CompareReport(
        gamma=exp.h.gamma,
        residual=splitting_residual(general.value, exp.h),
        budget=splitting_budget(general, exp),
        general_iterations=general.n_iters,
        exponential_iterations=exp.n_iters,
        J_general=[general.J(i) for i in range(model.n_states)],
        J_exponential=[exp.J(i) for i in range(model.n_states)],
    )
