# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .model import SmdpModel
from .numerics import (
    AugGrid,
    Envelope,
    GridError,
    QuadratureRule,
    ValueTable,
    interp_slice,
)

logger = logging.getLogger(__name__)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise GridError(msg)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Action index per (state, w-node, lambda-node)."""

    grid: AugGrid
    choice: np.ndarray

    def __post_init__(self) -> None:
        _require(self.choice.ndim == 3, "policy table must be (S, W, L)")
        _require(self.choice.shape[1:] == self.grid.shape, "policy table does not match grid")

    @classmethod
    def constant(cls, grid: AugGrid, actions: Sequence[int]) -> "PolicyTable":
        """Stationary policy choosing ``actions[i]`` in state i regardless of (w, lambda)."""
        choice = np.empty((len(actions),) + grid.shape, dtype=np.int64)
        for i, a in enumerate(actions):
            choice[i] = a
        return cls(grid=grid, choice=choice)

    @classmethod
    def random(cls, grid: AugGrid, model: SmdpModel, rng: np.random.Generator) -> "PolicyTable":
        choice = np.stack(
            [rng.integers(0, model.n_actions(i), size=grid.shape) for i in range(model.n_states)]
        ).astype(np.int64)
        return cls(grid=grid, choice=choice)

    @classmethod
    def from_rule(
        cls,
        grid: AugGrid,
        model: SmdpModel,
        rule: Callable[[int, np.ndarray, np.ndarray], np.ndarray],
    ) -> "PolicyTable":
        """Sample ``rule(i, w, lam)`` at the grid nodes; w and lam arrive as (W, 1) and (1, L)."""
        w, lam = grid.mesh()
        rows = [
            np.broadcast_to(np.asarray(rule(i, w, lam)), grid.shape) for i in range(model.n_states)
        ]
        choice = np.stack(rows).astype(np.int64)
        return cls(grid=grid, choice=choice).check(model)

    def check(self, model: SmdpModel) -> "PolicyTable":
        _require(self.choice.shape[0] == model.n_states, "policy table has wrong state count")
        for i in range(model.n_states):
            row = self.choice[i]
            if row.min() < 0 or row.max() >= model.n_actions(i):
                raise GridError(f"policy chooses an inadmissible action in state {model.states[i]}")
        return self

    def lookup(self, states, w, lam) -> np.ndarray:
        """Nearest-node action for each (state, w, lambda); vectorized."""
        k, j = self.grid.nearest(w, lam)
        return self.choice[np.asarray(states, dtype=np.intp), k, j]

    def action(self, i: int, w: float, lam: float) -> int:
        return int(self.lookup(i, w, lam))

    def equals(self, other: "PolicyTable") -> bool:
        return self.grid.same_as(other.grid) and np.array_equal(self.choice, other.choice)


def _same_grid(v: ValueTable, grid: AugGrid) -> None:
    if not v.grid.same_as(grid):
        raise GridError("value table and policy/envelope live on different grids")


# -------------------------------
# One-jump expectations
# -------------------------------


def action_values(
    v: ValueTable, model: SmdpModel, quad: QuadratureRule, i: int, a: int, w, lam
) -> np.ndarray:
    """(L v)(i, w, lambda, a) at broadcastable (w, lambda), before projection.

    Destinations are reduced in ascending order, atoms with one fixed dot product.
    """
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lam, dtype=float)
    rate = model.cost_rate(i, a) / model.alpha
    weights = quad.weights
    total = None
    for j, p in model.successors(i, a):
        d = quad.decay[(i, a, j)].reshape((quad.M,) + (1,) * w.ndim)
        w_next = w * d
        lam_next = lam + rate * w * (1.0 - d)
        vals = interp_slice(v.grid, v.values[j], v.floor, w_next, lam_next, v.utility)
        term = p * np.tensordot(weights, vals, axes=(0, 0))
        total = term if total is None else total + term
    return np.broadcast_to(total, np.broadcast(w, lam).shape)


def apply_L(
    v: ValueTable, i: int, w: float, lam: float, a: int, quad: QuadratureRule, model: SmdpModel
) -> float:
    if not 0 <= a < model.n_actions(i):
        raise GridError(f"action {a} not admissible in state {model.states[i]}")
    return float(action_values(v, model, quad, i, a, w, lam))


def action_stack(
    v: ValueTable, model: SmdpModel, quad: QuadratureRule, i: int, actions=None
) -> np.ndarray:
    """L-values of every admissible action on the grid nodes, shape (A(i), W, L)."""
    w, lam = v.grid.mesh()
    acts = range(model.n_actions(i)) if actions is None else actions
    return np.stack([action_values(v, model, quad, i, a, w, lam) for a in acts])


def select_min(stack: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Minimum over the leading axis; ties go to the lowest index."""
    best = np.argmin(stack, axis=0)
    return np.take_along_axis(stack, best[None], axis=0)[0], best


def _per_state(fn: Callable[[int], object], n_states: int, workers: int) -> List:
    if workers <= 1 or n_states == 1:
        return [fn(i) for i in range(n_states)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_states)))


# -------------------------------
# Operators
# -------------------------------


def apply_T(
    v: ValueTable,
    model: SmdpModel,
    quad: QuadratureRule,
    env: Envelope,
    *,
    workers: int = 1,
) -> Tuple[ValueTable, PolicyTable]:
    _same_grid(v, env.grid)

    def node(i: int):
        vals, best = select_min(action_stack(v, model, quad, i))
        return env.project(vals), best

    out = _per_state(node, model.n_states, workers)
    values = np.stack([o[0] for o in out])
    choice = np.stack([o[1] for o in out]).astype(np.int64)
    return v.replace(values), PolicyTable(grid=v.grid, choice=choice)


def apply_Tf(
    v: ValueTable,
    f: PolicyTable,
    model: SmdpModel,
    quad: QuadratureRule,
    env: Envelope,
    *,
    workers: int = 1,
) -> ValueTable:
    _same_grid(v, f.grid)
    _same_grid(v, env.grid)

    def node(i: int):
        used = np.unique(f.choice[i])
        stack = action_stack(v, model, quad, i, actions=[int(a) for a in used])
        pos = np.searchsorted(used, f.choice[i])
        vals = np.take_along_axis(stack, pos[None], axis=0)[0]
        return env.project(vals)

    return v.replace(np.stack(_per_state(node, model.n_states, workers)))

