# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .bellman import PolicyTable
from .model import Assumption1Certificate, SmdpModel
from .solver_infinite import error_bound
from .tracing import start_span
from .utility import _UtilityBase

logger = logging.getLogger(__name__)

PolicyLike = Union[PolicyTable, Sequence[PolicyTable]]

_BLOCK = 4096
_ULP52 = 2.0**-52


@dataclass(frozen=True)
class TrajectorySample:
    """One path: jump times T_0..T_N, states X_0..X_N, actions A_0..A_{N-1}, costs C_0..C_N."""

    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray

    @property
    def horizon(self) -> int:
        return int(self.actions.shape[0])


@dataclass
class _Paths:
    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray


def _uniforms(seed: int, indices: np.ndarray, N: int) -> np.ndarray:
    """(B, N, 2) draws in the open interval (0, 1); row t depends only on (seed, t)."""
    out = np.empty((len(indices), N, 2))
    for r, t in enumerate(indices):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(t),)))
        out[r] = rng.random((N, 2))
    return (np.floor(out / _ULP52) + 0.5) * _ULP52


def _policy_at(policy: PolicyLike, k: int, N: int) -> PolicyTable:
    if isinstance(policy, PolicyTable):
        return policy
    return policy[N - 1 - k]


def _run_block(
    model: SmdpModel,
    policy: PolicyLike,
    N: int,
    seed: int,
    indices: np.ndarray,
    start_state: int,
    record: bool,
) -> _Paths:
    B = len(indices)
    u = _uniforms(seed, indices, N)
    alpha = model.alpha
    state = np.full(B, start_state, dtype=np.intp)
    t_now = np.zeros(B)
    cost = np.zeros(B)
    if record:
        times = np.zeros((B, N + 1))
        states = np.zeros((B, N + 1), dtype=np.intp)
        actions = np.zeros((B, N), dtype=np.intp)
        costs = np.zeros((B, N + 1))
        states[:, 0] = state
    for k in range(N):
        f = _policy_at(policy, k, N)
        w = np.exp(-alpha * t_now)
        act = f.lookup(state, w, cost).astype(np.intp)
        nxt = np.empty(B, dtype=np.intp)
        soj = np.empty(B)
        rate = np.empty(B)
        for i, a in model.pairs():
            sel = (state == i) & (act == a)
            if not sel.any():
                continue
            rate[sel] = model.cost_rate(i, a) / alpha
            dests = list(model.successors(i, a))
            cum = np.cumsum([p for _, p in dests])
            pick = np.minimum(np.searchsorted(cum, u[sel, k, 0], side="right"), len(dests) - 1)
            js = np.asarray([j for j, _ in dests], dtype=np.intp)[pick]
            nxt[sel] = js
            idx = np.flatnonzero(sel)
            for m, (j, _) in enumerate(dests):
                hit = idx[pick == m]
                if hit.size:
                    soj[hit] = model.dist(i, a, j).quantile(u[hit, k, 1])
        cost = cost + w * rate * (-np.expm1(-alpha * soj))
        t_now = t_now + soj
        if record:
            actions[:, k] = act
            states[:, k + 1] = nxt
            times[:, k + 1] = t_now
            costs[:, k + 1] = cost
        state = nxt
    if not record:
        times = t_now[:, None]
        states = state[:, None]
        actions = np.zeros((B, 0), dtype=np.intp)
        costs = cost[:, None]
    return _Paths(times=times, states=states, actions=actions, costs=costs)


def _check_run(model: SmdpModel, policy: PolicyLike, N: int, start_state: int) -> None:
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 0 <= start_state < model.n_states:
        raise ValueError(f"start state {start_state} out of range 0..{model.n_states - 1}")
    if not isinstance(policy, PolicyTable):
        if len(policy) < N:
            raise ValueError(f"policy sequence covers {len(policy)} jumps, need {N}")
        for f in policy:
            f.check(model)
    else:
        policy.check(model)


def simulate_paths(
    model: SmdpModel,
    policy: PolicyLike,
    N: int,
    n_traj: int,
    seed: int,
    *,
    start_state: int = 0,
    record: bool = False,
    workers: int = 1,
) -> _Paths:
    """Simulate trajectories 0..n_traj-1; with ``record`` unset only the final column is kept."""
    _check_run(model, policy, N, start_state)
    blocks = [np.arange(s, min(s + _BLOCK, n_traj)) for s in range(0, n_traj, _BLOCK)]

    def run(ix: np.ndarray) -> _Paths:
        return _run_block(model, policy, N, seed, ix, start_state, record)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return _Paths(
        times=np.concatenate([p.times for p in parts]),
        states=np.concatenate([p.states for p in parts]),
        actions=np.concatenate([p.actions for p in parts]),
        costs=np.concatenate([p.costs for p in parts]),
    )


def sample_trajectory(
    model: SmdpModel,
    policy: PolicyLike,
    N: int,
    seed: int,
    *,
    index: int = 0,
    start_state: int = 0,
) -> TrajectorySample:
    """Trajectory ``index`` of the stream seeded by ``seed``; same path as in a batch run."""
    _check_run(model, policy, N, start_state)
    if index < 0:
        raise ValueError(f"trajectory index must be >= 0, got {index}")
    p = _run_block(model, policy, N, seed, np.asarray([index]), start_state, record=True)
    return TrajectorySample(
        times=p.times[0], states=p.states[0], actions=p.actions[0], costs=p.costs[0]
    )


# -------------------------------
# Estimators
# -------------------------------


def _mean_and_se(x: np.ndarray) -> Tuple[float, float]:
    n = len(x)
    mean = math.fsum(x) / n
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass
class MonteCarloEstimate:
    mean: float
    std_err: float
    ci_low: float
    ci_high: float
    bracket_low: float
    bracket_high: float
    horizon: int
    n_traj: int
    start_state: int
    infinite: bool
    samples: np.ndarray

    @property
    def interval(self) -> Tuple[float, float]:
        """Union of the CI and the truncation bracket."""
        return min(self.ci_low, self.bracket_low), max(self.ci_high, self.bracket_high)

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "std_err": self.std_err,
            "ci95": [self.ci_low, self.ci_high],
            "bracket": [self.bracket_low, self.bracket_high],
            "horizon": self.horizon,
            "n_traj": self.n_traj,
            "start_state": self.start_state,
            "infinite": self.infinite,
        }


def truncation_depth(
    utility: _UtilityBase, model: SmdpModel, cert: Assumption1Certificate, tol: float
) -> int:
    """Smallest N whose analytic tail bound at (w=1, lambda=0) is at most ``tol``."""
    rho = cert.rho(model.alpha)
    head = error_bound(utility, model, cert, 0, 1.0, 0.0)
    if head <= tol:
        return 1
    return max(1, math.ceil(math.log(tol / head) / math.log(rho)))


def estimate_value(
    model: SmdpModel,
    utility: _UtilityBase,
    policy: PolicyLike,
    N: Optional[int],
    n_traj: int,
    seed: int,
    *,
    start_state: int = 0,
    infinite: bool = False,
    cert: Optional[Assumption1Certificate] = None,
    tol: float = 1e-4,
    workers: int = 1,
) -> MonteCarloEstimate:
    """Sample mean and 95% CI of U(C_N); in infinite mode also the pathwise bracket
    [U(C_N), U(C_N + exp(-alpha T_N) c/alpha)] around U(C_inf)."""
    if n_traj < 2:
        raise ValueError("n_traj must be >= 2")
    if N is None:
        if not infinite or cert is None:
            raise ValueError("a horizon is required unless infinite mode has a certificate")
        N = truncation_depth(utility, model, cert, tol)
    with start_span("sim.estimate", n_traj=n_traj, horizon=N, infinite=infinite):
        paths = simulate_paths(
            model, policy, N, n_traj, seed, start_state=start_state, workers=workers
        )
    c_N = paths.costs[:, -1]
    u_N = np.asarray(utility.eval(c_N), dtype=float)
    mean, se = _mean_and_se(u_N)
    half = float(norm.ppf(0.975)) * se
    if infinite:
        tail = np.exp(-model.alpha * paths.times[:, -1]) * (model.envelope_rate / model.alpha)
        top = math.fsum(np.asarray(utility.eval(c_N + tail), dtype=float)) / n_traj
        bracket = (mean, top)
    else:
        bracket = (mean, mean)
    logger.info(
        f"[SIM] N={N} n_traj={n_traj} mean={mean:.6g} se={se:.3g} bracket=[{bracket[0]:.6g}, "
        f"{bracket[1]:.6g}]"
    )
    return MonteCarloEstimate(
        mean=mean,
        std_err=se,
        ci_low=mean - half,
        ci_high=mean + half,
        bracket_low=bracket[0],
        bracket_high=bracket[1],
        horizon=N,
        n_traj=n_traj,
        start_state=start_state,
        infinite=infinite,
        samples=u_N,
    )


def discount_moments(
    model: SmdpModel,
    policy: PolicyLike,
    n_max: int,
    n_traj: int,
    seed: int,
    *,
    start_state: int = 0,
    workers: int = 1,
) -> Tuple[List[float], List[float]]:
    """Sample means and standard errors of exp(-alpha T_n) for n = 1..n_max."""
    paths = simulate_paths(
        model, policy, n_max, n_traj, seed, start_state=start_state, record=True, workers=workers
    )
    decay = np.exp(-model.alpha * paths.times[:, 1:])
    means, ses = [], []
    for n in range(n_max):
        m, s = _mean_and_se(decay[:, n])
        means.append(m)
        ses.append(s)
    return means, ses
