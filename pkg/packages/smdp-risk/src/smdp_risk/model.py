# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Annotated, Dict, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import stats

from .utility import Utility

logger = logging.getLogger(__name__)

ROW_TOL = 1e-12


class ModelFormatError(ValueError):
    pass


class ModelValidationError(ValueError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(v.render() for v in report.violations) or "invalid model")


class NoCertificate(ValueError):
    pass


class SojournDomainError(ValueError):
    pass


def _as_probabilities(p) -> np.ndarray:
    q = np.asarray(p, dtype=float)
    if np.any(~((q > 0.0) & (q < 1.0))):
        raise SojournDomainError("quantile is defined for probabilities in (0, 1)")
    return q


def _as_times(s) -> np.ndarray:
    x = np.asarray(s, dtype=float)
    if np.any(x < 0.0):
        raise SojournDomainError("cdf is defined for times s >= 0")
    return x


# -------------------------------
# Sojourn-time laws
# -------------------------------


class _SojournBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def cdf(self, s):
        return self._cdf(_as_times(s))

    def quantile(self, p):
        return self._quantile(_as_probabilities(p))


class ExponentialSojourn(_SojournBase):
    kind: Literal["exponential"] = "exponential"
    rate: float = Field(gt=0.0)

    def _cdf(self, s):
        return stats.expon.cdf(s, scale=1.0 / self.rate)

    def _quantile(self, p):
        return stats.expon.ppf(p, scale=1.0 / self.rate)


class UniformSojourn(_SojournBase):
    kind: Literal["uniform"] = "uniform"
    lo: float = Field(ge=0.0)
    hi: float

    @model_validator(mode="after")
    def _ordered(self) -> "UniformSojourn":
        if not self.hi > self.lo:
            raise ValueError("uniform sojourn requires lo < hi")
        return self

    def _cdf(self, s):
        return stats.uniform.cdf(s, loc=self.lo, scale=self.hi - self.lo)

    def _quantile(self, p):
        return stats.uniform.ppf(p, loc=self.lo, scale=self.hi - self.lo)


class WeibullSojourn(_SojournBase):
    kind: Literal["weibull"] = "weibull"
    shape: float = Field(gt=0.0)
    scale: float = Field(gt=0.0)

    def _cdf(self, s):
        return stats.weibull_min.cdf(s, self.shape, scale=self.scale)

    def _quantile(self, p):
        return stats.weibull_min.ppf(p, self.shape, scale=self.scale)


class DeterministicSojourn(_SojournBase):
    kind: Literal["deterministic"] = "deterministic"
    s0: float = Field(gt=0.0)

    def _cdf(self, s):
        return np.where(s >= self.s0, 1.0, 0.0)

    def _quantile(self, p):
        return np.full(np.shape(p), self.s0)


class MixtureSojourn(_SojournBase):
    kind: Literal["mixture"] = "mixture"
    components: List["SojournDist"] = Field(min_length=1)
    weights: List[float]

    @model_validator(mode="after")
    def _weights(self) -> "MixtureSojourn":
        if len(self.weights) != len(self.components):
            raise ValueError("mixture needs one weight per component")
        if any(w <= 0.0 for w in self.weights):
            raise ValueError("mixture weights must be positive")
        if abs(math.fsum(self.weights) - 1.0) > ROW_TOL:
            raise ValueError("mixture weights must sum to 1")
        return self

    def _cdf(self, s):
        out = np.zeros(np.shape(s))
        for w, comp in zip(self.weights, self.components):
            out = out + w * comp._cdf(s)
        return out

    def _quantile(self, p):
        # F(hi) >= p holds for the largest component quantile; bisect down from there.
        hi = np.max(np.stack([c._quantile(p) for c in self.components]), axis=0)
        lo = np.zeros_like(hi)
        eps = 4.0 * np.finfo(float).eps
        # converged entries are frozen, so each result depends on its own p only
        done = hi - lo <= eps * np.maximum(hi, 1e-300)
        for _ in range(200):
            if np.all(done):
                break
            mid = 0.5 * (lo + hi)
            above = self._cdf(mid) >= p
            hi = np.where(done | ~above, hi, mid)
            lo = np.where(done | above, lo, mid)
            done = done | (hi - lo <= eps * np.maximum(hi, 1e-300))
        return hi


SojournDist = Annotated[
    Union[
        ExponentialSojourn,
        UniformSojourn,
        WeibullSojourn,
        DeterministicSojourn,
        MixtureSojourn,
    ],
    Field(discriminator="kind"),
]
MixtureSojourn.model_rebuild()


def cdf(dist: _SojournBase, s):
    return dist.cdf(s)


def quantile(dist: _SojournBase, p):
    return dist.quantile(p)


# -------------------------------
# Validation report
# -------------------------------


class Violation(BaseModel):
    location: str
    message: str

    def render(self) -> str:
        return f"{self.message} at {self.location}"


class ValidationReport(BaseModel):
    violations: List[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, location: str, message: str) -> None:
        self.violations.append(Violation(location=location, message=message))

    def lines(self) -> List[str]:
        return [v.render() for v in self.violations]


# -------------------------------
# Model
# -------------------------------


@dataclass(frozen=True)
class CompiledKernel:
    """Index-based view of a validated model; arrays are read-only."""

    n_states: int
    n_actions: Tuple[int, ...]
    prob: Tuple[Tuple[np.ndarray, ...], ...]
    cost: Tuple[Tuple[float, ...], ...]
    dists: Dict[Tuple[int, int, int], _SojournBase]


class SmdpModel(BaseModel):
    """Semi-Markov decision model with kernel Q(ds, j | i, a) = P(j | i, a) F(ds | i, a, j).

    ``sojourn[i][a]`` is either one law shared by every destination or a mapping
    destination -> law.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    states: List[str] = Field(min_length=1)
    actions: Dict[str, List[str]]
    transition: Dict[str, Dict[str, Dict[str, float]]]
    sojourn: Dict[str, Dict[str, Union[SojournDist, Dict[str, SojournDist]]]]
    cost: Dict[str, Dict[str, float]]
    c_bar: float
    alpha: float
    utility: Optional[Utility] = None

    def law(self, state: str, action: str, dest: str) -> Optional[_SojournBase]:
        entry = self.sojourn.get(state, {}).get(action)
        if entry is None:
            return None
        if isinstance(entry, dict):
            return entry.get(dest)
        return entry

    @cached_property
    def kernel(self) -> CompiledKernel:
        report = validate(self)
        if not report.ok:
            raise ModelValidationError(report)
        index = {s: k for k, s in enumerate(self.states)}
        prob, cost, dists = [], [], {}
        for i, si in enumerate(self.states):
            rows, costs = [], []
            for a, sa in enumerate(self.actions[si]):
                row = np.zeros(len(self.states))
                for sj, pj in self.transition[si][sa].items():
                    row[index[sj]] = pj
                    if pj > 0.0:
                        dists[(i, a, index[sj])] = self.law(si, sa, sj)
                row.setflags(write=False)
                rows.append(row)
                costs.append(float(self.cost[si][sa]))
            prob.append(tuple(rows))
            cost.append(tuple(costs))
        return CompiledKernel(
            n_states=len(self.states),
            n_actions=tuple(len(self.actions[s]) for s in self.states),
            prob=tuple(prob),
            cost=tuple(cost),
            dists=dists,
        )

    @property
    def n_states(self) -> int:
        return len(self.states)

    def n_actions(self, i: int) -> int:
        return self.kernel.n_actions[i]

    def prob(self, i: int, a: int) -> np.ndarray:
        return self.kernel.prob[i][a]

    def cost_rate(self, i: int, a: int) -> float:
        return self.kernel.cost[i][a]

    def dist(self, i: int, a: int, j: int) -> _SojournBase:
        return self.kernel.dists[(i, a, j)]

    def successors(self, i: int, a: int) -> Iterator[Tuple[int, float]]:
        """(j, P(j|i,a)) for destinations with positive probability, ascending j."""
        row = self.kernel.prob[i][a]
        for j in np.flatnonzero(row > 0.0):
            yield int(j), float(row[j])

    def pairs(self) -> Iterator[Tuple[int, int]]:
        for i in range(self.n_states):
            for a in range(self.kernel.n_actions[i]):
                yield i, a

    def triples(self) -> Iterator[Tuple[int, int, int]]:
        for i, a in self.pairs():
            for j, _ in self.successors(i, a):
                yield i, a, j

    def state_index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError as e:
            raise KeyError(f"unknown state {name!r}") from e

    @property
    def envelope_rate(self) -> float:
        """Tightest cost bound used by the value envelopes: min(c_bar, max C(i,a))."""
        top = max(c for row in self.kernel.cost for c in row)
        return min(self.c_bar, top)

    @property
    def lam_max(self) -> float:
        return self.c_bar / self.alpha


def validate(model: SmdpModel) -> ValidationReport:
    """Check every model invariant; violations are returned, never raised."""
    report = ValidationReport()
    if not (math.isfinite(model.c_bar) and model.c_bar > 0.0):
        report.add("c_bar", "c_bar must be positive and finite")
    if not (math.isfinite(model.alpha) and model.alpha > 0.0):
        report.add("alpha", "alpha must be positive and finite")
    if len(set(model.states)) != len(model.states):
        report.add("states", "duplicate state identifiers")
    known = set(model.states)
    for extra in sorted(set(model.actions) - known):
        report.add(f"actions.{extra}", "unknown state")

    for si in model.states:
        acts = model.actions.get(si)
        if not acts:
            report.add(f"actions.{si}", "state has no admissible action")
            continue
        if len(set(acts)) != len(acts):
            report.add(f"actions.{si}", "duplicate action identifiers")
        for sa in acts:
            loc = f"({si},{sa})"
            row = model.transition.get(si, {}).get(sa)
            if row is None:
                report.add(loc, "missing transition row")
                continue
            unknown = sorted(set(row) - known)
            for sj in unknown:
                report.add(f"{loc}->{sj}", "transition to unknown state")
            if any(p < 0.0 for p in row.values()):
                report.add(loc, "negative probability")
            total = math.fsum(row.values())
            if abs(total - 1.0) > ROW_TOL:
                logger.debug(f"[MODEL] row {loc} sums to {total:.17g}")
                report.add(loc, "row not stochastic")

            c = model.cost.get(si, {}).get(sa)
            if c is None:
                report.add(loc, "missing cost")
            elif c < 0.0:
                report.add(loc, "negative cost")
            elif c > model.c_bar:
                report.add(loc, "cost exceeds c_bar")

            for sj, p in row.items():
                if p <= 0.0 or sj not in known:
                    continue
                law = model.law(si, sa, sj)
                if law is None:
                    report.add(f"({si},{sa},{sj})", "missing sojourn law")
                elif float(law.cdf(0.0)) != 0.0:
                    report.add(f"({si},{sa},{sj})", "sojourn law has mass at 0")
    if report.violations:
        logger.debug(f"[MODEL] {len(report.violations)} violation(s): {report.lines()}")
    return report


def require_valid(model: SmdpModel) -> CompiledKernel:
    return model.kernel


# -------------------------------
# Sojourn-time certificate
# -------------------------------


class Assumption1Certificate(BaseModel):
    """Witness that every sojourn exceeds ``delta`` with probability at least ``epsilon``."""

    model_config = ConfigDict(frozen=True)

    delta: float = Field(gt=0.0)
    epsilon: float = Field(gt=0.0, le=1.0)

    def rho(self, alpha: float) -> float:
        """Contraction base 1 - eps + eps * exp(-alpha * delta); E[exp(-alpha T_n)] <= rho**n."""
        return 1.0 - self.epsilon + self.epsilon * math.exp(-alpha * self.delta)


def short_mass(model: SmdpModel, delta: float) -> float:
    """sup over (i,a) of Q(delta, E | i, a)."""
    worst = 0.0
    for i, a in model.pairs():
        mass = math.fsum(
            p * float(model.dist(i, a, j).cdf(delta)) for j, p in model.successors(i, a)
        )
        worst = max(worst, mass)
    return worst


def default_delta(model: SmdpModel) -> float:
    """Half the smallest 10th-percentile sojourn over admissible (i, a, j)."""
    return 0.5 * min(float(model.dist(i, a, j).quantile(0.1)) for i, a, j in model.triples())


def certify_assumption1(model: SmdpModel, delta: Optional[float] = None) -> Assumption1Certificate:
    if delta is None:
        delta = default_delta(model)
    if not delta > 0.0:
        raise NoCertificate("delta must be positive")
    epsilon = 1.0 - short_mass(model, delta)
    if epsilon <= 0.0:
        raise NoCertificate(
            f"no certificate at delta={delta:g}: every sojourn can end before delta"
        )
    logger.info(f"[MODEL] sojourn certificate delta={delta:g} epsilon={epsilon:.6g}")
    return Assumption1Certificate(delta=delta, epsilon=min(epsilon, 1.0))


# -------------------------------
# Loading
# -------------------------------


def _loc(err: dict) -> str:
    return ".".join(str(p) for p in err.get("loc", ())) or "<root>"


def parse_model(text: str) -> SmdpModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"line {e.lineno} column {e.colno}: {e.msg}") from e
    try:
        return SmdpModel.model_validate(data)
    except ValidationError as e:
        details = "; ".join(f"{_loc(err)}: {err['msg']}" for err in e.errors())
        raise ModelFormatError(details) from e


def load_model(path: Union[str, Path]) -> SmdpModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))
