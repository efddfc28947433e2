# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .model import SmdpModel
from .utility import _UtilityBase

logger = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny


class GridError(ValueError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise GridError(msg)


# -------------------------------
# Augmented grid (w = exp(-alpha t), lambda)
# -------------------------------


@dataclass(frozen=True, eq=False)
class AugGrid:
    """Product grid over the discount weight w and the accumulated cost lambda.

    w nodes are geometric from 1 down to ``w_min``; lambda nodes are uniform on
    [0, c_bar/alpha]. ``tail`` selects how values below ``w_min`` are read:
    ``pinch`` blends the w_min slice toward the floor with weight w/w_min,
    ``clamp`` reuses the w_min slice.
    """

    w_nodes: np.ndarray
    lam_nodes: np.ndarray
    w_min: float
    tail: str = "pinch"

    @property
    def W(self) -> int:
        return int(self.w_nodes.shape[0])

    @property
    def L(self) -> int:
        return int(self.lam_nodes.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.W, self.L

    @property
    def lam_max(self) -> float:
        return float(self.lam_nodes[-1])

    @property
    def d_lam(self) -> float:
        return self.lam_max / (self.L - 1)

    def w_coord(self, w) -> np.ndarray:
        """Fractional w-index: 0 at w=1, W-1 at w_min, larger below w_min."""
        w = np.minimum(np.asarray(w, dtype=float), 1.0)
        return np.log(np.maximum(w, _TINY)) * ((self.W - 1) / math.log(self.w_min))

    def lam_coord(self, lam) -> np.ndarray:
        lam = np.clip(np.asarray(lam, dtype=float), 0.0, self.lam_max)
        return lam / self.d_lam

    def locate(self, w, lam):
        """Lower cell corner (k0, j0), in-cell offsets (s, t) and the below-w_min mask."""
        u = self.w_coord(w)
        x = self.lam_coord(lam)
        below = u > self.W - 1
        k0 = np.clip(np.floor(u), 0, self.W - 2).astype(np.intp)
        j0 = np.clip(np.floor(x), 0, self.L - 2).astype(np.intp)
        s = np.clip(u - k0, 0.0, 1.0)
        t = np.clip(x - j0, 0.0, 1.0)
        return k0, j0, s, t, below

    def nearest(self, w, lam) -> Tuple[np.ndarray, np.ndarray]:
        k = np.clip(np.rint(self.w_coord(w)), 0, self.W - 1).astype(np.intp)
        j = np.clip(np.rint(self.lam_coord(lam)), 0, self.L - 1).astype(np.intp)
        return k, j

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Broadcastable node coordinates, shapes (W, 1) and (1, L)."""
        return self.w_nodes[:, None], self.lam_nodes[None, :]

    def centres(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell centres in (log w, lambda), shapes (W-1, 1) and (1, L-1)."""
        w_c = np.sqrt(self.w_nodes[:-1] * self.w_nodes[1:])
        lam_c = 0.5 * (self.lam_nodes[:-1] + self.lam_nodes[1:])
        return w_c[:, None], lam_c[None, :]

    def reachable(self) -> np.ndarray:
        """Nodes with lambda <= lam_max * (1 - w), i.e. reachable from (w=1, lambda=0)."""
        w, lam = self.mesh()
        return lam <= self.lam_max * (1.0 - w) + 1e-12

    def same_as(self, other: "AugGrid") -> bool:
        return (
            self is other
            or (
                self.tail == other.tail
                and self.w_min == other.w_min
                and np.array_equal(self.w_nodes, other.w_nodes)
                and np.array_equal(self.lam_nodes, other.lam_nodes)
            )
        )

    def describe(self) -> Dict[str, Union[int, float, str]]:
        return {
            "W": self.W,
            "L": self.L,
            "w_min": self.w_min,
            "lam_max": self.lam_max,
            "tail": self.tail,
        }


def make_grid(W: int, L: int, w_min: float, lam_max: float, tail: str = "pinch") -> AugGrid:
    _require(W >= 2, f"W must be >= 2, got {W}")
    _require(L >= 2, f"L must be >= 2, got {L}")
    _require(0.0 < w_min < 1.0, f"w_min must lie in (0, 1), got {w_min}")
    _require(lam_max > 0.0 and math.isfinite(lam_max), "lambda range must be positive")
    _require(tail in ("pinch", "clamp"), f"unknown tail rule {tail!r}")
    w_nodes = w_min ** (np.arange(W) / (W - 1))
    w_nodes[0] = 1.0
    w_nodes[-1] = w_min
    lam_nodes = np.linspace(0.0, lam_max, L)
    w_nodes.setflags(write=False)
    lam_nodes.setflags(write=False)
    return AugGrid(w_nodes=w_nodes, lam_nodes=lam_nodes, w_min=float(w_min), tail=tail)


def build_grid(
    model: SmdpModel, W: int, L: int, w_min: float, tail: str = "pinch"
) -> AugGrid:
    grid = make_grid(W, L, w_min, model.c_bar / model.alpha, tail)
    logger.debug(f"[SOLVER] grid {grid.describe()}")
    return grid


# -------------------------------
# Tables and interpolation
# -------------------------------


def _bilinear(values: np.ndarray, k0, j0, s, t) -> np.ndarray:
    v00 = values[k0, j0]
    v01 = values[k0, j0 + 1]
    v10 = values[k0 + 1, j0]
    v11 = values[k0 + 1, j0 + 1]
    return (1.0 - s) * ((1.0 - t) * v00 + t * v01) + s * ((1.0 - t) * v10 + t * v11)


def interp_slice(
    grid: AugGrid,
    values: np.ndarray,
    floor: Optional[np.ndarray],
    w,
    lam,
    utility: Optional[_UtilityBase] = None,
) -> np.ndarray:
    """Bilinear read of one state's (W, L) table at broadcastable (w, lam).

    Beyond lam_max the lam_max read is carried over at a fixed certainty equivalent:
    v(w, lam) = U(U^{-1}(v(w, lam_max)) + lam - lam_max). This is exact for linear and
    exponential U. Without ``utility`` lambda is clamped to the grid.
    """
    lam = np.asarray(lam, dtype=float)
    k0, j0, s, t, below = grid.locate(w, lam)
    out = _bilinear(values, k0, j0, s, t)
    if grid.tail == "pinch" and floor is not None and np.any(below):
        base = (1.0 - t) * floor[j0] + t * floor[j0 + 1]
        ratio = np.where(below, np.minimum(np.asarray(w, dtype=float), 1.0) / grid.w_min, 1.0)
        out = np.where(below, base + ratio * (out - base), out)
    if utility is not None:
        over = np.broadcast_to(lam > grid.lam_max, np.shape(out))
        if np.any(over):
            excess = np.broadcast_to(lam - grid.lam_max, np.shape(out))[over]
            out = np.array(out, dtype=float)
            equiv = utility.inverse(out[over])
            out[over] = utility.eval(np.maximum(equiv, grid.lam_max) + excess)
    return out


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Values v(i, w, lambda) sampled on ``grid`` with shape (S, W, L).

    ``floor`` holds the w -> 0 limit U(lambda) at the lambda nodes; the pinch tail
    reads it below w_min. ``utility`` extends reads past lam_max (see ``interp_slice``).
    """

    grid: AugGrid
    values: np.ndarray
    floor: Optional[np.ndarray] = None
    utility: Optional[_UtilityBase] = None

    def __post_init__(self) -> None:
        _require(self.values.ndim == 3, "value table must be (S, W, L)")
        _require(
            self.values.shape[1:] == self.grid.shape,
            f"value table shape {self.values.shape[1:]} does not match grid {self.grid.shape}",
        )
        _require(bool(np.all(np.isfinite(self.values))), "value table has non-finite entries")
        if self.floor is not None:
            _require(self.floor.shape == (self.grid.L,), "floor must have one entry per lambda")

    @property
    def n_states(self) -> int:
        return int(self.values.shape[0])

    def at(self, i: int, w, lam):
        return interpolate(self, i, w, lam)

    def J(self, i: int) -> float:
        """Value at the start of the process: w = 1, lambda = 0."""
        return float(self.values[i, 0, 0])

    def replace(self, values: np.ndarray) -> "ValueTable":
        return ValueTable(grid=self.grid, values=values, floor=self.floor, utility=self.utility)


def interpolate(table: ValueTable, i: int, w, lam):
    if not 0 <= i < table.n_states:
        raise GridError(f"state index {i} out of range 0..{table.n_states - 1}")
    out = interp_slice(table.grid, table.values[i], table.floor, w, lam, table.utility)
    return float(out) if np.ndim(out) == 0 else out


# -------------------------------
# Envelopes of the bracketing set
# -------------------------------


@dataclass(frozen=True, eq=False)
class Envelope:
    """Node-wise bracket U(lambda) <= v <= U(w * c_env/alpha + lambda).

    ``c_env = min(c_bar, max C)`` is a valid cost ceiling for every path.
    """

    grid: AugGrid
    utility: _UtilityBase
    span: float
    lower: np.ndarray
    upper: np.ndarray

    def bounds_at(self, w, lam) -> Tuple[np.ndarray, np.ndarray]:
        w = np.asarray(w, dtype=float)
        lam = np.clip(np.asarray(lam, dtype=float), 0.0, None)
        return self.utility.eval(lam + 0.0 * w), self.utility.eval(w * self.span + lam)

    def project(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lower[None, :], self.upper)

    def lower_table(self, n_states: int) -> ValueTable:
        vals = np.broadcast_to(self.lower[None, None, :], (n_states,) + self.grid.shape).copy()
        return ValueTable(grid=self.grid, values=vals, floor=self.lower, utility=self.utility)

    def upper_table(self, n_states: int) -> ValueTable:
        vals = np.broadcast_to(self.upper[None, :, :], (n_states,) + self.grid.shape).copy()
        return ValueTable(grid=self.grid, values=vals, floor=self.lower, utility=self.utility)


def build_envelope(grid: AugGrid, utility: _UtilityBase, model: SmdpModel) -> Envelope:
    span = model.envelope_rate / model.alpha
    w, lam = grid.mesh()
    lower = np.asarray(utility.eval(grid.lam_nodes), dtype=float)
    upper = np.asarray(utility.eval(w * span + lam), dtype=float)
    lower.setflags(write=False)
    upper.setflags(write=False)
    return Envelope(grid=grid, utility=utility, span=span, lower=lower, upper=upper)


def bracket_violation(table: ValueTable, env: Envelope) -> float:
    """Largest amount by which ``table`` leaves the envelope (0.0 when inside)."""
    below = env.lower[None, None, :] - table.values
    above = table.values - env.upper[None, :, :]
    return float(max(0.0, below.max(), above.max()))


def tail_error(env: Envelope) -> float:
    """Worst-case error of reading below w_min: U(w_min*span + lam) - U(lam)."""
    return float(np.max(env.upper[-1] - env.lower))


# -------------------------------
# Quadrature
# -------------------------------


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Equal-weight midpoint-quantile atoms per admissible (i, a, j).

    ``decay[(i, a, j)]`` caches exp(-alpha * s_m) for the same atoms.
    """

    M: int
    alpha: float
    atoms: Mapping[Tuple[int, int, int], np.ndarray]
    decay: Mapping[Tuple[int, int, int], np.ndarray] = field(repr=False)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.M, 1.0 / self.M)

    def discount_mean(self, key: Tuple[int, int, int]) -> float:
        return math.fsum(self.decay[key]) / self.M


def build_quadrature(model: SmdpModel, M: int) -> QuadratureRule:
    _require(M >= 1, f"quadrature needs M >= 1, got {M}")
    probs = (np.arange(M) + 0.5) / M
    atoms, decay = {}, {}
    for key in model.triples():
        s = np.asarray(model.dist(*key).quantile(probs), dtype=float)
        _require(bool(np.all(s > 0.0)), f"non-positive sojourn atom at {key}")
        s.setflags(write=False)
        d = np.exp(-model.alpha * s)
        d.setflags(write=False)
        atoms[key] = s
        decay[key] = d
    logger.debug(f"[SOLVER] quadrature M={M} over {len(atoms)} transitions")
    return QuadratureRule(M=M, alpha=model.alpha, atoms=atoms, decay=decay)


# -------------------------------
# Grid-doubling error estimate
# -------------------------------


def coarse_companion(
    grid: AugGrid, quad: QuadratureRule, model: SmdpModel
) -> Tuple[AugGrid, QuadratureRule]:
    """The same grid and quadrature at half resolution in w, lambda and M."""
    W = max(2, (grid.W + 1) // 2)
    L = max(2, (grid.L + 1) // 2)
    coarse = make_grid(W, L, grid.w_min, grid.lam_max, grid.tail)
    return coarse, build_quadrature(model, max(1, quad.M // 2))


def doubling_gap(fine: ValueTable, coarse: ValueTable) -> float:
    """Largest |fine - coarse| over the reachable nodes of the fine grid.

    Once the discretisation error shrinks with resolution, this dominates the error
    of ``fine`` itself.
    """
    w, lam = fine.grid.mesh()
    mask = fine.grid.reachable()
    worst = 0.0
    for i in range(fine.n_states):
        diff = np.abs(fine.values[i] - interpolate(coarse, i, w, lam))
        worst = max(worst, float(np.max(diff[mask])))
    return worst


# -------------------------------
# CSV export
# -------------------------------


def header_lines(header: Mapping[str, object]) -> Iterator[str]:
    for key, value in header.items():
        yield f"# {key}: {value}"


def write_csv(path: Union[str, Path], frame: pd.DataFrame, header: Mapping[str, object]) -> None:
    """Write ``frame`` preceded by ``# key: value`` header lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for line in header_lines(header):
            fh.write(line + "\n")
        frame.to_csv(fh, index=False, float_format="%.17g")


def value_frame(table: ValueTable, model: SmdpModel) -> pd.DataFrame:
    S, (W, L) = table.n_states, table.grid.shape
    return pd.DataFrame(
        {
            "state": np.repeat(np.asarray(model.states, dtype=object), W * L),
            "w": np.tile(np.repeat(table.grid.w_nodes, L), S),
            "lambda": np.tile(table.grid.lam_nodes, S * W),
            "value": table.values.reshape(-1),
        }
    )


def export_csv(
    table: ValueTable, model: SmdpModel, path: Union[str, Path], header: Mapping[str, object]
) -> None:
    write_csv(path, value_frame(table, model), header)
