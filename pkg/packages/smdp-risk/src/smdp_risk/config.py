# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


def _env_int(name: str, default: str) -> int:
    return int(os.getenv(name, default))


def _env_float(name: str, default: str) -> float:
    return float(os.getenv(name, default))


class SolverRuntimeConfig(BaseModel):
    """Numerical defaults for grids, quadrature, iteration and simulation.

    Every field falls back to an ``SMDP_RISK_*`` environment variable; CLI flags
    override individual fields through ``model_copy(update=...)``.
    """

    model_config = ConfigDict(validate_default=True)

    grid_w: int = Field(default_factory=lambda: _env_int("SMDP_RISK_GRID_W", "64"), ge=2)
    grid_l: int = Field(default_factory=lambda: _env_int("SMDP_RISK_GRID_L", "64"), ge=2)
    w_min: float = Field(
        default_factory=lambda: _env_float("SMDP_RISK_W_MIN", "1e-3"), gt=0.0, lt=1.0
    )
    quad_m: int = Field(default_factory=lambda: _env_int("SMDP_RISK_QUAD_M", "64"), ge=1)
    tol: float = Field(default_factory=lambda: _env_float("SMDP_RISK_TOL", "1e-4"), gt=0.0)
    max_iter: int = Field(default_factory=lambda: _env_int("SMDP_RISK_MAX_ITER", "1000"), ge=1)
    seed: int = Field(default_factory=lambda: _env_int("SMDP_RISK_SEED", "0"), ge=0)
    threads: int = Field(default_factory=lambda: _env_int("SMDP_RISK_THREADS", "1"), ge=1)
    tail: Literal["pinch", "clamp"] = Field(
        default_factory=lambda: os.getenv("SMDP_RISK_TAIL", "pinch").lower()
    )
    # |gamma| * c_bar / alpha above this switches the h-table to log-magnitudes
    overflow_threshold: float = Field(
        default_factory=lambda: _env_float("SMDP_RISK_OVERFLOW_THRESHOLD", "30"), gt=0.0
    )
    # improvement margin, in multiples of tol
    improve_margin: float = Field(
        default_factory=lambda: _env_float("SMDP_RISK_IMPROVE_MARGIN", "10"), ge=0.0
    )

    @property
    def margin(self) -> float:
        return self.improve_margin * self.tol


def get_runtime_cfg() -> SolverRuntimeConfig:
    return SolverRuntimeConfig()
