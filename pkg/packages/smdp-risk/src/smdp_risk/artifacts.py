# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .bellman import PolicyTable
from .exponential import HTable
from .headers import HeaderError, canonical_bytes, check_header
from .model import SmdpModel
from .numerics import AugGrid, GridError, make_grid, write_csv
from .tracing import IterationTrace

logger = logging.getLogger(__name__)

POLICY_FORMAT = "smdp-risk.policy.v1"


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    W: int = Field(ge=2)
    L: int = Field(ge=2)
    w_min: float = Field(gt=0.0, lt=1.0)
    lam_max: float = Field(gt=0.0)
    tail: Literal["pinch", "clamp"] = "pinch"


class PolicyFile(BaseModel):
    """On-disk policy: one table (stationary) or a time-to-go sequence (markov)."""

    model_config = ConfigDict(extra="forbid")

    format: Literal["smdp-risk.policy.v1"]
    header: Dict[str, Any]
    kind: Literal["stationary", "markov"]
    grid: GridSpec
    tables: List[List[List[List[int]]]] = Field(min_length=1)


def policy_document(
    policies: Sequence[PolicyTable], header: Mapping[str, Any], *, stationary: bool
) -> Dict[str, Any]:
    grid = policies[0].grid
    return {
        "format": POLICY_FORMAT,
        "header": dict(header),
        "kind": "stationary" if stationary else "markov",
        "grid": grid.describe(),
        "tables": [p.choice.tolist() for p in policies],
    }


def write_policy(
    path: Union[str, Path],
    policies: Sequence[PolicyTable],
    header: Mapping[str, Any],
    *,
    stationary: bool,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = policy_document(policies, header, stationary=stationary)
    path.write_bytes(canonical_bytes(doc) + b"\n")


def read_policy(path: Union[str, Path], model: SmdpModel) -> Tuple[PolicyFile, List[PolicyTable]]:
    """Load and check a policy file against ``model``; raises HeaderError on any mismatch."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = PolicyFile.model_validate_json(raw)
    except ValidationError as e:
        raise HeaderError(f"malformed policy file: {e.errors()[0]['msg']}") from e
    check_header(doc.header, model)
    spec = doc.grid
    try:
        grid = make_grid(spec.W, spec.L, spec.w_min, spec.lam_max, spec.tail)
    except GridError as e:
        raise HeaderError(str(e)) from e
    if abs(spec.lam_max - model.c_bar / model.alpha) > 1e-12 * max(1.0, spec.lam_max):
        raise HeaderError("policy grid does not span [0, c_bar/alpha] of this model")
    if doc.kind == "stationary" and len(doc.tables) != 1:
        raise HeaderError("stationary policy must hold exactly one table")
    tables = []
    for raw_table in doc.tables:
        choice = np.asarray(raw_table, dtype=np.int64)
        if choice.shape != (model.n_states,) + grid.shape:
            raise HeaderError(f"policy table shape {choice.shape} does not match model and grid")
        try:
            tables.append(PolicyTable(grid=grid, choice=choice).check(model))
        except GridError as e:
            raise HeaderError(str(e)) from e
    logger.info(f"[CLI] loaded {doc.kind} policy with {len(tables)} table(s) from {path}")
    return doc, tables


def grid_of(doc: PolicyFile) -> AugGrid:
    g = doc.grid
    return make_grid(g.W, g.L, g.w_min, g.lam_max, g.tail)


def write_h_csv(
    path: Union[str, Path], h: HTable, model: SmdpModel, header: Mapping[str, Any]
) -> None:
    S, W = h.data.shape
    frame = pd.DataFrame(
        {
            "state": np.repeat(np.asarray(model.states, dtype=object), W),
            "w": np.tile(h.grid.w_nodes, S),
            "h": h.values.reshape(-1),
        }
    )
    write_csv(path, frame, header)


def write_convergence(
    path: Union[str, Path], trace: IterationTrace, header: Mapping[str, Any]
) -> None:
    frame = trace.frame("iteration")
    cols = [c for c in ("n", "gap", "bound") if c in frame.columns]
    write_csv(path, frame[cols] if cols else frame, header)


def write_summary(path: Union[str, Path], header: Mapping[str, Any], /, **fields: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"header": dict(header), **fields}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
