# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import hashlib
import json
import re
from typing import Any, Dict, Optional

from .model import SmdpModel
from .numerics import AugGrid

_SHA256 = re.compile(r"^sha256:[0-9a-f]{64}$")
HEADER_KEYS = ("model_sha256", "grid", "w_min", "tail", "quad_m", "tol", "seed")


class HeaderError(ValueError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise HeaderError(msg)


def canonical_bytes(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def model_hash(model: SmdpModel) -> str:
    digest = hashlib.sha256(canonical_bytes(model.model_dump(mode="json"))).hexdigest()
    return f"sha256:{digest}"


def build_header(
    *,
    model: SmdpModel,
    grid: AugGrid,
    quad_m: int,
    tol: float,
    seed: int,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Header block carried by every output: model hash, grid, M, tolerance, seed."""
    header: Dict[str, Any] = {
        "model_sha256": model_hash(model),
        "grid": f"{grid.W}x{grid.L}",
        "w_min": grid.w_min,
        "tail": grid.tail,
        "quad_m": int(quad_m),
        "tol": float(tol),
        "seed": int(seed),
    }
    if extra:
        header.update(extra)
    return header


def parse_grid_spec(value: str) -> tuple[int, int]:
    """Parse 'WxL' into (W, L)."""
    parts = value.lower().split("x")
    ok = len(parts) == 2 and all(p.isdigit() for p in parts)
    _require(ok, f"grid must be WxL, got {value!r}")
    return int(parts[0]), int(parts[1])


def check_header(header: Dict[str, Any], model: SmdpModel) -> None:
    """Fail fast when a persisted artifact was produced for another model."""
    for key in HEADER_KEYS:
        _require(key in header, f"header field {key!r} missing")
    digest = str(header["model_sha256"])
    _require(_SHA256.match(digest) is not None, "model_sha256 invalid")
    _require(digest == model_hash(model), "artifact was produced for a different model")
    parse_grid_spec(str(header["grid"]))
