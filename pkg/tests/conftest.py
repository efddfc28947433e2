# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
import os
import sys
from pathlib import Path

import pytest


def _add_package_src_to_syspath() -> None:
    src = os.path.abspath(
        os.path.join(os.path.dirname(__file__), "..", "packages", "smdp-risk", "src")
    )
    if src not in sys.path:
        sys.path.insert(0, src)


_add_package_src_to_syspath()


# Import after adding to syspath
from smdp_risk import build_grid, build_quadrature, load_model  # noqa: E402

VECTORS = Path(__file__).parent.parent / "test-vectors"


@pytest.fixture(autouse=True)
def solver_env(monkeypatch) -> None:
    """Drop SMDP_RISK_* overrides so config defaults are the documented ones."""
    for key in list(os.environ):
        if key.startswith("SMDP_RISK_"):
            monkeypatch.delenv(key, raising=False)


@pytest.fixture
def vectors_dir() -> Path:
    return VECTORS


@pytest.fixture
def maintenance_model():
    """Two states (good, worn) x two actions each; exponential utility gamma=1."""
    return load_model(VECTORS / "maintenance_model.json")


@pytest.fixture
def constant_cost_model():
    """Cost rate 1 everywhere, alpha=0.5: C_inf = 2 on every path."""
    return load_model(VECTORS / "constant_cost_model.json")


@pytest.fixture
def one_step_model():
    """One state, one action, deterministic sojourn ln 2, C=1, alpha=1."""
    return load_model(VECTORS / "one_step_model.json")


@pytest.fixture
def zero_cost_model():
    return load_model(VECTORS / "zero_cost_model.json")


@pytest.fixture
def small_grid():
    """Coarse (grid, quadrature) factory for fast solver tests."""

    def make(model, W: int = 16, L: int = 16, M: int = 16, w_min: float = 1e-3, tail="pinch"):
        return build_grid(model, W, L, w_min, tail), build_quadrature(model, M)

    return make


@pytest.fixture
def csv_header():
    """Parse the leading ``# key: value`` block of a CSV artifact."""

    def parse(text: str) -> dict:
        out = {}
        for line in text.splitlines():
            if not line.startswith("#"):
                break
            key, value = line[1:].strip().split(": ", 1)
            out[key] = value
        return out

    return parse
