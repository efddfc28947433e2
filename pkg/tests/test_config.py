# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
"""
Test environment-driven solver defaults.
"""

import pytest
from pydantic import ValidationError

from smdp_risk import get_runtime_cfg
from smdp_risk.otel import otel_requested, run_resource_attributes


@pytest.mark.unit
class TestRuntimeConfig:
    def test_defaults(self):
        cfg = get_runtime_cfg()
        assert (cfg.grid_w, cfg.grid_l) == (64, 64)
        assert cfg.quad_m == 64
        assert cfg.tol == 1e-4
        assert cfg.w_min == 1e-3
        assert cfg.max_iter == 1000
        assert cfg.tail == "pinch"
        assert cfg.threads == 1
        assert cfg.overflow_threshold == 30.0
        assert cfg.margin == pytest.approx(1e-3)

    def test_environment_overrides(self, monkeypatch):
        monkeypatch.setenv("SMDP_RISK_GRID_W", "32")
        monkeypatch.setenv("SMDP_RISK_TOL", "1e-6")
        monkeypatch.setenv("SMDP_RISK_TAIL", "CLAMP")
        monkeypatch.setenv("SMDP_RISK_THREADS", "4")
        cfg = get_runtime_cfg()
        assert cfg.grid_w == 32
        assert cfg.tol == 1e-6
        assert cfg.tail == "clamp"
        assert cfg.threads == 4

    @pytest.mark.parametrize(
        "key, value",
        [
            ("SMDP_RISK_GRID_L", "1"),
            ("SMDP_RISK_W_MIN", "1.5"),
            ("SMDP_RISK_TAIL", "wrap"),
            ("SMDP_RISK_TOL", "0"),
        ],
    )
    def test_invalid_environment(self, monkeypatch, key, value):
        monkeypatch.setenv(key, value)
        with pytest.raises(ValidationError):
            get_runtime_cfg()

    def test_flag_style_update(self):
        cfg = get_runtime_cfg().model_copy(update={"quad_m": 8, "tol": 1e-3})
        assert cfg.quad_m == 8
        assert cfg.margin == pytest.approx(1e-2)


@pytest.mark.unit
class TestTracingEnvironment:
    def test_not_requested_by_default(self, monkeypatch):
        monkeypatch.delenv("OTEL_EXPORTER_OTLP_ENDPOINT", raising=False)
        monkeypatch.delenv("OTEL_CONSOLE_EXPORTER", raising=False)
        assert not otel_requested()

    @pytest.mark.parametrize(
        "key, value",
        [
            ("OTEL_EXPORTER_OTLP_ENDPOINT", "http://localhost:4318/v1/traces"),
            ("OTEL_CONSOLE_EXPORTER", "Yes"),
        ],
    )
    def test_requested(self, monkeypatch, key, value):
        monkeypatch.delenv("OTEL_EXPORTER_OTLP_ENDPOINT", raising=False)
        monkeypatch.delenv("OTEL_CONSOLE_EXPORTER", raising=False)
        monkeypatch.setenv(key, value)
        assert otel_requested()

    def test_resource_records_overrides(self, monkeypatch):
        monkeypatch.setenv("OTEL_SERVICE_NAME", "bench")
        monkeypatch.setenv("SMDP_RISK_GRID_W", "128")
        attrs = run_resource_attributes()
        assert attrs["service.name"] == "bench"
        assert attrs["smdp_risk.grid_w"] == "128"
