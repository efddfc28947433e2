# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import logging
import os
from typing import Dict

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes"}


def _flag(name: str) -> bool:
    return os.getenv(name, "0").strip().lower() in _TRUE


def otel_requested() -> bool:
    """True when spans should leave the process (OTLP endpoint set or console export on)."""
    return bool(os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT")) or _flag("OTEL_CONSOLE_EXPORTER")


def run_resource_attributes() -> Dict[str, str]:
    """Resource attributes describing a solver run; SMDP_RISK_* overrides are recorded as-is."""
    attrs = {"service.name": os.getenv("OTEL_SERVICE_NAME", "smdp-risk")}
    for key, value in sorted(os.environ.items()):
        if key.startswith("SMDP_RISK_"):
            attrs[f"smdp_risk.{key[len('SMDP_RISK_'):].lower()}"] = value
    return attrs


def setup_otel_from_env(use_console: bool = False) -> None:
    """Install a tracer provider so solver spans (solver.*, exp.*, sim.*) are exported.

    Env vars:
    - OTEL_EXPORTER_OTLP_ENDPOINT: OTLP/HTTP traces endpoint; nothing is exported without it
      unless the console exporter is on
    - OTEL_SERVICE_NAME (default smdp-risk)
    - OTEL_CONSOLE_EXPORTER=1 prints finished spans to stdout
    """
    try:
        from opentelemetry import trace
        from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter
        from opentelemetry.sdk.resources import Resource
        from opentelemetry.sdk.trace import TracerProvider
        from opentelemetry.sdk.trace.export import (
            BatchSpanProcessor,
            ConsoleSpanExporter,
            SimpleSpanProcessor,
        )
    except Exception as e:  # pragma: no cover - import error path
        raise RuntimeError(
            "OpenTelemetry SDK/exporter not installed. Install extras: pip install smdp-risk[otel]"
        ) from e

    provider = TracerProvider(resource=Resource.create(run_resource_attributes()))
    endpoint = os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT")
    if endpoint:
        if not endpoint.startswith(("http://", "https://")):
            raise RuntimeError(f"OTEL_EXPORTER_OTLP_ENDPOINT must be an http(s) URL: {endpoint}")
        provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint)))
        logger.info(f"[CLI] exporting solver spans to {endpoint}")
    if use_console or _flag("OTEL_CONSOLE_EXPORTER"):
        provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter()))
    trace.set_tracer_provider(provider)
