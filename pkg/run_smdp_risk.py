#!/usr/bin/env python3
# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
"""Standalone runner for the smdp-risk CLI.

Environment Variables:
  - LOG_LEVEL (default: INFO)
  - SMDP_RISK_GRID_W / SMDP_RISK_GRID_L (default: 64 / 64)
  - SMDP_RISK_W_MIN (default: 1e-3)
  - SMDP_RISK_QUAD_M (default: 64)
  - SMDP_RISK_TOL (default: 1e-4)
  - SMDP_RISK_MAX_ITER (default: 1000)
  - SMDP_RISK_SEED (default: 0)
  - SMDP_RISK_THREADS (default: 1)
  - SMDP_RISK_TAIL (default: pinch)
  - OTEL_EXPORTER_OTLP_ENDPOINT / OTEL_CONSOLE_EXPORTER (optional tracing)
"""

import logging
import os
import sys

from dotenv import load_dotenv  # type: ignore

# Load .env before the config reads SMDP_RISK_* defaults
load_dotenv()

logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s %(levelname)s %(name)s %(message)s",
)
logger = logging.getLogger("smdp_risk_runner")


def main() -> int:
    from smdp_risk.cli import run
    from smdp_risk.otel import otel_requested, setup_otel_from_env

    if otel_requested():
        try:
            setup_otel_from_env()
        except RuntimeError as e:
            logger.warning(f"[CLI] tracing disabled: {e}")
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
