# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

import time
from typing import Any, Dict, List, Optional

import pandas as pd
from opentelemetry import trace


class IterationTrace:
    """Collector for per-iteration solver events.

    - .record(type, **fields) appends an event with a timestamp
    - .events holds a simple list of recorded events for persistence
    - .frame(type) returns the events of one type as a DataFrame
    """

    def __init__(self, label: str = "solver"):
        self.label = label
        self.events: List[Dict[str, Any]] = []
        self.started_at: Optional[float] = None
        self.completed_at: Optional[float] = None

    def record(self, type: str, **fields: Any) -> None:
        now = time.time()
        if self.started_at is None:
            self.started_at = now
        self.events.append({"ts": now, "type": type, **fields})

    def finish(self, **fields: Any) -> None:
        self.record("done", **fields)
        self.completed_at = time.time()

    def of_type(self, type: str) -> List[Dict[str, Any]]:
        return [e for e in self.events if e["type"] == type]

    def frame(self, type: str = "iteration") -> pd.DataFrame:
        rows = [{k: v for k, v in e.items() if k != "type"} for e in self.of_type(type)]
        return pd.DataFrame(rows)

    def __len__(self) -> int:
        return len(self.events)


def start_span(name: str, **attributes: Any):
    tracer = trace.get_tracer("smdp_risk")
    return tracer.start_as_current_span(name, attributes=attributes or None)
