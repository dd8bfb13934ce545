"""Line-delimited JSON metrics with finiteness and monotonicity checks."""
from __future__ import annotations

import json
import math
from pathlib import Path


class NumericError(RuntimeError):
    pass


class MetricsWriter:
    """Appends one JSON object per record to metrics.jsonl, flushed per line."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a")

    def log(self, stage, step, **scalars):
        record = {"stage": stage, "step": int(step)}
        for name, value in scalars.items():
            value = float(value)
            if not math.isfinite(value):
                self._fh.close()
                raise NumericError(
                    f"non-finite metric {name}={value} at stage {stage} step {step}")
            record[name] = value
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def validate_metrics(path):
    """Checks parseability and per-stage step monotonicity; returns records."""
    records = read_metrics(path)
    last = {}
    for i, rec in enumerate(records):
        if "stage" not in rec or "step" not in rec:
            raise ValueError(f"{path}: record {i} missing stage/step")
        stage, step = rec["stage"], rec["step"]
        if stage in last and step <= last[stage]:
            raise ValueError(
                f"{path}: step {step} not monotone within stage {stage}")
        last[stage] = step
        for name, value in rec.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"{path}: non-finite {name} in record {i}")
    return records
