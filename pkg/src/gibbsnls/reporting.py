"""Tabular reports, CSV/JSON emission and chunked parallel evaluation."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Report", "atomic_write", "fmt_real", "map_chunks", "resolve_workers"]


def fmt_real(x, digits=17):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.{digits}g}"
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


@dataclass
class Report:
    """Rows of named columns plus summary values and pass/fail checks."""

    name: str
    columns: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(bool(v) for v in self.checks.values())

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(tuple(values))

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path=None):
        lines = [",".join(self.columns)]
        lines += [",".join(fmt_real(v) for v in r) for r in self.rows]
        text = "\n".join(lines) + "\n"
        if path is not None:
            atomic_write(path, text)
        return text

    def to_dict(self):
        return _jsonable(
            {
                "name": self.name,
                "columns": self.columns,
                "rows": [list(r) for r in self.rows],
                "summary": self.summary,
                "checks": self.checks,
                "passed": self.passed,
            }
        )

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            atomic_write(path, text)
        return text

    def table(self):
        """Plain-text rendering for terminals."""
        cells = [self.columns] + [[fmt_real(v, 6) for v in r] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.columns))]
        out = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
        for k, v in self.checks.items():
            out.append(f"[{'PASS' if v else 'FAIL'}] {k}")
        return "\n".join(out)


def resolve_workers(workers=None):
    if workers is None:
        workers = int(os.environ.get("GIBBSNLS_WORKERS", "1"))
    return max(1, int(workers))


def map_chunks(fn, count, chunk, workers=1):
    """Apply ``fn(start, stop)`` over [0, count) in fixed chunks; results in chunk order.

    Chunk boundaries do not depend on ``workers``, so any associative
    aggregation of the results is independent of the worker count.
    """
    bounds = [(i, min(i + chunk, count)) for i in range(0, count, chunk)]
    workers = resolve_workers(workers)
    if workers == 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))
