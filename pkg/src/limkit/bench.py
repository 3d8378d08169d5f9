"""Vertical scan throughput: column-at-a-time walk vs. row-at-a-time sweep."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._accel import resolve_backend


@dataclass
class ScanBenchReport:
    shape: tuple
    backend: str
    equal: bool
    column_seconds: float
    row_seconds: float

    @property
    def elements(self):
        return int(np.prod(self.shape))

    @property
    def column_rate(self):
        return self.elements / self.column_seconds if self.column_seconds > 0 else float("inf")

    @property
    def row_rate(self):
        return self.elements / self.row_seconds if self.row_seconds > 0 else float("inf")

    @property
    def speedup(self):
        """Row-sweep throughput over column-walk throughput."""
        if self.row_seconds == 0:
            return float("inf") if self.column_seconds > 0 else 1.0
        return self.column_seconds / self.row_seconds

    def lines(self):
        c, h, w = self.shape
        return [
            f"map {c}x{h}x{w} ({self.elements} elements), backend {self.backend}",
            f"equality gate: {'PASS' if self.equal else 'FAIL'}",
            f"column loop:    {self.column_seconds * 1e3:9.3f} ms  {self.column_rate:.3e} elements/s",
            f"row-wise sweep: {self.row_seconds * 1e3:9.3f} ms  {self.row_rate:.3e} elements/s",
            f"speedup (row-wise / column loop): {self.speedup:.2f}x",
        ]


def _best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def scan_bench(channels=64, height=256, width=256, repeats=5, backend=None, seed=0) -> ScanBenchReport:
    """Time both FromBottom implementations on one random map; timing is skipped if outputs differ."""
    if min(channels, height, width) < 1 or repeats < 1:
        raise ValueError("extents and repeats must be >= 1")
    backend = resolve_backend(backend)
    a = np.random.default_rng(seed).standard_normal((channels, height, width))
    col = kernels.column_loop_scan(a, True, backend)  # also warms the jit cache
    row = kernels.row_loop_scan(a, True, backend)
    equal = col.dtype == row.dtype and np.array_equal(col, row)
    if not equal:
        return ScanBenchReport((channels, height, width), backend, False, float("nan"), float("nan"))
    tc = _best_time(lambda: kernels.column_loop_scan(a, True, backend), repeats)
    tr = _best_time(lambda: kernels.row_loop_scan(a, True, backend), repeats)
    return ScanBenchReport((channels, height, width), backend, True, tc, tr)
