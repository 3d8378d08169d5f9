"""Boundary activation: four-direction running-max scans of a feature map.

For the right-to-left scan each output is the max of its own value and every
value to its right on the same row, so a left object edge keeps the strongest
response seen from the right-hand side. The other three directions follow by
mirroring and transposition.
"""

from __future__ import annotations

import enum

import numpy as np

from . import kernels
from .tensor import Tensor, concat_channels, elementwise_max, monitoring_kinks, report_margin


class ScanDirection(enum.Enum):
    FROM_RIGHT = "from_right"
    FROM_LEFT = "from_left"
    FROM_BOTTOM = "from_bottom"
    FROM_TOP = "from_top"

    @property
    def horizontal(self) -> bool:
        return self in (ScanDirection.FROM_RIGHT, ScanDirection.FROM_LEFT)

    @property
    def axis(self) -> str:
        return "w" if self.horizontal else "h"

    @property
    def reverse(self) -> bool:
        # scan starts at the last index along its axis
        return self in (ScanDirection.FROM_RIGHT, ScanDirection.FROM_BOTTOM)


# channel order of ba_aggregate
AGGREGATE_ORDER = (
    ScanDirection.FROM_RIGHT,
    ScanDirection.FROM_LEFT,
    ScanDirection.FROM_BOTTOM,
    ScanDirection.FROM_TOP,
)


def _planes(x):
    n, c, h, w = x.shape
    return x.reshape(n * c, h, w)


def scan_backward(a: Tensor, d: ScanDirection, upstream) -> Tensor:
    """Gradient of ``directional_max_scan(a, d)`` with respect to ``a``."""
    up = upstream.data if isinstance(upstream, Tensor) else np.asarray(upstream, dtype=a.data.dtype)
    if up.shape != a.shape:
        raise ValueError(f"scan_backward: upstream shape {up.shape} != input shape {a.shape}")
    grad = kernels.scan_max_backward(_planes(a.data), _planes(up), d.axis, d.reverse)
    return Tensor(grad.reshape(a.shape), dtype=a.data.dtype)


def directional_max_scan(a: Tensor, d: ScanDirection, backend=None) -> Tensor:
    planes = _planes(a.data)
    out = kernels.scan_max(planes, d.axis, d.reverse, backend).reshape(a.shape)
    if monitoring_kinks() and a.data.size:
        report_margin(kernels.scan_top2_gap(planes, d.axis, d.reverse))

    def backward(g):
        return (kernels.scan_max_backward(planes, _planes(g), d.axis, d.reverse).reshape(a.shape),)

    return Tensor._from_op(out, (a,), backward, f"scan_{d.value}")


def directional_max_scan_naive(a: Tensor, d: ScanDirection) -> Tensor:
    """Reference scan: every output is an explicit max over its whole trailing run."""
    x = a.data if d.horizontal else np.swapaxes(a.data, 2, 3)
    out = np.empty_like(x)
    W = x.shape[-1]
    for j in range(W):
        run = x[..., j:] if d.reverse else x[..., : j + 1]
        out[..., j] = run.max(axis=-1)
    if not d.horizontal:
        out = np.swapaxes(out, 2, 3)
    return Tensor(out, dtype=a.data.dtype)


def ba_aggregate(a: Tensor, mode: str = "concat") -> Tensor:
    """Run all four scans; ``concat`` stacks them on the channel axis (4c channels),
    ``max-fuse`` keeps c channels by taking their element-wise max."""
    scans = [directional_max_scan(a, d) for d in AGGREGATE_ORDER]
    if mode == "concat":
        return concat_channels(scans)
    if mode == "max-fuse":
        # equal scan outputs are copies of one input element, so exact ties are smooth
        return elementwise_max(scans, exact_ties_shared=True)
    raise ValueError(f"unknown boundary-activation mode {mode!r}; expected 'concat' or 'max-fuse'")
