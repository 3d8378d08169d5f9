"""Hot kernels: directional running-max scans and 2x2 max pooling.

Each kernel has a numba implementation and a pure-numpy fallback. Forward
values are identical across backends (max is exact). Backward scatters are
summed in scan order in both backends.

Scan kernels work on 3-D arrays ``(planes, rows, cols)`` and scan along
``axis`` ('w' = along a row, 'h' = along a column). ``reverse=True`` starts at
the last index (e.g. the right-most column for ``axis='w'``).
"""

import numpy as np

from ._accel import njit, resolve_backend


@njit
def _scan_w_nb(a, out, reverse):
    P, H, W = a.shape
    if W == 0:
        return
    for p in range(P):
        for i in range(H):
            if reverse:
                m = a[p, i, W - 1]
                out[p, i, W - 1] = m
                for j in range(W - 2, -1, -1):
                    v = a[p, i, j]
                    if v > m:
                        m = v
                    out[p, i, j] = m
            else:
                m = a[p, i, 0]
                out[p, i, 0] = m
                for j in range(1, W):
                    v = a[p, i, j]
                    if v > m:
                        m = v
                    out[p, i, j] = m


@njit
def _scan_h_nb(a, out, reverse):
    # row loop: each step is an element-wise max of two contiguous rows
    P, H, W = a.shape
    if H == 0:
        return
    for p in range(P):
        first = H - 1 if reverse else 0
        for j in range(W):
            out[p, first, j] = a[p, first, j]
        for s in range(1, H):
            i = H - 1 - s if reverse else s
            prev = i + 1 if reverse else i - 1
            for j in range(W):
                v = a[p, i, j]
                m = out[p, prev, j]
                out[p, i, j] = v if v > m else m


@njit
def _scan_w_bwd_nb(a, up, grad, reverse):
    P, H, W = a.shape
    if W == 0:
        return
    for p in range(P):
        for i in range(H):
            start = W - 1 if reverse else 0
            best = a[p, i, start]
            idx = start
            for s in range(W):
                j = W - 1 - s if reverse else s
                v = a[p, i, j]
                if v > best:
                    best = v
                    idx = j
                grad[p, i, idx] += up[p, i, j]


@njit
def _scan_h_bwd_nb(a, up, grad, reverse):
    P, H, W = a.shape
    if H == 0:
        return
    best = np.empty(W, a.dtype)
    idx = np.empty(W, np.int64)
    for p in range(P):
        start = H - 1 if reverse else 0
        for j in range(W):
            best[j] = a[p, start, j]
            idx[j] = start
        for s in range(H):
            i = H - 1 - s if reverse else s
            for j in range(W):
                v = a[p, i, j]
                if v > best[j]:
                    best[j] = v
                    idx[j] = i
                grad[p, idx[j], j] += up[p, i, j]


def _scan_view(x, axis, reverse):
    """View of ``x`` with the scan running forward along the last axis."""
    v = x if axis == "w" else np.swapaxes(x, 1, 2)
    return v[..., ::-1] if reverse else v


def _check_axis(axis):
    if axis not in ("w", "h"):
        raise ValueError(f"scan axis must be 'w' or 'h', got {axis!r}")


def scan_max(a, axis, reverse, backend=None):
    """Running max of a (P, H, W) array along ``axis``."""
    _check_axis(axis)
    a = np.ascontiguousarray(a)
    if resolve_backend(backend) == "numba":
        out = np.empty_like(a)
        (_scan_w_nb if axis == "w" else _scan_h_nb)(a, out, reverse)
        return out
    out = np.empty_like(a)
    if axis == "h":
        _row_loop_np(a, out, reverse)
    else:
        np.maximum.accumulate(_scan_view(a, axis, reverse), axis=-1, out=_scan_view(out, axis, reverse))
    return out


def scan_max_backward(a, upstream, axis, reverse, backend=None):
    """Route each output's gradient to the input that attained its running max.

    Ties go to the tied position nearest the scan start.
    """
    _check_axis(axis)
    a = np.ascontiguousarray(a)
    upstream = np.ascontiguousarray(upstream, dtype=a.dtype)
    if upstream.shape != a.shape:
        raise ValueError(f"upstream shape {upstream.shape} != input shape {a.shape}")
    if resolve_backend(backend) == "numba":
        grad = np.zeros_like(a)
        (_scan_w_bwd_nb if axis == "w" else _scan_h_bwd_nb)(a, upstream, grad, reverse)
        return grad

    av = np.ascontiguousarray(_scan_view(a, axis, reverse))
    uv = np.ascontiguousarray(_scan_view(upstream, axis, reverse))
    S = av.shape[-1]
    if S == 0 or av.size == 0:
        return np.zeros_like(a)
    run_max = np.maximum.accumulate(av, axis=-1)
    fresh = np.ones(av.shape, dtype=bool)
    fresh[..., 1:] = run_max[..., 1:] > run_max[..., :-1]
    pos = np.where(fresh, np.arange(S), 0)
    src = np.maximum.accumulate(pos, axis=-1)
    rows = np.arange(av.size // S).reshape(av.shape[:-1] + (1,)) * S
    summed = np.bincount((rows + src).ravel(), weights=uv.ravel(), minlength=av.size)
    gv = summed.astype(a.dtype).reshape(av.shape)
    grad = np.empty_like(a)
    _scan_view(grad, axis, reverse)[...] = gv
    return grad


def scan_top2_gap(a, axis, reverse):
    """Smallest gap between the best and second-best value over all scan windows."""
    v = _scan_view(np.asarray(a, dtype=np.float64), axis, reverse)
    top1 = v[..., 0].copy()
    top2 = np.full_like(top1, -np.inf)
    gap = np.inf
    for s in range(1, v.shape[-1]):
        new = v[..., s]
        top2 = np.maximum(top2, np.minimum(top1, new))
        top1 = np.maximum(top1, new)
        gap = min(gap, float((top1 - top2).min()))
    return gap


@njit
def _pool_nb(x, out, arg):
    N, C, H, W = x.shape
    for n in range(N):
        for c in range(C):
            for i in range(H // 2):
                for j in range(W // 2):
                    best = x[n, c, 2 * i, 2 * j]
                    k = 0
                    v = x[n, c, 2 * i, 2 * j + 1]
                    if v > best:
                        best = v
                        k = 1
                    v = x[n, c, 2 * i + 1, 2 * j]
                    if v > best:
                        best = v
                        k = 2
                    v = x[n, c, 2 * i + 1, 2 * j + 1]
                    if v > best:
                        best = v
                        k = 3
                    out[n, c, i, j] = best
                    arg[n, c, i, j] = k


@njit
def _pool_bwd_nb(g, arg, dx):
    N, C, H2, W2 = g.shape
    for n in range(N):
        for c in range(C):
            for i in range(H2):
                for j in range(W2):
                    k = arg[n, c, i, j]
                    dx[n, c, 2 * i + k // 2, 2 * j + k % 2] = g[n, c, i, j]


def _windows(x):
    N, C, H, W = x.shape
    return x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)


def maxpool2x2(x, backend=None):
    """2x2 stride-2 max pooling on NCHW; returns (out, argmax-in-window 0..3, row-major)."""
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2x2 needs even spatial extents, got {H}x{W}")
    x = np.ascontiguousarray(x)
    if resolve_backend(backend) == "numba":
        out = np.empty((N, C, H // 2, W // 2), dtype=x.dtype)
        arg = np.empty((N, C, H // 2, W // 2), dtype=np.int8)
        _pool_nb(x, out, arg)
        return out, arg
    win = _windows(x)
    arg = np.argmax(win, axis=-1).astype(np.int8)
    return win.max(axis=-1), arg


def maxpool2x2_backward(g, arg, backend=None):
    N, C, H2, W2 = g.shape
    g = np.ascontiguousarray(g)
    if resolve_backend(backend) == "numba":
        dx = np.zeros((N, C, 2 * H2, 2 * W2), dtype=g.dtype)
        _pool_bwd_nb(g, arg, dx)
        return dx
    onehot = arg[..., None] == np.arange(4, dtype=np.int8)
    win = np.where(onehot, g[..., None], 0).astype(g.dtype)
    return win.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * H2, 2 * W2)


def pool_top2_gap(x):
    win = np.sort(_windows(np.asarray(x, dtype=np.float64)), axis=-1)
    return float((win[..., -1] - win[..., -2]).min()) if win.size else np.inf


@njit
def _column_walk_nb(a, out, reverse):
    P, H, W = a.shape
    if H == 0:
        return
    for p in range(P):
        for j in range(W):
            first = H - 1 if reverse else 0
            m = a[p, first, j]
            out[p, first, j] = m
            for s in range(1, H):
                i = H - 1 - s if reverse else s
                v = a[p, i, j]
                if v > m:
                    m = v
                out[p, i, j] = m


def column_loop_scan(a, reverse=True, backend=None):
    """Vertical scan done one column at a time; the inner walk is strided by a full row."""
    a = np.ascontiguousarray(a)
    out = np.empty_like(a)
    if resolve_backend(backend) == "numba":
        _column_walk_nb(a, out, reverse)
        return out
    flip = slice(None, None, -1) if reverse else slice(None)
    for j in range(a.shape[-1]):
        out[:, flip, j] = np.maximum.accumulate(a[:, flip, j], axis=-1)
    return out


def _row_loop_np(a, out, reverse):
    H = a.shape[1]
    if H == 0:
        return
    first = H - 1 if reverse else 0
    out[:, first, :] = a[:, first, :]
    for s in range(1, H):
        i = H - 1 - s if reverse else s
        prev = i + 1 if reverse else i - 1
        np.maximum(a[:, i, :], out[:, prev, :], out=out[:, i, :])


def row_loop_scan(a, reverse=True, backend=None):
    """Vertical scan as a loop over rows; each step is a max of two contiguous rows."""
    return scan_max(a, "h", reverse, backend)


def rotate(a):
    """Swap rows and columns of a (P, H, W) array into a fresh contiguous array."""
    return np.ascontiguousarray(np.swapaxes(a, 1, 2))
