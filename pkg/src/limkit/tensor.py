"""Dense NCHW tensors with a small reverse-mode differentiation core.

Every value in the library is a 4-D ``Tensor`` (batch, channel, height,
width). Operations build a graph of parent references plus a backward
closure; ``Tensor.backward`` walks it in a fixed topological order and sums
gradients of tensors that are used more than once.
"""

from __future__ import annotations

import contextlib
import struct
import warnings
from pathlib import Path

import numpy as np

_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_dtype = np.float64

# Active kink monitor (a list) or None. Non-smooth ops append the distance of
# their inputs to the nearest kink/tie so gradient checks can skip instances
# where finite differences straddle a non-differentiable point.
_margins: list | None = None


def set_precision(name: str) -> None:
    global _dtype
    try:
        _dtype = _PRECISIONS[name]
    except KeyError:
        raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}, got {name!r}") from None


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the global precision mode ('float64' or 'float32')."""
    global _dtype
    saved = _dtype
    set_precision(name)
    try:
        yield
    finally:
        _dtype = saved


@contextlib.contextmanager
def kink_monitor():
    global _margins
    saved = _margins
    _margins = []
    try:
        yield _margins
    finally:
        _margins = saved


def monitoring_kinks() -> bool:
    return _margins is not None


def report_margin(value: float) -> None:
    if _margins is not None:
        _margins.append(float(value))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.ascontiguousarray(np.asarray(data, dtype=dtype or _dtype))
        if arr.ndim != 4:
            raise ValueError(f"Tensor must be 4-D (n, c, h, w), got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if not np.isfinite(data).all():
            raise FloatingPointError(f"{op}: produced non-finite values")
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def h(self):
        return self.data.shape[2]

    @property
    def w(self):
        return self.data.shape[3]

    def numpy(self):
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def __add__(self, other):
        return elementwise_add(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self.op}{flag})"

    def backward(self, upstream=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if upstream is None:
            if self.data.size != 1:
                raise ValueError("backward() without an upstream gradient needs a scalar tensor")
            upstream = np.ones_like(self.data)
        else:
            upstream = np.asarray(upstream.data if isinstance(upstream, Tensor) else upstream, dtype=self.data.dtype)
            if upstream.shape != self.shape:
                raise ValueError(f"upstream shape {upstream.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): upstream}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_dtype))


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=_dtype))


def _extent_report(a, b):
    return f"({'x'.join(map(str, a.shape))}) vs ({'x'.join(map(str, b.shape))})"


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"elementwise_add: extent mismatch {_extent_report(a, b)}")

    def backward(g):
        return g, g

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def add_n(tensors) -> Tensor:
    """Left-to-right sum of same-shape tensors (fixed accumulation order)."""
    tensors = list(tensors)
    out = tensors[0]
    for t in tensors[1:]:
        out = elementwise_add(out, t)
    return out


def elementwise_max(tensors, exact_ties_shared: bool = False) -> Tensor:
    """Element-wise max over same-shape tensors; gradient goes to the first maximal input.

    Set ``exact_ties_shared`` when exactly equal candidates are copies of one
    upstream value: such ties are then not reported as kinks.
    """
    tensors = list(tensors)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ValueError(f"elementwise_max: extent mismatch {_extent_report(tensors[0], t)}")
    stacked = np.stack([t.data for t in tensors])
    winner = np.argmax(stacked, axis=0)
    if monitoring_kinks() and len(tensors) > 1:
        top = stacked.max(axis=0)
        if exact_ties_shared:
            below = np.where(stacked < top, stacked, -np.inf).max(axis=0)
        else:
            below = np.sort(stacked, axis=0)[-2]
        report_margin((top - below).min())

    def backward(g):
        return tuple(np.where(winner == k, g, 0) for k in range(len(tensors)))

    return Tensor._from_op(stacked.max(axis=0), tensors, backward, "max")


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    for t in tensors[1:]:
        if (t.n, t.h, t.w) != (ref.n, ref.h, ref.w):
            raise ValueError(f"concat_channels: extent mismatch {_extent_report(ref, t)}")
    bounds = np.cumsum([0] + [t.c for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors)))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=1), tensors, backward, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return Tensor._from_op(x.data[:, start:stop].copy(), (x,), backward, "slice")


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar ``sum(x * weights)`` with constant weights; used to probe gradients."""
    w = np.asarray(weights, dtype=x.data.dtype)
    if w.shape != x.shape:
        raise ValueError(f"weighted_sum: weights shape {w.shape} != tensor shape {x.shape}")
    value = np.array(np.sum(x.data * w), dtype=x.data.dtype).reshape(1, 1, 1, 1)

    def backward(g):
        return (w * g.reshape(()),)

    return Tensor._from_op(value, (x,), backward, "weighted_sum")


def sum_all(x: Tensor) -> Tensor:
    return weighted_sum(x, np.ones_like(x.data))


def seeded_init(shape, seed: int, scheme: str = "uniform-fan-in", gain: float = 1.0) -> Tensor:
    """Deterministic parameter initialisation.

    ``uniform-fan-in`` draws from U(-b, b) with ``b = gain * sqrt(6 / fan_in)``
    where fan_in is the product of all extents after the first.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 0 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    if scheme == "zeros":
        return Tensor(np.zeros(shape))
    if scheme == "ones":
        return Tensor(np.ones(shape))
    if scheme != "uniform-fan-in":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if any(s == 0 for s in shape):
        raise ValueError(f"uniform-fan-in needs positive extents, got {shape}")
    fan_in = shape[1] * shape[2] * shape[3]
    bound = gain * np.sqrt(6.0 / fan_in)
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def finite_diff_grad(f, x: Tensor, eps: float = 1e-5, return_mask: bool = False):
    """Central-difference gradient of the scalar function ``f`` at ``x``.

    Elements whose perturbed evaluations are non-finite are zeroed and marked
    invalid; pass ``return_mask=True`` to get ``(grad, valid_mask)``.
    """
    if x.data.dtype != np.float64:
        raise ValueError("finite_diff_grad needs a 64-bit tensor")
    base = x.data
    grad = np.zeros_like(base)
    valid = np.ones(base.shape, dtype=bool)
    flat = grad.reshape(-1)
    vflat = valid.reshape(-1)
    for i in range(base.size):
        vals = []
        for sign in (1.0, -1.0):
            probe = base.copy()
            probe.reshape(-1)[i] += sign * eps
            try:
                out = f(Tensor(probe))
                v = out.item() if isinstance(out, Tensor) else float(out)
            except FloatingPointError:
                v = float("nan")
            vals.append(v)
        if not (np.isfinite(vals[0]) and np.isfinite(vals[1])):
            vflat[i] = False
            continue
        flat[i] = (vals[0] - vals[1]) / (2.0 * eps)
    if return_mask:
        return Tensor(grad), valid
    if not valid.all():
        warnings.warn(f"finite_diff_grad: {int((~valid).sum())} element(s) had non-finite evaluations", stacklevel=2)
    return Tensor(grad)


_MAGIC = b"T4v1"
_TAGS = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}
_TAG_DTYPES = {4: "<f4", 8: "<f8"}


def dump_tensor(t: Tensor, path) -> None:
    """Write ``T4v1`` + 4 little-endian u32 extents + precision byte + raw LE values."""
    tag = _TAGS[t.data.dtype]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4I", *t.shape))
        fh.write(bytes([tag]))
        fh.write(t.data.astype(_TAG_DTYPES[tag], copy=False).tobytes())


def load_tensor(path) -> Tensor:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a T4v1 tensor file")
    shape = struct.unpack("<4I", raw[4:20])
    tag = raw[20]
    if tag not in _TAG_DTYPES:
        raise ValueError(f"{path}: unknown precision tag {tag}")
    count = int(np.prod(shape))
    expected = 21 + count * tag
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype=_TAG_DTYPES[tag], offset=21, count=count)
    native = np.float32 if tag == 4 else np.float64
    return Tensor(values.reshape(shape).astype(native), dtype=native)
