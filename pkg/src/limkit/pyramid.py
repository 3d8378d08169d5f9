"""Dense top-down and bottom-up pyramid pathways and the residual combine.

Both pathways use literal dense sums: level l receives a resampled copy of
every already-computed level, not just its neighbour. Because each of those
levels already contains the levels beyond it, nearer levels are counted more
than once; that weighting is intentional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConvWeights, conv2d, downsample_max, upsample_nearest
from .tensor import Tensor, add_n, elementwise_add


class FeaturePyramid:
    """Ordered levels, level 0 the largest; each next level has exactly half the height and width."""

    def __init__(self, levels):
        levels = list(levels)
        if not levels:
            raise ValueError("a feature pyramid needs at least one level")
        base = levels[0]
        for l, t in enumerate(levels[1:], start=1):
            prev = levels[l - 1]
            if t.n != base.n:
                raise ValueError(f"level {l} batch {t.n} != level 0 batch {base.n}")
            if (t.h * 2, t.w * 2) != (prev.h, prev.w):
                raise ValueError(f"level {l} is {t.h}x{t.w}, expected half of {prev.h}x{prev.w}")
        self.levels = levels

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    def __iter__(self):
        return iter(self.levels)

    @property
    def shapes(self):
        return [t.shape for t in self.levels]

    @property
    def channels(self):
        return [t.c for t in self.levels]


@dataclass
class LimParams:
    """1x1 projections: ``top_down[l]`` (backbone -> d), ``bottom_up[l]`` (4d or d -> d),
    optional ``output[l]`` applied to the backbone map before the residual add."""

    top_down: list
    bottom_up: list | None = None
    output: list | None = None

    @property
    def width(self):
        return self.top_down[0].out_channels

    @classmethod
    def init(cls, backbone_channels, width, bottom_up_in=None, seed=0, gain=1.0):
        """Random projections; ``bottom_up_in=None`` leaves out the bottom-up pathway."""
        backbone_channels = list(backbone_channels)
        top = [ConvWeights.init(c, width, 1, seed * 7919 + 11 * l + 1, gain=gain) for l, c in enumerate(backbone_channels)]
        bottom = None
        if bottom_up_in is not None:
            bottom = [ConvWeights.init(bottom_up_in, width, 1, seed * 7919 + 11 * l + 2, gain=gain) for l in range(len(backbone_channels))]
        output = None
        if any(c != width for c in backbone_channels):
            output = [None if c == width else ConvWeights.init(c, width, 1, seed * 7919 + 11 * l + 3, gain=gain)
                      for l, c in enumerate(backbone_channels)]
        return cls(top, bottom, output)

    @classmethod
    def identity(cls, levels, width, bottom_up_in=None):
        """Channel-identity projections (bottom-up from 4d sums the four direction blocks)."""
        top = [ConvWeights.identity(width) for _ in range(levels)]
        bottom = None
        if bottom_up_in == width:
            bottom = [ConvWeights.identity(width) for _ in range(levels)]
        elif bottom_up_in is not None:
            reps = bottom_up_in // width
            w = np.tile(np.eye(width), (1, reps)).reshape(width, bottom_up_in, 1, 1)
            bottom = [ConvWeights(Tensor(w), Tensor(np.zeros((1, width, 1, 1)))) for _ in range(levels)]
        return cls(top, bottom)

    def parameters(self):
        out = {}
        for l, w in enumerate(self.top_down):
            out.update({f"top_down.{l}.{k}": v for k, v in w.parameters().items()})
        for l, w in enumerate(self.bottom_up or []):
            out.update({f"bottom_up.{l}.{k}": v for k, v in w.parameters().items()})
        for l, w in enumerate(self.output or []):
            if w is not None:
                out.update({f"output.{l}.{k}": v for k, v in w.parameters().items()})
        return out


def top_down_dense(backbone: FeaturePyramid, p: LimParams) -> FeaturePyramid:
    """A[l] = V(F[l]) + sum_{m=1}^{L-1-l} upsample(A[l+m], m), computed from the top level down."""
    L = len(backbone)
    if len(p.top_down) != L:
        raise ValueError(f"{len(p.top_down)} top-down projections for a {L}-level pyramid")
    A = [None] * L
    for l in range(L - 1, -1, -1):
        terms = [conv2d(backbone[l], p.top_down[l])]
        terms += [upsample_nearest(A[l + m], m) for m in range(1, L - l)]
        A[l] = add_n(terms)
    return FeaturePyramid(A)


def bottom_up_dense(b: FeaturePyramid, p: LimParams) -> FeaturePyramid:
    """Ct[l] = V(B[l]) + sum_{m=1}^{l} downsample(Ct[l-m], m), computed from the bottom level up."""
    L = len(b)
    if p.bottom_up is None or len(p.bottom_up) != L:
        raise ValueError(f"bottom-up projections missing or not {L} long")
    Ct = []
    for l in range(L):
        terms = [conv2d(b[l], p.bottom_up[l])]
        terms += [downsample_max(Ct[l - m], m) for m in range(1, l + 1)]
        Ct.append(add_n(terms))
    return FeaturePyramid(Ct)


def residual_combine(ct: FeaturePyramid, backbone: FeaturePyramid, p: LimParams | None = None) -> FeaturePyramid:
    """C[l] = Ct[l] + F[l], projecting F[l] to the pyramid width when channel counts differ."""
    if len(ct) != len(backbone):
        raise ValueError(f"{len(ct)} pathway levels vs {len(backbone)} backbone levels")
    out = []
    for l, (c, f) in enumerate(zip(ct, backbone)):
        if (c.h, c.w) != (f.h, f.w):
            raise ValueError(f"level {l}: pathway {c.h}x{c.w} vs backbone {f.h}x{f.w}")
        proj = p.output[l] if p is not None and p.output is not None else None
        if proj is not None:
            f = conv2d(f, proj)
        elif c.c != f.c:
            raise ValueError(f"level {l}: {c.c} pathway channels vs {f.c} backbone channels and no output projection")
        out.append(elementwise_add(c, f))
    return FeaturePyramid(out)
