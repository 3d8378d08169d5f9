"""Convolution, batch norm, ReLU, 2^m resampling and the BN -> ReLU -> Conv block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .tensor import Tensor, monitoring_kinks, report_margin, seeded_init


@dataclass
class ConvWeights:
    """Kernel ``(out, in, k, k)`` and bias ``(1, out, 1, 1)``; k is 1 or 3."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        o, i, kh, kw = self.weight.shape
        if kh != kw or kh not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {kh}x{kw}")
        if self.bias.shape != (1, o, 1, 1):
            raise ValueError(f"bias shape {self.bias.shape} does not match {o} output channels")

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def k(self):
        return self.weight.shape[2]

    @classmethod
    def init(cls, in_channels, out_channels, k, seed, requires_grad=True, gain=1.0):
        w = seeded_init((out_channels, in_channels, k, k), seed, gain=gain)
        b = Tensor(np.zeros((1, out_channels, 1, 1)))
        w.requires_grad = b.requires_grad = requires_grad
        return cls(w, b)

    @classmethod
    def identity(cls, channels, requires_grad=False):
        """1x1 channel-identity map with zero bias."""
        w = Tensor(np.eye(channels).reshape(channels, channels, 1, 1), requires_grad=requires_grad)
        b = Tensor(np.zeros((1, channels, 1, 1)), requires_grad=requires_grad)
        return cls(w, b)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"
    initialized: bool = False

    def __post_init__(self):
        c = self.gamma.shape[1]
        for name in ("beta",):
            if getattr(self, name).shape != (1, c, 1, 1):
                raise ValueError(f"{name} must have shape (1, {c}, 1, 1)")
        if self.running_mean.shape != (c,) or self.running_var.shape != (c,):
            raise ValueError(f"running statistics must have {c} entries")
        if (self.running_var < 0).any():
            raise ValueError("running variance must be non-negative")

    @property
    def channels(self):
        return self.gamma.shape[1]

    @classmethod
    def init(cls, channels, requires_grad=True):
        return cls(
            gamma=Tensor(np.ones((1, channels, 1, 1)), requires_grad=requires_grad),
            beta=Tensor(np.zeros((1, channels, 1, 1)), requires_grad=requires_grad),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
        )

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}


def conv2d(x: Tensor, w: ConvWeights) -> Tensor:
    """Stride-1 cross-correlation with zero padding k // 2, plus bias."""
    if x.c != w.in_channels:
        raise ValueError(f"conv2d: input has {x.c} channels, weights expect {w.in_channels}")
    N, C, H, W = x.shape
    O, k = w.out_channels, w.k
    wmat = w.weight.data.reshape(O, C * k * k)
    if k == 1:
        cols = x.data.reshape(N, C, H * W)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
        # per-image (C, kh, kw, H, W) patches; the copy's inner loop stays contiguous
        cols = np.ascontiguousarray(sliding_window_view(xp, (3, 3), axis=(2, 3)).transpose(0, 1, 4, 5, 2, 3))
        cols = cols.reshape(N, C * 9, H * W)
    out = np.matmul(wmat, cols).reshape(N, O, H, W) + w.bias.data

    def backward(g):
        g3 = g.reshape(N, O, H * W)
        dw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.weight.shape)
        db = g3.sum(axis=(0, 2)).reshape(1, O, 1, 1)
        dcols = np.matmul(wmat.T, g3)
        if k == 1:
            return dcols.reshape(N, C, H, W), dw, db
        dcols = dcols.reshape(N, C, 3, 3, H, W)
        dxp = np.zeros((N, C, H + 2, W + 2), dtype=g.dtype)
        for di in range(3):
            for dj in range(3):
                dxp[:, :, di:di + H, dj:dj + W] += dcols[:, :, di, dj]
        return np.ascontiguousarray(dxp[:, :, 1:H + 1, 1:W + 1]), dw, db

    return Tensor._from_op(np.ascontiguousarray(out), (x, w.weight, w.bias), backward, f"conv{k}x{k}")


def batch_norm(x: Tensor, s: BatchNormState) -> Tensor:
    """Per-channel normalisation; train mode uses batch statistics and updates the running ones."""
    if x.c != s.channels:
        raise ValueError(f"batch_norm: input has {x.c} channels, state has {s.channels}")
    gamma, beta = s.gamma.data, s.beta.data
    if s.mode == "eval":
        if not s.initialized:
            raise RuntimeError("batch_norm: eval mode needs running statistics (train first or set initialized=True)")
        mean = s.running_mean.reshape(1, -1, 1, 1).astype(x.data.dtype)
        inv = 1.0 / np.sqrt(s.running_var.reshape(1, -1, 1, 1).astype(x.data.dtype) + s.eps)
        xhat = (x.data - mean) * inv
        out = gamma * xhat + beta

        def backward_eval(g):
            return g * gamma * inv, (g * xhat).sum(axis=(0, 2, 3), keepdims=True), g.sum(axis=(0, 2, 3), keepdims=True)

        return Tensor._from_op(out, (x, s.gamma, s.beta), backward_eval, "batch_norm")

    if s.mode != "train":
        raise ValueError(f"batch_norm: unknown mode {s.mode!r}")
    count = x.n * x.h * x.w
    if count < 2:
        raise ValueError("batch_norm: train mode needs at least 2 values per channel")
    mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + s.eps)
    xhat = centered * inv
    out = gamma * xhat + beta

    m = s.momentum
    s.running_mean = (1 - m) * s.running_mean + m * mean.reshape(-1)
    s.running_var = (1 - m) * s.running_var + m * var.reshape(-1) * (count / (count - 1))
    s.initialized = True

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dbeta = g.sum(axis=(0, 2, 3), keepdims=True)
        dxhat = g * gamma
        dx = inv * (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True) - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
        return dx, dgamma, dbeta

    return Tensor._from_op(out, (x, s.gamma, s.beta), backward, "batch_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if monitoring_kinks() and x.data.size:
        report_margin(np.abs(x.data).min())

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), backward, "relu")


def upsample_nearest(x: Tensor, m: int) -> Tensor:
    """Replicate every pixel over a 2^m x 2^m block."""
    if m < 1:
        raise ValueError(f"upsample_nearest: m must be >= 1, got {m}")
    N, C, H, W = x.shape
    f = 2 ** m
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (N, C, H, f, W, f)).reshape(N, C, H * f, W * f)

    def backward(g):
        return (g.reshape(N, C, H, f, W, f).sum(axis=(3, 5)),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward, f"upsample{m}")


def downsample_max(x: Tensor, m: int) -> Tensor:
    """m successive 2x2 stride-2 max pools; gradient goes to the first row-major maximum."""
    if m < 1:
        raise ValueError(f"downsample_max: m must be >= 1, got {m}")
    f = 2 ** m
    if x.h % f or x.w % f:
        raise ValueError(f"downsample_max: {x.h}x{x.w} is not divisible by 2^{m}")
    data, args = x.data, []
    for _ in range(m):
        if monitoring_kinks() and data.size:
            report_margin(kernels.pool_top2_gap(data))
        data, arg = kernels.maxpool2x2(data)
        args.append(arg)

    def backward(g):
        for arg in reversed(args):
            g = kernels.maxpool2x2_backward(g, arg)
        return (g,)

    return Tensor._from_op(data, (x,), backward, f"downsample{m}")


def conv_block(x: Tensor, s: BatchNormState, w: ConvWeights) -> Tensor:
    """conv2d(relu(batch_norm(x))) with a 3x3 kernel."""
    if w.k != 3:
        raise ValueError(f"conv_block needs a 3x3 kernel, got {w.k}x{w.k}")
    return conv2d(relu(batch_norm(x, s)), w)


@dataclass
class ConvBlock:
    bn: BatchNormState
    conv: ConvWeights

    @classmethod
    def init(cls, in_channels, out_channels, seed, gain=1.0):
        return cls(BatchNormState.init(in_channels), ConvWeights.init(in_channels, out_channels, 3, seed, gain=gain))

    def __call__(self, x):
        return conv_block(x, self.bn, self.conv)

    def parameters(self):
        return {**{f"bn.{k}": v for k, v in self.bn.parameters().items()},
                **{f"conv.{k}": v for k, v in self.conv.parameters().items()}}


__all__ = [
    "BatchNormState",
    "ConvBlock",
    "ConvWeights",
    "batch_norm",
    "conv2d",
    "conv_block",
    "downsample_max",
    "relu",
    "upsample_nearest",
]
