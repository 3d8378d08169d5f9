"""Tiny backbone, optional lateral-inhibition neck, and per-level prediction heads."""

from __future__ import annotations

import zlib

import numpy as np

from ..lim import LimConfig, lim_forward
from ..nn import ConvBlock, ConvWeights, conv2d, downsample_max
from ..pyramid import FeaturePyramid
from ..tensor import Tensor
from .config import DetectorConfig

# objectness prior: sigmoid(bias) = 0.01 at initialisation
_OBJ_PRIOR = float(-np.log(99.0))


def derive_seed(seed: int, name: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(name.encode())) % (2 ** 32)


class Detector:
    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        s = cfg.seed
        d = cfg.width
        g = cfg.init_gain
        self.stem = ConvWeights.init(3, cfg.stem_channels, 3, derive_seed(s, "stem"), gain=g)
        self.mid = ConvBlock.init(cfg.stem_channels, cfg.mid_channels, derive_seed(s, "mid"), g)
        self.levels = [ConvBlock.init(cfg.mid_channels if l == 0 else d, d, derive_seed(s, f"level{l}"), g)
                       for l in range(cfg.levels)]
        self.lim_cfg = None
        self.lim = None
        if cfg.variant != "baseline":
            self.lim_cfg = LimConfig(cfg.levels, d, cfg.ba_mode, cfg.variant)
            self.lim = self.lim_cfg.init_params([d] * cfg.levels, seed=derive_seed(s, "lim"), gain=g)
        self.heads = []
        for l in range(cfg.levels):
            head = ConvBlock.init(d, cfg.head_channels, derive_seed(s, f"head{l}"), cfg.head_gain)
            head.conv.bias.data[0, 0] = _OBJ_PRIOR
            self.heads.append(head)

    def blocks(self):
        return [("mid", self.mid)] + [(f"level{l}", b) for l, b in enumerate(self.levels)] + \
               [(f"head{l}", b) for l, b in enumerate(self.heads)]

    def parameters(self) -> dict:
        out = {f"stem.{k}": v for k, v in self.stem.parameters().items()}
        for name, block in self.blocks():
            out.update({f"{name}.{k}": v for k, v in block.parameters().items()})
        if self.lim is not None:
            out.update({f"lim.{k}": v for k, v in self.lim.parameters().items()})
        return out

    def bn_states(self) -> dict:
        return {name: block.bn for name, block in self.blocks()}

    def set_mode(self, mode: str) -> None:
        for bn in self.bn_states().values():
            bn.mode = mode

    def backbone(self, images: Tensor) -> FeaturePyramid:
        r = self.cfg.resolution
        if images.shape[1:] != (3, r, r):
            raise ValueError(f"expected images of shape (n, 3, {r}, {r}), got {images.shape}")
        x = downsample_max(conv2d(images, self.stem), 1)
        x = downsample_max(self.mid(x), 1)
        feats = []
        for l, block in enumerate(self.levels):
            if l:
                x = downsample_max(x, 1)
            x = block(x)
            feats.append(x)
        return FeaturePyramid(feats)

    def neck(self, feats: FeaturePyramid) -> FeaturePyramid:
        if self.lim is None:
            return feats
        return lim_forward(feats, self.lim, self.lim_cfg)

    def forward(self, images: Tensor):
        pyr = self.neck(self.backbone(images))
        return [head(p) for head, p in zip(self.heads, pyr)]

    __call__ = forward


def backbone_forward(images: Tensor, model: Detector) -> FeaturePyramid:
    return model.backbone(images)
