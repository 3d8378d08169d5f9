"""The full lateral-inhibition pass: top-down -> boundary activation -> bottom-up -> residual."""

from __future__ import annotations

from dataclasses import dataclass

from .boundary import ba_aggregate
from .pyramid import FeaturePyramid, LimParams, bottom_up_dense, residual_combine, top_down_dense

ABLATIONS = ("sp", "bp", "full")
_ALIASES = {"sp-only": "sp", "bp-only": "bp", "bp+ba": "full", "sp": "sp", "bp": "bp", "full": "full"}


@dataclass(frozen=True)
class LimConfig:
    levels: int = 3
    width: int = 32
    ba_mode: str = "concat"
    ablation: str = "full"

    def __post_init__(self):
        if self.levels < 1 or self.width < 1:
            raise ValueError(f"levels and width must be >= 1, got {self.levels}, {self.width}")
        if self.ba_mode not in ("concat", "max-fuse"):
            raise ValueError(f"ba_mode must be 'concat' or 'max-fuse', got {self.ba_mode!r}")
        key = self.ablation.lower()
        if key not in _ALIASES:
            raise ValueError(f"ablation must be one of {sorted(_ALIASES)}, got {self.ablation!r}")
        object.__setattr__(self, "ablation", _ALIASES[key])

    @property
    def bottom_up_in(self):
        """Input channels of the bottom-up projections (None when there is no bottom-up pass)."""
        if self.ablation == "sp":
            return None
        if self.ablation == "full" and self.ba_mode == "concat":
            return 4 * self.width
        return self.width

    def init_params(self, backbone_channels, seed=0, gain=1.0) -> LimParams:
        return LimParams.init(backbone_channels, self.width, self.bottom_up_in, seed, gain)


def boundary_activate(pyr: FeaturePyramid, mode: str = "concat") -> FeaturePyramid:
    return FeaturePyramid([ba_aggregate(a, mode) for a in pyr])


def lim_forward(backbone: FeaturePyramid, p: LimParams, cfg: LimConfig) -> FeaturePyramid:
    if len(backbone) != cfg.levels:
        raise ValueError(f"config expects {cfg.levels} levels, pyramid has {len(backbone)}")
    if p.width != cfg.width:
        raise ValueError(f"params have width {p.width}, config expects {cfg.width}")
    base = backbone[0]
    f = 2 ** (cfg.levels - 1)
    if base.h % f or base.w % f:
        raise ValueError(f"level-0 extent {base.h}x{base.w} not divisible by {f}")
    expected_bu = cfg.bottom_up_in
    if expected_bu is not None and (p.bottom_up is None or p.bottom_up[0].in_channels != expected_bu):
        raise ValueError(f"ablation {cfg.ablation!r} needs bottom-up projections from {expected_bu} channels")

    a = top_down_dense(backbone, p)
    if cfg.ablation == "sp":
        return residual_combine(a, backbone, p)
    b = boundary_activate(a, cfg.ba_mode) if cfg.ablation == "full" else a
    return residual_combine(bottom_up_dense(b, p), backbone, p)
