"""Lateral-inhibition feature pyramids for prohibited-item detection, on a numpy autodiff core."""

from .boundary import ScanDirection, ba_aggregate, directional_max_scan, directional_max_scan_naive
from .lim import LimConfig, lim_forward
from .pyramid import FeaturePyramid, LimParams, bottom_up_dense, residual_combine, top_down_dense
from .tensor import Tensor, finite_diff_grad, get_dtype, precision, set_precision

__version__ = "0.1.0"

__all__ = [
    "FeaturePyramid",
    "LimConfig",
    "LimParams",
    "ScanDirection",
    "Tensor",
    "ba_aggregate",
    "bottom_up_dense",
    "directional_max_scan",
    "directional_max_scan_naive",
    "finite_diff_grad",
    "get_dtype",
    "lim_forward",
    "precision",
    "residual_combine",
    "set_precision",
    "top_down_dense",
]
