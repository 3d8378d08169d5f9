"""Finite-difference checks of every analytic backward rule in the library.

Each case builds a scalar probe ``sum(op(inputs) * R)`` with a fixed random
``R`` and compares the analytic gradient of every input against central
differences in 64-bit mode. Instances whose forward pass comes within
``margin`` of a ReLU kink or a max tie are redrawn (and counted as excluded).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .boundary import ScanDirection, ba_aggregate, directional_max_scan
from .detector.config import DetectorConfig
from .detector.loss import detection_loss
from .detector.targets import assign_targets
from .lim import LimConfig, lim_forward
from .nn import BatchNormState, ConvWeights, batch_norm, conv2d, conv_block, downsample_max, relu, upsample_nearest
from .pyramid import FeaturePyramid, LimParams, bottom_up_dense, residual_combine, top_down_dense
from .tensor import Tensor, finite_diff_grad, kink_monitor, precision, weighted_sum

TOLERANCE = 1e-4


@dataclass
class GradCase:
    name: str
    build: Callable  # rng -> (fn(dict[str, Tensor]) -> Tensor (any shape), dict[str, Tensor])


@dataclass
class CaseResult:
    name: str
    max_rel_err: float
    instances: int
    excluded: int
    tol: float = TOLERANCE

    @property
    def passed(self):
        return self.instances > 0 and self.max_rel_err < self.tol

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        rel = "<" if self.passed else ">="
        return (f"{self.name}: {status} (max rel err {self.max_rel_err:.2e} {rel} {self.tol:g}; "
                f"{self.instances} instances, {self.excluded} excluded)")


def relative_error(analytic, numeric) -> float:
    """max |a - n| scaled by the largest gradient magnitude of either side."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def _t(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def _distinct(rng, shape, spacing=0.05):
    """Values with pairwise gaps >= spacing (no max ties)."""
    size = int(np.prod(shape))
    return (rng.permutation(size) * spacing - size * spacing / 2).reshape(shape) + rng.uniform(0, spacing / 10)


def _conv_case(k):
    def build(rng):
        x = _t(rng.normal(size=(2, 3, 5, 4)))
        w = ConvWeights(_t(rng.normal(size=(2, 3, k, k))), _t(rng.normal(size=(1, 2, 1, 1))))
        return (lambda t: conv2d(t["x"], ConvWeights(t["weight"], t["bias"]))), {"x": x, "weight": w.weight, "bias": w.bias}
    return build


def _bn_build(rng):
    x = _t(rng.normal(size=(3, 2, 3, 3)) * 2 + 1)
    gamma = _t(rng.normal(size=(1, 2, 1, 1)))
    beta = _t(rng.normal(size=(1, 2, 1, 1)))

    def fn(t):
        s = BatchNormState(t["gamma"], t["beta"], np.zeros(2), np.ones(2))
        return batch_norm(t["x"], s)

    return fn, {"x": x, "gamma": gamma, "beta": beta}


def _relu_build(rng):
    v = rng.normal(size=(2, 3, 4, 4))
    return (lambda t: relu(t["x"])), {"x": _t(np.sign(v) * (np.abs(v) + 0.05))}


def _up_case(m):
    def build(rng):
        return (lambda t: upsample_nearest(t["x"], m)), {"x": _t(rng.normal(size=(1, 2, 3, 2)))}
    return build


def _down_case(m):
    def build(rng):
        return (lambda t: downsample_max(t["x"], m)), {"x": _t(_distinct(rng, (1, 2, 8, 8)))}
    return build


def _scan_case(d):
    def build(rng):
        return (lambda t: directional_max_scan(t["x"], d)), {"x": _t(_distinct(rng, (2, 2, 5, 6)))}
    return build


def _ba_case(mode):
    def build(rng):
        return (lambda t: ba_aggregate(t["x"], mode)), {"x": _t(_distinct(rng, (1, 2, 5, 6)))}
    return build


def _conv_block_build(rng):
    x = _t(rng.normal(size=(1, 4, 6, 6)))
    bn = BatchNormState.init(4)
    bn.gamma = _t(rng.uniform(0.5, 1.5, size=(1, 4, 1, 1)))
    bn.beta = _t(rng.normal(size=(1, 4, 1, 1)) * 0.3)
    w = ConvWeights(_t(rng.normal(size=(3, 4, 3, 3))), _t(rng.normal(size=(1, 3, 1, 1))))

    def fn(t):
        s = BatchNormState(t["gamma"], t["beta"], np.zeros(4), np.ones(4))
        return conv_block(t["x"], s, ConvWeights(t["weight"], w.bias))

    return fn, {"x": x, "gamma": bn.gamma, "beta": bn.beta, "weight": w.weight}


def _random_params(rng, levels, in_ch, width, bu_in=None, out_proj=False):
    def proj(i, o):
        return ConvWeights(_t(rng.normal(size=(o, i, 1, 1)) / np.sqrt(i), grad=False), _t(rng.normal(size=(1, o, 1, 1)) * 0.1, grad=False))
    top = [proj(in_ch, width) for _ in range(levels)]
    bottom = [proj(bu_in, width) for _ in range(levels)] if bu_in else None
    output = [proj(in_ch, width) for _ in range(levels)] if out_proj else None
    return LimParams(top, bottom, output)


def _pyramid_inputs(rng, levels, channels, size, scale=1.0):
    return {f"level{l}": _t(rng.normal(size=(1, channels, size >> l, size >> l)) * scale) for l in range(levels)}


def _levels(t, levels):
    return FeaturePyramid([t[f"level{l}"] for l in range(levels)])


def _top_down_build(rng):
    p = _random_params(rng, 3, 3, 2)
    return (lambda t: top_down_dense(_levels(t, 3), p)), _pyramid_inputs(rng, 3, 3, 8)


def _bottom_up_build(rng):
    p = _random_params(rng, 3, 3, 2, bu_in=8)
    return (lambda t: bottom_up_dense(_levels(t, 3), p)), _pyramid_inputs(rng, 3, 8, 8, scale=100.0)


def _residual_build(rng):
    p = _random_params(rng, 2, 3, 2, out_proj=True)
    ct = {f"ct{l}": _t(rng.normal(size=(1, 2, 4 >> l, 4 >> l))) for l in range(2)}
    inputs = {**ct, **_pyramid_inputs(rng, 2, 3, 4)}

    def fn(t):
        return residual_combine(FeaturePyramid([t["ct0"], t["ct1"]]), _levels(t, 2), p)

    return fn, inputs


def _lim_case(ablation, ba_mode="concat"):
    def build(rng):
        cfg = LimConfig(levels=2, width=4, ba_mode=ba_mode, ablation=ablation)
        p = _random_params(rng, 2, 3, 4, bu_in=cfg.bottom_up_in, out_proj=True)
        return (lambda t: lim_forward(_levels(t, 2), p, cfg)), _pyramid_inputs(rng, 2, 3, 8, scale=100.0)
    return build


def _loss_build(rng):
    cfg = DetectorConfig(resolution=32, levels=2, num_classes=3)
    boxes = []
    for _ in range(2):
        k = int(rng.integers(1, 4))
        xy = rng.uniform(0, 16, size=(k, 2))
        wh = rng.uniform(3, 14, size=(k, 2))
        boxes.append(np.column_stack([xy, xy + wh, rng.integers(0, 3, size=k)]))
    targets, _ = assign_targets(boxes, cfg)
    preds = {f"level{l}": _t(rng.normal(size=(2, 8, 8 >> l, 8 >> l)) * 1.5) for l in range(2)}
    return (lambda t: detection_loss([t["level0"], t["level1"]], targets, 3)), preds


def default_cases():
    cases = [
        GradCase("conv1x1", _conv_case(1)),
        GradCase("conv3x3", _conv_case(3)),
        GradCase("batch_norm", _bn_build),
        GradCase("relu", _relu_build),
        GradCase("upsample_nearest(m=1)", _up_case(1)),
        GradCase("upsample_nearest(m=2)", _up_case(2)),
        GradCase("downsample_max(m=1)", _down_case(1)),
        GradCase("downsample_max(m=2)", _down_case(2)),
    ]
    cases += [GradCase(f"scan[{d.value}]", _scan_case(d)) for d in ScanDirection]
    cases += [
        GradCase("ba_aggregate[concat]", _ba_case("concat")),
        GradCase("ba_aggregate[max-fuse]", _ba_case("max-fuse")),
        GradCase("conv_block", _conv_block_build),
        GradCase("top_down_dense", _top_down_build),
        GradCase("bottom_up_dense", _bottom_up_build),
        GradCase("residual_combine", _residual_build),
        GradCase("lim_forward[full]", _lim_case("full")),
        GradCase("lim_forward[full,max-fuse]", _lim_case("full", "max-fuse")),
        GradCase("lim_forward[bp]", _lim_case("bp")),
        GradCase("lim_forward[sp]", _lim_case("sp")),
        GradCase("detection_loss", _loss_build),
    ]
    return cases


def _probe(fn, weights):
    """Scalar sum over outputs of out * R; handles ops returning a pyramid."""
    def scalar(t):
        out = fn(t)
        outs = list(out) if isinstance(out, FeaturePyramid) else [out]
        total = None
        for o, w in zip(outs, weights(outs)):
            s = weighted_sum(o, w)
            total = s if total is None else total + s
        return total
    return scalar


def check_case(case: GradCase, instances: int = 20, seed: int = 0, eps: float = 1e-5, margin: float = 1e-3,
               max_attempts: int | None = None) -> CaseResult:
    max_attempts = max_attempts or instances * 10
    worst, done, excluded = 0.0, 0, 0
    base = zlib.crc32(case.name.encode())
    with precision("float64"):
        for attempt in range(max_attempts):
            if done == instances:
                break
            rng = np.random.default_rng([seed, base, attempt])
            fn, inputs = case.build(rng)
            cache = {}

            def weights(outs, rng=rng, cache=cache):
                if "R" not in cache:
                    cache["R"] = [rng.normal(size=o.shape) for o in outs]
                return cache["R"]

            probe = _probe(fn, weights)
            with kink_monitor() as margins:
                value = probe(inputs)
            if margins and min(margins) < margin:
                excluded += 1
                continue
            for t in inputs.values():
                t.grad = None
            value.backward()
            for key, x in inputs.items():
                if not x.requires_grad:
                    continue
                analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
                numeric = finite_diff_grad(lambda v, key=key: probe({**inputs, key: v}), x, eps)
                worst = max(worst, relative_error(analytic, numeric.data))
            done += 1
    return CaseResult(case.name, worst, done, excluded)


def run_suite(cases=None, instances: int = 20, seed: int = 0, report=None):
    results = []
    for case in cases if cases is not None else default_cases():
        res = check_case(case, instances, seed)
        results.append(res)
        if report is not None:
            report(res.line())
    return results
