"""End-to-end acceptance checks, one per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line. Tolerances and
budgets are pinned here; the training criteria use the fixed optimiser
constants (lr 1e-4, momentum 0.9, weight decay 5e-4, batch 32) untouched.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from limkit import cli, synth
from limkit.bench import scan_bench
from limkit.boundary import ScanDirection, directional_max_scan, directional_max_scan_naive, scan_backward
from limkit.evaluation import (Annotation, BoundingBox, Detection, SizeClass, average_precision, classify_size, iou,
                               parse_annotation_file)
from limkit.gradcheck import TOLERANCE, run_suite
from limkit.lim import LimConfig, lim_forward
from limkit.pyramid import FeaturePyramid, LimParams, top_down_dense
from limkit.tensor import Tensor

pytestmark = pytest.mark.slow

ORACLE_TENSORS = 100
ORACLE_BUDGET_S = 10.0
GRADCHECK_INSTANCES = 20
GRADCHECK_BUDGET_S = 300.0
PROPERTY_TENSORS = 50
BENCH_SHAPE = (64, 256, 256)
MIN_SPEEDUP = 1.0
SEEDS = (1, 2, 3)
N_IMAGES = 625  # 500 train / 125 test
STEPS = 2000
MIN_MAP = 0.5
MAX_LOSS_RATIO = 0.5
NONINFERIORITY_MARGIN = 0.02
VARIANT_BUDGET_S = 15 * 60.0


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_criterion_1_scan_oracle(capsys):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    largest = (0, 0, 0, 0)
    for k in range(ORACLE_TENSORS):
        shape = (4, 8, 32, 32) if k == 0 else (int(rng.integers(1, 5)), int(rng.integers(1, 9)),
                                               int(rng.integers(1, 33)), int(rng.integers(1, 33)))
        largest = max(largest, shape, key=np.prod)
        x = Tensor(rng.integers(-50, 51, size=shape).astype(np.float64))
        for d in ScanDirection:
            if not np.array_equal(directional_max_scan(x, d).data, directional_max_scan_naive(x, d).data):
                mismatches += 1
    elapsed = time.perf_counter() - t0
    report(capsys, 1, mismatches == 0 and elapsed < ORACLE_BUDGET_S,
           f"{ORACLE_TENSORS} tensors x 4 directions, {mismatches} mismatches, largest {largest}, "
           f"{elapsed:.2f}s < {ORACLE_BUDGET_S:.0f}s")


def test_criterion_2_gradcheck(capsys):
    t0 = time.perf_counter()
    results = run_suite(instances=GRADCHECK_INSTANCES, seed=0)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_rel_err for r in results)
    with capsys.disabled():
        for r in results:
            print(f"\n  {r.line()}", end="")
    report(capsys, 2, not failed and elapsed < GRADCHECK_BUDGET_S,
           f"{len(results)} ops, {GRADCHECK_INSTANCES} instances each, worst rel err {worst:.2e} < {TOLERANCE:g}, "
           f"failed {failed or 'none'}, {elapsed:.1f}s < {GRADCHECK_BUDGET_S:.0f}s")


def test_criterion_3_shape_contract(capsys):
    rng = np.random.default_rng(3)
    checked, bad = 0, []
    for levels in (1, 2, 3):
        for ablation in ("sp", "bp", "full"):
            for ba_mode in ("concat", "max-fuse"):
                for _ in range(3):
                    n, c, side = int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(8 * rng.integers(1, 4))
                    width = int(rng.integers(1, 5))
                    f = FeaturePyramid([Tensor(rng.normal(size=(n, c, side >> l, side >> l))) for l in range(levels)])
                    cfg = LimConfig(levels=levels, width=width, ba_mode=ba_mode, ablation=ablation)
                    out = lim_forward(f, cfg.init_params([c] * levels, seed=int(rng.integers(1000))), cfg)
                    checked += 1
                    if [s[2:] for s in out.shapes] != [s[2:] for s in f.shapes]:
                        bad.append((levels, ablation, ba_mode, side))
    report(capsys, 3, not bad, f"{checked} random pyramids, L in 1..3, 3 ablations x 2 BA modes, violations {bad or 0}")


def test_criterion_4_scan_properties(capsys):
    rng = np.random.default_rng(4)
    violations = {"dominance": 0, "monotonicity": 0, "idempotence": 0, "mass": 0}
    for _ in range(PROPERTY_TENSORS):
        shape = tuple(int(v) for v in rng.integers(1, 9, size=4))
        a = rng.integers(-20, 21, size=shape).astype(np.float64)
        up = rng.integers(-5, 6, size=shape).astype(np.float64)
        x = Tensor(a)
        for d in ScanDirection:
            b = directional_max_scan(x, d).data
            violations["dominance"] += int(not (b >= a).all())
            axis = -1 if d.horizontal else -2
            step = np.diff(b, axis=axis)
            # values never decrease moving away from the scan start
            forward = d in (ScanDirection.FROM_LEFT, ScanDirection.FROM_TOP)
            violations["monotonicity"] += int(not ((step >= 0) if forward else (step <= 0)).all())
            violations["idempotence"] += int(not np.array_equal(directional_max_scan(Tensor(b), d).data, b))
            violations["mass"] += int(scan_backward(x, d, up).data.sum() != up.sum())
    report(capsys, 4, not any(violations.values()),
           f"{PROPERTY_TENSORS} tensors x 4 directions, violations {violations}")


def test_criterion_5_dense_hand_case(capsys):
    maps = [np.zeros((1, 1, 4 >> l, 4 >> l)) for l in range(3)]
    maps[2][:] = 1.0
    a = top_down_dense(FeaturePyramid([Tensor(m) for m in maps]), LimParams.identity(3, 1))
    ok = (np.array_equal(a[0].data, np.full((1, 1, 4, 4), 2.0)) and np.array_equal(a[1].data, np.ones((1, 1, 2, 2)))
          and np.array_equal(a[2].data, np.ones((1, 1, 1, 1))))
    report(capsys, 5, ok, f"L=3 unit source at the top: A1 entries {np.unique(a[0].data).tolist()} (expect [2.0]), "
                          f"A2 {np.unique(a[1].data).tolist()}, A3 {np.unique(a[2].data).tolist()}")


def test_criterion_6_evaluation_fixtures(capsys):
    b = lambda *v: BoundingBox(*map(float, v))  # noqa: E731
    g = [Annotation("i", "a", b(0, 0, 10, 10))]
    checks = {
        "iou 1/3": iou(b(0, 0, 10, 10), b(5, 0, 15, 10)) == 1 / 3,
        "ap miss-then-hit 0.5": average_precision(
            [Detection("i", "a", 0.9, b(50, 50, 60, 60)), Detection("i", "a", 0.8, b(0, 0, 10, 10))], g) == 0.5,
        "ap perfect 1.0": average_precision([Detection("i", "a", 0.9, b(0, 0, 10, 12))], g) == 1.0,
        "small 0.0009": classify_size(b(0, 0, 30, 30), 1000, 1000) is SizeClass.SMALL,
        "medium 0.0015": classify_size(b(0, 0, 1500, 1), 1000, 1000) is SizeClass.MEDIUM,
        "large 0.003": classify_size(b(0, 0, 3000, 1), 1000, 1000) is SizeClass.LARGE,
        "boundary 0.001 medium": classify_size(b(0, 0, 1000, 1), 1000, 1000) is SizeClass.MEDIUM,
        "boundary 0.002 medium": classify_size(b(0, 0, 2000, 1), 1000, 1000) is SizeClass.MEDIUM,
    }
    failed = [k for k, v in checks.items() if not v]
    report(capsys, 6, not failed, f"{len(checks)} exact fixtures, failed {failed or 'none'}")


def test_criterion_7_scan_bench(capsys):
    rep = scan_bench(*BENCH_SHAPE, repeats=5)
    with capsys.disabled():
        for line in rep.lines():
            print(f"\n  {line}", end="")
    report(capsys, 7, rep.equal and rep.speedup >= MIN_SPEEDUP,
           f"equality gate {'PASS' if rep.equal else 'FAIL'}, row-wise / column loop = {rep.speedup:.2f}x >= "
           f"{MIN_SPEEDUP:.1f}x on {'x'.join(map(str, BENCH_SHAPE))}, backend {rep.backend}")


def _read_run(run_dir: Path):
    metrics = dict(line.split(" = ", 1) for line in (run_dir / "metrics.txt").read_text().splitlines())
    losses = (run_dir / "loss.txt").read_text() if (run_dir / "loss.txt").exists() else ""
    return metrics, losses


def _train_eval(out: Path, variant: str, seeds):
    t0 = time.perf_counter()
    code = cli.main(["train-eval", "--generate", "--variants", variant, "--seeds", ",".join(map(str, seeds)),
                     "--steps", str(STEPS), "--n-images", str(N_IMAGES), "--out", str(out)])
    elapsed = time.perf_counter() - t0
    return code, elapsed, {s: _read_run(out / variant / f"seed{s}") for s in seeds}


@pytest.fixture(scope="module")
def training_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("train-eval")
    return {v: _train_eval(root, v, SEEDS) for v in ("baseline", "full")}


def test_criterion_8_training(training_runs, capsys):
    problems, parts, means = [], [], {}
    for variant, (code, elapsed, runs) in training_runs.items():
        if code != 0:
            problems.append(f"{variant} exit {code}")
        if elapsed >= VARIANT_BUDGET_S:
            problems.append(f"{variant} took {elapsed:.0f}s")
        maps = []
        for seed, (m, _) in runs.items():
            if m.get("status") != "OK":
                problems.append(f"{variant} seed {seed} {m.get('status')}")
                continue
            mAP, first, last = float(m["mAP"]), float(m["initial_loss"]), float(m["final_loss"])
            maps.append(mAP)
            if mAP < MIN_MAP:
                problems.append(f"{variant} seed {seed} mAP {mAP:.4f} < {MIN_MAP}")
            if not last < MAX_LOSS_RATIO * first:
                problems.append(f"{variant} seed {seed} loss {first:.3f} -> {last:.3f}")
            parts.append(f"{variant}/s{seed} mAP {mAP:.4f} loss {first:.2f}->{last:.3f}")
        means[variant] = sum(maps) / len(maps) if len(maps) == len(runs) else float("nan")
        parts.append(f"{variant} {elapsed / 60:.1f} min")
    delta = means["full"] - means["baseline"]
    if not delta >= -NONINFERIORITY_MARGIN:
        problems.append(f"full - baseline = {delta:+.4f} < -{NONINFERIORITY_MARGIN}")
    with capsys.disabled():
        for p in parts:
            print(f"\n  {p}", end="")
    report(capsys, 8, not problems,
           f"mean mAP baseline {means['baseline']:.4f}, full {means['full']:.4f}, delta {delta:+.4f} "
           f">= -{NONINFERIORITY_MARGIN}; problems {problems or 'none'}")


def test_criterion_9_determinism(training_runs, tmp_path, capsys):
    diffs = []
    for variant, (_, _, runs) in training_runs.items():
        _, _, again = _train_eval(tmp_path, variant, (1,))
        (m1, l1), (m2, l2) = runs[1], again[1]
        if not l1 or l1 != l2:
            diffs.append(f"{variant} loss trace")
        if m1.get("mAP") is None or m1.get("mAP") != m2.get("mAP"):
            diffs.append(f"{variant} mAP {m1.get('mAP')} vs {m2.get('mAP')}")
    report(capsys, 9, not diffs, f"seed 1 rerun of both variants, {STEPS}-step loss traces and mAP compared bitwise; "
                                 f"differences {diffs or 'none'}")


def test_criterion_10_stats_split_roundtrip(tmp_path, capsys):
    root = tmp_path / "data"
    n, seed = 60, 11
    # item sizes chosen so all three size classes occur at 128x128
    assert cli.main(["gen-data", "--n", str(n), "--out", str(root), "--seed", str(seed),
                     "--min-size", "4", "--max-size", "12"]) == 0
    truth = [len(synth.generate_scene(synth.SceneSpec(seed=seed + i, min_size=4, max_size=12)).boxes)
             for i in range(n)]
    capsys.readouterr()
    code = cli.main(["stats", str(root), "--format", "keyvalue"])
    kv = dict(line.split(" = ") for line in capsys.readouterr().out.splitlines())
    hist = {int(k.split(".")[1]): int(v) for k, v in kv.items() if k.startswith("histogram.")}
    stats_ok = (code == 0 and int(kv["instances"]) == sum(truth) and int(kv["images"]) == n
                and hist == {k: truth.count(k) for k in set(truth)})

    assert cli.main(["split", str(root), "--out", str(tmp_path / "split")]) == 0
    capsys.readouterr()
    original = []
    for f in sorted((root / "annotations").glob("*.txt")):
        original += parse_annotation_file(f)[0]
    parts = [parse_annotation_file(tmp_path / "split" / f"{s.value}.txt")[0] for s in SizeClass]
    union = sorted((a for p in parts for a in p), key=repr)
    split_ok = union == sorted(original, key=repr) and sum(map(len, parts)) == len(original)
    report(capsys, 10, stats_ok and split_ok,
           f"{n} images, generator instances {sum(truth)} vs reported {kv.get('instances')}; "
           f"split sizes {[len(p) for p in parts]} partition {len(original)} annotations: {split_ok}")
