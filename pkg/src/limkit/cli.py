"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import synth
from .evaluation import (SizeClass, dataset_stats, evaluate_detections, parse_annotation_file, parse_detection_file,
                         split_by_size, write_annotation_file)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("limkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- gradcheck

def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(instances=args.instances, seed=args.seed, report=print)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradcheck FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"gradcheck: all {len(results)} ops passed")
    return EXIT_OK


# --------------------------------------------------------------------------- scan-bench

def cmd_scan_bench(args) -> int:
    from .bench import scan_bench

    report = scan_bench(args.channels, args.height, args.width, args.repeats, args.backend, args.seed)
    for line in report.lines():
        print(line)
    if not report.equal:
        print("scan-bench aborted: column-loop and row-wise outputs differ", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------- gen-data

def cmd_gen_data(args) -> int:
    entries = synth.write_dataset(args.n, args.out, args.seed, height=args.resolution, width=args.resolution,
                                  max_instances=args.max_instances, min_size=args.min_size, max_size=args.max_size)
    n_train = sum(e.split == "train" for e in entries)
    print(f"wrote {len(entries)} images ({n_train} train, {len(entries) - n_train} test), "
          f"{sum(e.instances for e in entries)} instances to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- train-eval

TRAIN_EVAL_KEYS = {
    "data": str, "generate": int, "n_images": int, "data_seed": int, "max_instances": int, "min_size": int,
    "max_size": int, "resolution": int, "levels": int, "width": int, "ba_mode": str, "init_gain": float,
    "head_gain": float, "lr": float, "momentum": float, "weight_decay": float, "batch_size": int, "steps": int,
    "seeds": str, "variants": str, "eval_every": int, "out": str,
}


def _train_eval_settings(args):
    from .detector.config import read_key_values
    from .detector.train import EASY_DATA

    settings = {"generate": 0, "n_images": 625, "data_seed": 0, "resolution": 64, "seeds": "1", "variants": "baseline,full",
                "eval_every": 0, "steps": 2000, "out": "train-eval-out", **EASY_DATA}
    if args.config:
        try:
            raw = read_key_values(args.config, set(TRAIN_EVAL_KEYS))
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from exc
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        settings.update(raw)
    for key in TRAIN_EVAL_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    out = {}
    for key, value in settings.items():
        try:
            out[key] = TRAIN_EVAL_KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"config key {key!r}: cannot parse {value!r}") from exc
    return out


def _write_metrics(path: Path, rows):
    path.write_text("".join(f"{k} = {v}\n" for k, v in rows))


def comparison_table(results, seeds) -> str:
    """Variants as rows, per-seed mAP columns, mean, and signed delta against the baseline mean."""
    header = ["variant", *[f"seed {s}" for s in seeds], "mean mAP", "delta"]
    base = results.get("baseline")
    base_mean = base["mean"] if base and base["mean"] is not None else None
    rows = [header]
    for variant, res in results.items():
        cells = [variant]
        for s in seeds:
            m = res["per_seed"].get(s)
            cells.append("FAILED" if m is None else f"{m:.4f}")
        mean = res["mean"]
        cells.append("FAILED" if mean is None else f"{mean:.4f}")
        if variant == "baseline" or base_mean is None or mean is None:
            cells.append("-")
        else:
            cells.append(f"{mean - base_mean:+.4f}")
        rows.append(cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                     for r in rows) + "\n"


def cmd_train_eval(args) -> int:
    from .detector.config import VARIANTS, DetectorConfig, TrainConfig, config_to_text
    from .detector.train import TrainingDiverged, dataset_from_directory, evaluate_model, synthetic_splits, train

    st = _train_eval_settings(args)
    variants = [v.strip() for v in st["variants"].split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad or not variants:
        raise UsageError(f"unknown variant(s) {bad}; choose from {', '.join(VARIANTS)}")
    try:
        seeds = [int(s) for s in st["seeds"].split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"seeds must be a comma-separated list of integers, got {st['seeds']!r}") from exc

    if st.get("data") and not st["generate"]:
        try:
            train_set, test_set = dataset_from_directory(st["data"])
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot load dataset {st['data']}: {exc}") from exc
        resolution = int(train_set.images.shape[-1])
    elif st["generate"]:
        resolution = st["resolution"]
        train_set, test_set = synthetic_splits(st["n_images"], st["data_seed"], resolution=resolution,
                                               max_instances=st["max_instances"], min_size=st["min_size"],
                                               max_size=st["max_size"])
    else:
        raise UsageError("train-eval needs --data DIR or --generate")

    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    model_keys = {k: st[k] for k in ("levels", "width", "ba_mode", "init_gain", "head_gain") if k in st}
    train_keys = {k: st[k] for k in ("lr", "momentum", "weight_decay", "batch_size", "steps") if k in st}
    results = {}
    any_failed = False
    for variant in variants:
        per_seed = {}
        for seed in seeds:
            try:
                dc = DetectorConfig(resolution=resolution, variant=variant, seed=seed, **model_keys)
                tc = TrainConfig(seed=seed, **train_keys)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"invalid configuration: {exc}") from exc
            run_dir = out / variant / f"seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "config.txt").write_text(config_to_text(dc, tc))
            try:
                res = train(train_set, dc, tc, eval_set=test_set if st["eval_every"] else None,
                            eval_every=st["eval_every"])
            except TrainingDiverged as exc:
                any_failed = True
                log.error("%s seed %d FAILED: %s", variant, seed, exc)
                _write_metrics(run_dir / "metrics.txt", [("variant", variant), ("seed", seed), ("status", "FAILED"),
                                                         ("error", str(exc))])
                per_seed[seed] = None
                continue
            report = evaluate_model(res.model, test_set)
            (run_dir / "loss.txt").write_text("".join(f"{i} {v!r}\n" for i, v in enumerate(res.losses, start=1)))
            rows = [("variant", variant), ("seed", seed), ("status", "OK"), ("steps", len(res.losses)),
                    ("initial_loss", repr(res.losses[0])), ("final_loss", repr(res.losses[-1]))]
            rows += [(line.split(" = ")[0], line.split(" = ")[1]) for line in report.lines()]
            rows += [(f"eval.step{s}", f"{m:.6f}") for s, m in res.evals]
            _write_metrics(run_dir / "metrics.txt", rows)
            per_seed[seed] = report.mAP
            print(f"{variant} seed {seed}: mAP {report.mAP:.4f}, loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}")
        ok = [m for m in per_seed.values() if m is not None]
        results[variant] = {"per_seed": per_seed, "mean": sum(ok) / len(ok) if len(ok) == len(per_seed) else None}
    table = comparison_table(results, seeds)
    (out / "comparison.txt").write_text(table)
    print(table, end="")
    return EXIT_FAIL if any_failed else EXIT_OK


# --------------------------------------------------------------------------- stats / split / eval

def _load_annotations(path, categories=None):
    """Annotations from a file, a directory of ``*.txt`` files, or a dataset root with ``annotations/``."""
    path = Path(path)
    if path.is_dir() and (path / "annotations").is_dir():
        path = path / "annotations"
    files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
    if not files or not all(f.exists() for f in files):
        raise UsageError(f"no annotation files at {path}")
    anns, errors = [], []
    for f in files:
        a, e = parse_annotation_file(f, categories)
        anns += a
        errors += e
    for e in errors:
        print(f"warning: {e}", file=sys.stderr)
    return anns


def _image_info(args):
    """(image ids or None, dims) from --manifest/--images/--image-size."""
    root = Path(args.annotations)
    if args.image_size:
        try:
            w, h = (int(v) for v in args.image_size.lower().split("x"))
        except ValueError as exc:
            raise UsageError(f"--image-size must look like WIDTHxHEIGHT, got {args.image_size!r}") from exc
        return None, (w, h)
    if (root / "manifest.txt").exists():
        entries = synth.read_manifest(root / "manifest.txt")
        dims = {e.image_id: synth.ppm_size(root / "images" / e.filename) for e in entries}
        return [e.image_id for e in entries], dims
    return None, None


def cmd_stats(args) -> int:
    anns = _load_annotations(args.annotations)
    ids, dims = _image_info(args)
    st = dataset_stats(anns, ids, dims)
    print(st.table() if args.format == "table" else "\n".join(st.key_values()))
    return EXIT_OK


def cmd_split(args) -> int:
    anns = _load_annotations(args.annotations)
    _, dims = _image_info(args)
    if dims is None:
        raise UsageError("split needs image sizes: pass --image-size WxH or a dataset root with manifest.txt")
    try:
        parts = split_by_size(anns, dims)
    except KeyError as exc:
        raise UsageError(f"no image size for image {exc.args[0]!r}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for size in SizeClass:
        write_annotation_file(out / f"{size.value}.txt", parts[size])
        print(f"{size.value} = {len(parts[size])}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gts = _load_annotations(args.annotations)
    dets, errors = parse_detection_file(args.detections)
    for e in errors:
        print(f"warning: {e}", file=sys.stderr)
    categories = args.categories.split(",") if args.categories else None
    report = evaluate_detections(dets, gts, categories, args.iou)
    print("\n".join(report.lines()))
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="limkit", description="Lateral-inhibition feature pyramids: verification, data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    g.add_argument("--instances", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("scan-bench", help="column-loop vs row-wise vertical scan throughput")
    b.add_argument("--channels", type=int, default=64)
    b.add_argument("--height", type=int, default=256)
    b.add_argument("--width", type=int, default=256)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--backend", choices=("numba", "numpy"), default=None)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_scan_bench)

    d = sub.add_parser("gen-data", help="write a synthetic X-ray style dataset")
    d.add_argument("--n", type=int, default=625)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--resolution", type=int, default=128)
    d.add_argument("--max-instances", type=int, default=10)
    d.add_argument("--min-size", type=int, default=14)
    d.add_argument("--max-size", type=int, default=44)
    d.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-eval", help="train detector variants and compare mAP@0.5")
    t.add_argument("--config", help="flat key = value file")
    t.add_argument("--data", help="dataset directory written by gen-data")
    t.add_argument("--generate", action="store_const", const=1, default=None, help="generate data in memory")
    t.add_argument("--variants")
    t.add_argument("--seeds")
    t.add_argument("--steps", type=int)
    t.add_argument("--n-images", dest="n_images", type=int)
    t.add_argument("--data-seed", dest="data_seed", type=int)
    t.add_argument("--resolution", type=int)
    t.add_argument("--eval-every", dest="eval_every", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train_eval)

    for name, func, help_ in (("stats", cmd_stats, "dataset statistics report"),
                              ("split", cmd_split, "write small/medium/large annotation files")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("annotations", help="annotation file, directory of files, or dataset root")
        s.add_argument("--image-size", help="WIDTHxHEIGHT for every image")
        if name == "stats":
            s.add_argument("--format", choices=("table", "keyvalue"), default="table")
        else:
            s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    e = sub.add_parser("eval", help="score a detections file against annotations")
    e.add_argument("--detections", required=True)
    e.add_argument("--annotations", required=True)
    e.add_argument("--categories", help="comma-separated; default: categories in the annotations")
    e.add_argument("--iou", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
