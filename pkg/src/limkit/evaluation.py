"""Annotation files, IoU, VOC-style AP / mAP, size classes and dataset statistics.

Annotation lines are ``image_name category x1 y1 x2 y2``; detection lines add
a score after the category: ``image_name category score x1 y1 x2 y2``.
"""

from __future__ import annotations

import enum
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ValueError(f"non-finite box coordinates {self}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"invalid box: need x1 < x2 and y1 < y2, got {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Annotation:
    image_id: str
    category: str
    box: BoundingBox


@dataclass(frozen=True)
class Detection:
    image_id: str
    category: str
    score: float
    box: BoundingBox

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite detection score {self.score}")


@dataclass(frozen=True)
class ParseError:
    path: str
    line: int
    message: str

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU of (n, 4) and (m, 4) arrays in x1, y1, x2, y2 order."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1), 0.0)


def _parse_lines(path, with_score, categories):
    items, errors = [], []
    path = Path(path)
    expected = 7 if with_score else 6
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != expected:
            errors.append(ParseError(str(path), lineno, f"expected {expected} fields, found {len(parts)}"))
            continue
        image_id, category = parts[0], parts[1]
        if categories is not None and category not in categories:
            errors.append(ParseError(str(path), lineno, f"unknown category {category!r}"))
            continue
        try:
            nums = [float(v) for v in parts[2:]]
        except ValueError:
            errors.append(ParseError(str(path), lineno, "unparseable number"))
            continue
        score = None
        if with_score:
            score, nums = nums[0], nums[1:]
        try:
            box = BoundingBox(*nums)
        except ValueError as exc:
            errors.append(ParseError(str(path), lineno, str(exc)))
            continue
        if with_score:
            if not math.isfinite(score):
                errors.append(ParseError(str(path), lineno, "non-finite score"))
                continue
            items.append(Detection(image_id, category, score, box))
        else:
            items.append(Annotation(image_id, category, box))
    return items, errors


def parse_annotation_file(path, categories=None):
    """Parse an annotation file; returns ``(annotations, errors)``.

    Malformed lines are reported with their line number and skipped; the rest
    of the file is still parsed.
    """
    return _parse_lines(path, False, categories)


def parse_detection_file(path, categories=None):
    return _parse_lines(path, True, categories)


def format_annotation(a: Annotation) -> str:
    b = a.box
    return f"{a.image_id} {a.category} {_num(b.x1)} {_num(b.y1)} {_num(b.x2)} {_num(b.y2)}"


def format_detection(d: Detection) -> str:
    b = d.box
    return f"{d.image_id} {d.category} {d.score:.6f} {_num(b.x1)} {_num(b.y1)} {_num(b.x2)} {_num(b.y2)}"


def _num(v):
    return str(int(v)) if float(v).is_integer() else f"{v:.3f}"


def write_annotation_file(path, annotations) -> None:
    Path(path).write_text("".join(format_annotation(a) + "\n" for a in annotations))


def average_precision(dets, gts, iou_thresh: float = 0.5, return_flag: bool = False):
    """All-points interpolated AP for one category.

    Detections are ranked by descending score (stable, so ties keep input
    order); each claims the unmatched ground truth of highest IoU in the same
    image if that IoU reaches ``iou_thresh``. With no ground truths the AP is
    0 and, with ``return_flag=True``, the flag is set.
    """
    gts = list(gts)
    dets = list(dets)
    no_gt = len(gts) == 0
    if no_gt or not dets:
        if no_gt and dets:
            warnings.warn("average_precision: detections but no ground truth; AP defined as 0", stacklevel=2)
        return (0.0, no_gt) if return_flag else 0.0

    by_image = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append(g)
    gt_boxes = {k: np.array([g.box.as_tuple() for g in v]) for k, v in by_image.items()}
    used = {k: np.zeros(len(v), dtype=bool) for k, v in by_image.items()}

    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    tp = np.zeros(len(dets))
    for rank, i in enumerate(order):
        d = dets[i]
        if d.image_id not in gt_boxes:
            continue
        ious = iou_matrix([d.box.as_tuple()], gt_boxes[d.image_id])[0]
        ious[used[d.image_id]] = -1.0
        j = int(np.argmax(ious))
        if ious[j] >= iou_thresh:
            used[d.image_id][j] = True
            tp[rank] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / len(gts)
    prec = ctp / np.arange(1, len(dets) + 1)
    ap = _all_points_ap(recall, prec)
    return (ap, False) if return_flag else ap


def _all_points_ap(recall, precision) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(per_category) -> float:
    """Unweighted mean over categories; accepts a mapping or a sequence of APs."""
    values = list(per_category.values()) if isinstance(per_category, dict) else list(per_category)
    if not values:
        raise ValueError("mean_ap needs at least one category")
    return float(sum(values) / len(values))


@dataclass
class EvalReport:
    ap: dict
    mAP: float
    no_ground_truth: list = field(default_factory=list)

    def lines(self):
        out = [f"ap.{k} = {v:.6f}" for k, v in self.ap.items()]
        out.append(f"mAP = {self.mAP:.6f}")
        if self.no_ground_truth:
            out.append(f"no_ground_truth = {','.join(self.no_ground_truth)}")
        return out


def evaluate_detections(dets, gts, categories=None, iou_thresh: float = 0.5) -> EvalReport:
    """Per-category AP and mAP; ``categories`` defaults to those present in the ground truth."""
    dets, gts = list(dets), list(gts)
    if categories is None:
        categories = sorted({g.category for g in gts})
    aps, flagged = {}, []
    for cat in categories:
        cd = [d for d in dets if d.category == cat]
        cg = [g for g in gts if g.category == cat]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ap, no_gt = average_precision(cd, cg, iou_thresh, return_flag=True)
        aps[cat] = ap
        if no_gt:
            flagged.append(cat)
    return EvalReport(aps, mean_ap(aps) if aps else 0.0, flagged)


class SizeClass(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


SMALL_RATIO = 0.001
LARGE_RATIO = 0.002


def classify_size(box: BoundingBox, image_width: float, image_height: float) -> SizeClass:
    """Small below 0.1% of the image area, large above 0.2%, medium otherwise (boundaries are medium)."""
    image_area = image_width * image_height
    if image_area <= 0:
        raise ValueError(f"invalid image dims {image_width}x{image_height}")
    # cross-multiplied so integer boxes hit the boundaries exactly
    if box.area * 1000 < image_area:
        return SizeClass.SMALL
    if box.area * 500 > image_area:
        return SizeClass.LARGE
    return SizeClass.MEDIUM


def split_by_size(annotations, image_dims):
    """Partition annotations into {SizeClass: [Annotation]}.

    ``image_dims`` is a ``(width, height)`` pair or a mapping image_id -> pair.
    """
    out = {s: [] for s in SizeClass}
    for a in annotations:
        w, h = image_dims[a.image_id] if isinstance(image_dims, dict) else image_dims
        out[classify_size(a.box, w, h)].append(a)
    return out


@dataclass
class DatasetStats:
    category_counts: dict
    instances_per_image: dict
    image_count: int
    instance_count: int
    mean_instances: float | None
    size_counts: dict | None

    def table(self) -> str:
        """Aligned human-readable report."""
        rows = []
        if self.size_counts is not None:
            rows.append(("category", "total", "large", "medium", "small"))
            for cat, n in self.category_counts.items():
                sc = self.size_counts.get(cat, {})
                rows.append((cat, str(n), *(str(sc.get(s.value, 0)) for s in (SizeClass.LARGE, SizeClass.MEDIUM, SizeClass.SMALL))))
        else:
            rows.append(("category", "total"))
            rows.extend((cat, str(n)) for cat, n in self.category_counts.items())
        rows.append(("TOTAL", str(self.instance_count), *([""] * (len(rows[0]) - 2))))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        text = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip() for r in rows]
        text.append("")
        text.append("instances/image  " + "  ".join(f"{k}:{v}" for k, v in sorted(self.instances_per_image.items())))
        mean = "undefined" if self.mean_instances is None else f"{self.mean_instances:.2f}"
        text.append(f"images {self.image_count}  mean instances/image {mean}")
        ref = BENCHMARK_SCALE_REFERENCE
        text.append(f"(real-data scale for comparison: {ref['instances']} instances, {ref['images']} images, "
                    f"mean {ref['mean_instances_per_image']})")
        return "\n".join(text)

    def key_values(self) -> list:
        out = [f"images = {self.image_count}", f"instances = {self.instance_count}"]
        out.append("mean_instances_per_image = " + ("undefined" if self.mean_instances is None else f"{self.mean_instances:.6f}"))
        out += [f"category.{k} = {v}" for k, v in self.category_counts.items()]
        out += [f"histogram.{k} = {v}" for k, v in sorted(self.instances_per_image.items())]
        if self.size_counts is not None:
            for cat, sc in self.size_counts.items():
                out += [f"size.{cat}.{s} = {n}" for s, n in sc.items()]
        return out


def dataset_stats(annotations, image_ids=None, image_dims=None) -> DatasetStats:
    """Category counts, instances-per-image histogram, mean, and size classes.

    ``image_ids`` lists every image (including ones without annotations); by
    default only images that appear in the annotations are counted.
    """
    annotations = list(annotations)
    cats = Counter(a.category for a in annotations)
    per_image = Counter(a.image_id for a in annotations)
    images = list(image_ids) if image_ids is not None else list(per_image)
    hist = Counter(per_image.get(i, 0) for i in images)
    mean = (len(annotations) / len(images)) if images else None
    sizes = None
    if image_dims is not None:
        sizes = {cat: {s.value: 0 for s in SizeClass} for cat in sorted(cats)}
        for s, items in split_by_size(annotations, image_dims).items():
            for a in items:
                sizes[a.category][s.value] += 1
    return DatasetStats(dict(sorted(cats.items())), dict(sorted(hist.items())), len(images), len(annotations), mean, sizes)


# Reference figures for the real X-ray benchmark, shown in reports for scale only.
BENCHMARK_SCALE_REFERENCE = {"instances": 102_928, "images": 45_364, "mean_instances_per_image": 2.27}
