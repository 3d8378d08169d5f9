"""Ground-truth assignment to pyramid cells."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DetectorConfig


@dataclass
class LevelTargets:
    stride: int
    objectness: np.ndarray  # (n, h, w) 0/1
    category: np.ndarray  # (n, h, w) int, -1 where empty
    offsets: np.ndarray  # (n, 4, h, w): cell-relative cx, cy, log(w/stride), log(h/stride)

    @property
    def positives(self):
        return self.objectness > 0


def pick_level(box_w: float, box_h: float, strides) -> int:
    """Largest stride not exceeding sqrt(box area), clamped to the available levels."""
    size = math.sqrt(box_w * box_h)
    level = 0
    for l, s in enumerate(strides):
        if s <= size:
            level = l
    return level


def assign_targets(boxes_per_image, cfg: DetectorConfig):
    """Build per-level targets for a batch.

    ``boxes_per_image`` holds one ``(k, 5)`` array per image with rows
    ``x1, y1, x2, y2, class_id``. Each box goes to the cell containing its
    centre at the level picked by :func:`pick_level`. When two boxes land on
    the same cell the larger one wins (ties broken by coordinates), so the
    result does not depend on annotation order. Returns ``(targets, skipped)``
    where ``skipped`` counts zero-area boxes.
    """
    n = len(boxes_per_image)
    strides = cfg.strides
    sizes = [cfg.resolution // s for s in strides]
    targets = [
        LevelTargets(s, np.zeros((n, g, g)), np.full((n, g, g), -1, dtype=np.int64), np.zeros((n, 4, g, g)))
        for s, g in zip(strides, sizes)
    ]
    skipped = 0
    for i, boxes in enumerate(boxes_per_image):
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
        claims = {}
        for x1, y1, x2, y2, cls in boxes:
            bw, bh = x2 - x1, y2 - y1
            if bw <= 0 or bh <= 0:
                skipped += 1
                continue
            l = pick_level(bw, bh, strides)
            s, g = strides[l], sizes[l]
            cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
            col = min(int(cx // s), g - 1)
            row = min(int(cy // s), g - 1)
            key = (l, row, col)
            rank = (bw * bh, x1, y1, x2, y2, cls)
            if key in claims and claims[key][0] >= rank:
                continue
            offs = (cx / s - col, cy / s - row, math.log(bw / s), math.log(bh / s))
            claims[key] = (rank, int(cls), offs)
        for (l, row, col), (_, cls, offs) in claims.items():
            t = targets[l]
            t.objectness[i, row, col] = 1.0
            t.category[i, row, col] = cls
            t.offsets[i, :, row, col] = offs
    return targets, skipped


def targets_to_predictions(targets, num_classes: int, confidence: float = 20.0):
    """Logit-space predictions that reproduce ``targets`` exactly (useful for round-trip checks)."""
    preds = []
    for t in targets:
        n, g, _ = t.objectness.shape
        p = np.zeros((n, 5 + num_classes, g, g))
        p[:, 0] = np.where(t.positives, confidence, -confidence)
        for k in range(num_classes):
            p[:, 1 + k] = np.where(t.category == k, confidence, -confidence)
        p[:, 1 + num_classes:] = t.offsets
        preds.append(p)
    return preds
