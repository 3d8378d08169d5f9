"""Turn per-cell predictions into scored boxes and run greedy per-class NMS."""

from __future__ import annotations

import numpy as np

from ..evaluation import BoundingBox, Detection, iou_matrix
from ..tensor import Tensor


def nms(boxes, scores, iou_thresh: float = 0.5, order_key=None):
    """Greedy NMS; returns kept indices, best first.

    Candidates are visited by descending score, ties by ``order_key`` (default:
    input index). A candidate is suppressed when its IoU with an already kept
    box is >= ``iou_thresh``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    key = np.arange(len(scores)) if order_key is None else np.asarray(order_key)
    order = np.lexsort((key, -scores))
    keep = []
    alive = np.ones(len(order), dtype=bool)
    ious = iou_matrix(boxes[order], boxes[order]) if len(order) else None
    for a in range(len(order)):
        if not alive[a]:
            continue
        keep.append(int(order[a]))
        alive[a + 1:] &= ious[a, a + 1:] < iou_thresh
    return keep


def decode_level(pred, stride: int, num_classes: int, image_size: int):
    """All cells of one level for one image -> (boxes (m, 4), scores, classes, cell indices)."""
    obj = 1.0 / (1.0 + np.exp(-pred[0].astype(np.float64)))
    logits = pred[1:1 + num_classes].astype(np.float64)
    probs = np.exp(logits - logits.max(axis=0))
    probs /= probs.sum(axis=0)
    cls = probs.argmax(axis=0)
    score = obj * probs.max(axis=0)
    g = pred.shape[-1]
    rows, cols = np.mgrid[0:g, 0:g]
    off = pred[1 + num_classes:].astype(np.float64)
    cx = (cols + off[0]) * stride
    cy = (rows + off[1]) * stride
    bw = np.exp(np.clip(off[2], -8, 8)) * stride
    bh = np.exp(np.clip(off[3], -8, 8)) * stride
    boxes = np.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], axis=-1).reshape(-1, 4)
    boxes = np.clip(boxes, 0, image_size)
    return boxes, score.reshape(-1), cls.reshape(-1)


def decode_and_nms(preds, strides, num_classes: int, image_size: int, score_thresh: float = 0.05,
                   iou_thresh: float = 0.5, max_candidates: int = 200, image_ids=None, class_names=None):
    """Decode a batch of per-level predictions into one Detection list per image."""
    arrays = [p.data if isinstance(p, Tensor) else np.asarray(p) for p in preds]
    n = arrays[0].shape[0]
    results = []
    for i in range(n):
        boxes, scores, classes, cells = [], [], [], []
        base = 0
        for p, s in zip(arrays, strides):
            b, sc, c = decode_level(p[i], s, num_classes, image_size)
            boxes.append(b)
            scores.append(sc)
            classes.append(c)
            cells.append(base + np.arange(len(sc)))
            base += len(sc)
        boxes, scores = np.concatenate(boxes), np.concatenate(scores)
        classes, cells = np.concatenate(classes), np.concatenate(cells)
        valid = (scores > score_thresh) & (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        idx = np.nonzero(valid)[0]
        idx = idx[np.lexsort((cells[idx], -scores[idx]))][:max_candidates]
        image_id = image_ids[i] if image_ids is not None else str(i)
        dets = []
        for k in np.unique(classes[idx]):
            sel = idx[classes[idx] == k]
            for j in nms(boxes[sel], scores[sel], iou_thresh, cells[sel]):
                m = sel[j]
                name = class_names[k] if class_names is not None else int(k)
                dets.append((scores[m], cells[m], Detection(image_id, name, float(scores[m]), BoundingBox(*boxes[m]))))
        dets.sort(key=lambda t: (-t[0], t[1]))
        results.append([d for _, _, d in dets])
    return results
