"""Training loop, evaluation, and in-memory datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import synth
from ..evaluation import Annotation, evaluate_detections
from ..tensor import Tensor, precision
from .config import DetectorConfig, TrainConfig
from .decode import decode_and_nms
from .loss import detection_loss
from .model import Detector
from .optim import SGD
from .targets import assign_targets

log = logging.getLogger(__name__)

# Scene settings for 64x64 desk-scale runs: items whose sqrt(area) mostly falls in the stride-8 band.
EASY_DATA = {"max_instances": 4, "min_size": 10, "max_size": 24}


class TrainingDiverged(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


@dataclass
class DetectionDataset:
    images: np.ndarray  # (n, 3, H, W) float32 in [0, 1]
    boxes: list  # per image: (k, 5) x1, y1, x2, y2, class id
    image_ids: list
    class_names: tuple = synth.SHAPE_KINDS

    def __len__(self):
        return len(self.image_ids)

    def annotations(self):
        out = []
        for image_id, boxes in zip(self.image_ids, self.boxes):
            for x1, y1, x2, y2, c in boxes:
                out.append(Annotation(image_id, self.class_names[int(c)], synth.BoundingBox(x1, y1, x2, y2)))
        return out

    def subset(self, idx):
        idx = list(idx)
        return DetectionDataset(self.images[idx], [self.boxes[i] for i in idx], [self.image_ids[i] for i in idx], self.class_names)


def _boxes_array(annotations, class_names):
    rows = [(*a.box.as_tuple(), class_names.index(a.category)) for a in annotations]
    return np.array(rows, dtype=np.float64).reshape(-1, 5)


def synthetic_splits(n: int, base_seed: int = 0, resolution: int = 128, **spec_kwargs):
    """Generate ``n`` scenes in memory and split them 4:1 by index, exactly as ``write_dataset`` does."""
    images, boxes, ids, tags = [], [], [], []
    for i in range(n):
        scene = synth.generate_scene(synth.SceneSpec(height=resolution, width=resolution, seed=base_seed + i, **spec_kwargs))
        image_id = f"{i:06d}"
        images.append(scene.to_array())
        boxes.append(_boxes_array(scene.annotations(image_id), synth.SHAPE_KINDS))
        ids.append(image_id)
        tags.append(synth.split_tag(i))
    full = DetectionDataset(np.stack(images), boxes, ids)
    return (full.subset([i for i, t in enumerate(tags) if t == "train"]),
            full.subset([i for i, t in enumerate(tags) if t == "test"]))


def dataset_from_directory(root):
    """Load a directory written by ``synth.write_dataset`` as (train, test) datasets."""
    entries, images, annotations = synth.load_dataset(root)
    parts = {}
    for tag in ("train", "test"):
        chosen = [e for e in entries if e.split == tag]
        ids = [e.image_id for e in chosen]
        arr = np.stack([images[i].transpose(2, 0, 1).astype(np.float32) / 255.0 for i in ids]) if ids else np.zeros((0, 3, 1, 1), np.float32)
        parts[tag] = DetectionDataset(arr, [_boxes_array(annotations[i], synth.SHAPE_KINDS) for i in ids], ids)
    return parts["train"], parts["test"]


def _normalise(images):
    return Tensor((np.asarray(images, dtype=np.float32) - 0.5) * 2.0)


def batch_loss(model: Detector, images, boxes):
    targets, _ = assign_targets(boxes, model.cfg)
    preds = model(_normalise(images))
    return detection_loss(preds, targets, model.cfg.num_classes)


def predict(model: Detector, dataset: DetectionDataset, batch_size: int = 64, score_thresh: float = 0.05):
    model.set_mode("eval")
    try:
        dets = []
        for start in range(0, len(dataset), batch_size):
            sl = slice(start, start + batch_size)
            preds = model(_normalise(dataset.images[sl]))
            dets += decode_and_nms(preds, model.cfg.strides, model.cfg.num_classes, model.cfg.resolution,
                                   score_thresh=score_thresh, image_ids=dataset.image_ids[sl],
                                   class_names=dataset.class_names)
    finally:
        model.set_mode("train")
    return [d for per_image in dets for d in per_image]


def evaluate_model(model: Detector, dataset: DetectionDataset, score_thresh: float = 0.05):
    with precision("float32"):
        dets = predict(model, dataset, score_thresh=score_thresh)
    return evaluate_detections(dets, dataset.annotations(), list(dataset.class_names))


@dataclass
class TrainResult:
    model: Detector
    losses: list
    evals: list = field(default_factory=list)  # (step, mAP)


def batch_schedule(n: int, batch_size: int, steps: int, seed: int):
    """Yield index batches: a fresh permutation per epoch, incomplete tail batches dropped."""
    rng = np.random.default_rng(seed)
    bs = min(batch_size, n)
    done = 0
    while done < steps:
        perm = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            if done == steps:
                return
            yield perm[start:start + bs]
            done += 1


def train(train_set: DetectionDataset, dc: DetectorConfig, tc: TrainConfig, eval_set=None, eval_every: int = 0,
          callback=None) -> TrainResult:
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    with precision("float32"):
        model = Detector(dc)
        opt = SGD(model.parameters(), tc.lr, tc.momentum, tc.weight_decay)
        losses, evals = [], []
        for step, idx in enumerate(batch_schedule(len(train_set), tc.batch_size, tc.steps, tc.seed), start=1):
            opt.zero_grad()
            try:
                loss = batch_loss(model, train_set.images[idx], [train_set.boxes[i] for i in idx])
            except FloatingPointError as exc:
                raise TrainingDiverged(step, str(exc)) from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step, value)
            loss.backward()
            opt.step()
            losses.append(value)
            if eval_set is not None and eval_every and step % eval_every == 0:
                evals.append((step, evaluate_model(model, eval_set).mAP))
                log.info("step %d loss %.4f mAP %.4f", step, value, evals[-1][1])
            if callback is not None:
                callback(step, value)
    return TrainResult(model, losses, evals)
