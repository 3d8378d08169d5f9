from .checkpoint import load_checkpoint, save_checkpoint
from .config import VARIANTS, DetectorConfig, TrainConfig
from .decode import decode_and_nms, nms
from .loss import detection_loss, loss_terms
from .model import Detector, backbone_forward
from .optim import SGD, sgd_update
from .targets import LevelTargets, assign_targets, pick_level, targets_to_predictions
from .train import (
    DetectionDataset,
    TrainingDiverged,
    TrainResult,
    dataset_from_directory,
    evaluate_model,
    synthetic_splits,
    train,
)

__all__ = [
    "SGD",
    "VARIANTS",
    "DetectionDataset",
    "Detector",
    "DetectorConfig",
    "LevelTargets",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "assign_targets",
    "backbone_forward",
    "dataset_from_directory",
    "decode_and_nms",
    "detection_loss",
    "evaluate_model",
    "load_checkpoint",
    "loss_terms",
    "nms",
    "pick_level",
    "save_checkpoint",
    "sgd_update",
    "synthetic_splits",
    "targets_to_predictions",
    "train",
]
