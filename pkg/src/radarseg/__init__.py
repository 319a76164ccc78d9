"""Anomaly segmentation of sparse 2D radar point clouds with PointNet-style networks."""

from .core import (DatasetError, EgoState, Label, RadarFrame, RadarTarget, Scenario, SensorId,
                   ValidationError, dataset_stats, read_dataset, write_dataset)
from .grouping import GroupForm, GroupSpec, ball_query, fps, knn, ring_query
from .models import ModelConfig, SegmentationModel, Variant, default_config
from .pipeline import EvalReport, TrainConfig, evaluate, load_checkpoint, train
from .synthgen import SceneConfig, generate_sequence

__version__ = "0.1.0"

__all__ = [
    "DatasetError", "EgoState", "EvalReport", "GroupForm", "GroupSpec", "Label", "ModelConfig",
    "RadarFrame", "RadarTarget", "Scenario", "SceneConfig", "SegmentationModel", "SensorId",
    "TrainConfig", "ValidationError", "Variant", "ball_query", "dataset_stats", "default_config",
    "evaluate", "fps", "generate_sequence", "knn", "load_checkpoint", "read_dataset", "ring_query",
    "train", "write_dataset",
]
