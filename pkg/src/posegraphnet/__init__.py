"""PoseGraphNet: lifting 2D human joint positions to root-relative 3D."""
from .model import ModelConfig, PoseGraphNet, export_adjacency, normalize_adjacency, param_count
from .skeleton import build_partition, default_skeleton, load_skeleton
from .training import TrainConfig, train

__all__ = [
    "ModelConfig", "PoseGraphNet", "TrainConfig", "build_partition", "default_skeleton",
    "export_adjacency", "load_skeleton", "normalize_adjacency", "param_count", "train",
]
