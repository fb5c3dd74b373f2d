"""Point cloud classification with a bidirectional selective state space encoder."""

from .tensor import (
    Tensor, backward, no_grad, checked_mode, set_checked,
    ShapeError, TapeError,
)
from .geometry import PointCloud, PatchSet, farthest_point_sampling, knn
from .model import ModelConfig, PointCloudClassifier, count_params

__all__ = [
    "Tensor", "backward", "no_grad", "checked_mode", "set_checked",
    "ShapeError", "TapeError",
    "PointCloud", "PatchSet", "farthest_point_sampling", "knn",
    "ModelConfig", "PointCloudClassifier", "count_params",
]

__version__ = "0.1.0"
