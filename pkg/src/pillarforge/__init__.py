"""Roadside LiDAR toolkit for sim-to-real domain adaptation.

Semi-synthetic frame generation, augmentation and domain matching,
pillarization, detection post-processing, self-ensembling losses and
KITTI-style evaluation.
"""

from .errors import PillarforgeError
from .kernels import BACKEND
from .model import Annotation, Box3D, Detection, Frame, PointCloud, SensorSpec

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BACKEND",
    "Box3D",
    "Detection",
    "Frame",
    "PillarforgeError",
    "PointCloud",
    "SensorSpec",
    "__version__",
]
