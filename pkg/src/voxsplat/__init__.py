"""voxsplat: voxel-volume 2D Gaussian surfel reconstruction from posed views."""

from .tensor import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
