"""Desk-scale spatial-temporal pose estimation library.

Core pieces: a float64 autodiff tensor engine, rotation/camera geometry,
a 24-joint kinematic tree with forward kinematics, spatial/temporal
self-attention encoder blocks, hierarchical and iterative parameter
decoders, training losses, pose metrics, and a synthetic-data training
harness with a CLI.
"""

from .tensor import Tensor, ShapeError

__all__ = ["Tensor", "ShapeError"]
__version__ = "0.1.0"
