"""Training loss: weighted keypoint, parameter, and regularization terms.

The total is

    L = w_3d * L_3D + w_2d * L_2D + L_SMPL + w_norm * L_NORM

where L_3D / L_2D are per-frame sums over joints of Euclidean distances
(averaged over frames), L_SMPL = w_pose * |theta - theta_gt| +
w_shape * |beta - beta_gt| with theta compared as the 72-dim axis-angle
vector, and L_NORM = |theta| + |beta|. Because L_SMPL carries two separate
weights it is reported already weighted, so the report's total is always
the plain weighted sum of its components.

2D-only samples skip the 3D and parameter terms entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class LossWeights:
    w_3d: float = 300.0
    w_2d: float = 300.0
    w_smpl_pose: float = 60.0
    w_smpl_shape: float = 0.06
    w_norm: float = 1e-4

    def __post_init__(self):
        for name, value in vars(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, "
                                 f"got {value}")


@dataclass
class LossReport:
    total: Tensor          # scalar, differentiable
    l_3d: float
    l_2d: float
    l_smpl: float          # already weighted (pose and shape carry separate weights)
    l_norm: float

    def value(self) -> float:
        return float(self.total.data)


def _frame_mean_of_joint_sums(pred: Tensor, gt: np.ndarray) -> Tensor:
    diff = T.sub(pred, Tensor(np.asarray(gt)))
    return T.reduce_mean(T.reduce_sum(T.vecnorm(diff, axis=-1), axis=-1))


def _frame_mean_norm(x: Tensor) -> Tensor:
    return T.reduce_mean(T.vecnorm(x, axis=-1))


def total_loss(pred_j3d: Tensor, pred_j2d: Tensor, pred_theta: Tensor,
               pred_beta: Tensor, gt_j3d: np.ndarray, gt_j2d: np.ndarray,
               gt_theta: np.ndarray, gt_beta: np.ndarray,
               weights: LossWeights, has_3d: bool = True) -> LossReport:
    """Predictions are tensors (graph inputs); ground truth plain arrays.

    Shapes: j3d (F, J, 3), j2d (F, J, 2), theta (F, 72) axis-angle,
    beta (F, 10). has_3d=False marks a 2D-only sample: only the 2D keypoint
    and norm terms contribute.
    """
    if pred_j3d.shape != np.shape(gt_j3d) or pred_j2d.shape != np.shape(gt_j2d):
        raise ShapeError(
            f"prediction/ground-truth mismatch: {pred_j3d.shape} vs "
            f"{np.shape(gt_j3d)}, {pred_j2d.shape} vs {np.shape(gt_j2d)}")
    if pred_j3d.shape[:2] != pred_j2d.shape[:2]:
        raise ShapeError("2D and 3D joint counts disagree")

    l_2d = _frame_mean_of_joint_sums(pred_j2d, gt_j2d)
    l_norm = T.add(_frame_mean_norm(pred_theta), _frame_mean_norm(pred_beta))
    total = T.add(T.scale(l_2d, weights.w_2d), T.scale(l_norm, weights.w_norm))

    if has_3d:
        l_3d = _frame_mean_of_joint_sums(pred_j3d, gt_j3d)
        pose_term = _frame_mean_norm(T.sub(pred_theta, Tensor(np.asarray(gt_theta))))
        shape_term = _frame_mean_norm(T.sub(pred_beta, Tensor(np.asarray(gt_beta))))
        l_smpl = T.add(T.scale(pose_term, weights.w_smpl_pose),
                       T.scale(shape_term, weights.w_smpl_shape))
        total = T.add(total, T.add(T.scale(l_3d, weights.w_3d), l_smpl))
        return LossReport(total, float(l_3d.data), float(l_2d.data),
                          float(l_smpl.data), float(l_norm.data))
    return LossReport(total, 0.0, float(l_2d.data), 0.0, float(l_norm.data))
