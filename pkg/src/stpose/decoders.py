"""Parameter decoders: per-joint hierarchical regression and the iterative
feedback baseline, plus the shared decode -> joints glue.

A decoded frame is an SmplParams triple: per-joint 6D rotations (24 x 6),
shape coefficients (10), and a weak-perspective camera (3).

The hierarchical decoder (KTD) regresses joints root-first down the
kinematic tree; joint k consumes the frame feature concatenated with the
already-predicted 6D vectors of all its ancestors, so its regressor input
is exactly d + 6*|ancestors(k)| wide and gradients flow from children back
into every ancestor's regressor.

The iterative baseline refines one flat parameter vector of width
P = 24*6 + 10 + 3 = 157: theta <- theta + F(concat(x, theta)), running a
fixed number of iterations from a learned initial vector, with gradients
flowing through all iterations.

Both decoders default to "rest" initialization: final-layer weights are
zero and biases encode the rest state (identity 6D rotations, zero shape,
unit camera scale), so the first forward pass produces a valid body at the
rest pose instead of a degenerate all-zero 6D vector.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .geometry import project, rot6d_to_matrix
from .kinematics import NUM_JOINTS, SHAPE_DIM, KinematicTree, forward_kinematics
from .layers import Affine
from .tensor import ShapeError, Tensor

POSE_DIM = NUM_JOINTS * 6
PARAM_DIM = POSE_DIM + SHAPE_DIM + 3   # 157

IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
REST_CAMERA = (1.0, 0.0, 0.0)

INITS = ("rest", "xavier")


class SmplParams(NamedTuple):
    pose: Tensor    # (T, 24, 6)
    shape: Tensor   # (T, 10)
    cam: Tensor     # (T, 3)


def _rest_theta() -> np.ndarray:
    return np.concatenate([np.tile(IDENTITY_6D, NUM_JOINTS),
                           np.zeros(SHAPE_DIM), REST_CAMERA])


def _make_head(fan_in: int, fan_out: int, rng, init: str,
               rest_bias=None) -> Affine:
    head = Affine(fan_in, fan_out, rng, zero_init=(init == "rest"))
    if init == "rest" and rest_bias is not None:
        head.b.data[:] = rest_bias
    return head


class KtdDecoder:
    """One affine regressor per joint, input width d + 6*|ancestors|."""

    def __init__(self, d: int, tree: KinematicTree, rng: np.random.Generator,
                 init: str = "rest"):
        if init not in INITS:
            raise ValueError(f"unknown init {init!r}, want one of {INITS}")
        self.d = d
        self.tree = tree
        self.joint_heads = [
            _make_head(d + 6 * len(tree.ancestors(k)), 6, rng, init, IDENTITY_6D)
            for k in range(NUM_JOINTS)
        ]
        self.w_shape = _make_head(d, SHAPE_DIM, rng, init)
        self.w_cam = _make_head(d, 3, rng, init, REST_CAMERA)

    def decode(self, x: Tensor) -> SmplParams:
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"expected features (T, {self.d}), got {x.shape}")
        frames = x.shape[0]
        omega: dict[int, Tensor] = {}
        for k in self.tree.topo_order:
            ancestors = self.tree.ancestors(k)
            head = self.joint_heads[k]
            want = self.d + 6 * len(ancestors)
            if head.fan_in != want:
                raise ShapeError(
                    f"joint {k} regressor is {head.fan_in} wide, tree wants {want}")
            inp = x if not ancestors else T.concat(
                [x] + [omega[a] for a in ancestors], axis=-1)
            omega[k] = head(inp)
        pose = T.concat([T.reshape(omega[k], (frames, 1, 6))
                         for k in range(NUM_JOINTS)], axis=1)
        return SmplParams(pose, self.w_shape(x), self.w_cam(x))

    def named_params(self, prefix: str = "decoder") -> dict[str, Tensor]:
        out = {}
        for k, head in enumerate(self.joint_heads):
            out.update(head.named_params(f"{prefix}.joint.{k}"))
        out.update(self.w_shape.named_params(f"{prefix}.shape"))
        out.update(self.w_cam.named_params(f"{prefix}.cam"))
        return out


class IterativeDecoder:
    """theta <- theta + F(concat(x, theta)), from a learned initial vector."""

    def __init__(self, d: int, rng: np.random.Generator, iterations: int = 3,
                 init: str = "rest"):
        if init not in INITS:
            raise ValueError(f"unknown init {init!r}, want one of {INITS}")
        if iterations < 1:
            raise ValueError(f"need at least one iteration, got {iterations}")
        self.d = d
        self.iterations = iterations
        self.f = Affine(d + PARAM_DIM, PARAM_DIM, rng, zero_init=(init == "rest"))
        self.theta0 = Tensor(_rest_theta(), requires_grad=True)

    def decode(self, x: Tensor) -> SmplParams:
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"expected features (T, {self.d}), got {x.shape}")
        frames = x.shape[0]
        theta = T.expand(T.reshape(self.theta0, (1, PARAM_DIM)),
                         (frames, PARAM_DIM))
        for _ in range(self.iterations):
            theta = T.add(theta, self.f(T.concat([x, theta], axis=-1)))
        pose = T.reshape(T.slice_axis(theta, -1, 0, POSE_DIM),
                         (frames, NUM_JOINTS, 6))
        shape = T.slice_axis(theta, -1, POSE_DIM, POSE_DIM + SHAPE_DIM)
        cam = T.slice_axis(theta, -1, POSE_DIM + SHAPE_DIM, PARAM_DIM)
        return SmplParams(pose, shape, cam)

    def named_params(self, prefix: str = "decoder") -> dict[str, Tensor]:
        out = self.f.named_params(f"{prefix}.f")
        out[f"{prefix}.theta0"] = self.theta0
        return out


def ktd_decode(x: Tensor, w: KtdDecoder) -> SmplParams:
    return w.decode(x)


def iterative_decode(x: Tensor, w: IterativeDecoder) -> SmplParams:
    return w.decode(x)


def smpl_forward(params: SmplParams, tree: KinematicTree):
    """Params to joints: 6D -> rotations -> forward kinematics -> projection.

    Returns (J3d, J2d) shaped (T, 24, 3) and (T, 24, 2).
    """
    rot = rot6d_to_matrix(params.pose)
    joints, _ = forward_kinematics(tree, rot, params.shape, want_transforms=False)
    return joints, project(joints, params.cam)
