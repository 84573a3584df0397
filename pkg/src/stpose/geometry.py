"""Rotation representations and the weak-perspective camera.

Conventions, fixed here because callers depend on them:
  - a 6D rotation packs the first two COLUMNS of the rotation matrix;
  - axis-angle vectors have magnitude = angle in radians, canonical
    outputs satisfy ``|v| <= pi``;
  - a camera is the 3-vector (scale, t_x, t_y) with scale > 0, projecting
    ``(x, y, z) -> scale * (x, y) + (t_x, t_y)``.

Functions taking :class:`~stpose.tensor.Tensor` inputs are differentiable;
``*_np`` twins operate on plain arrays for data generation and checks.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

ROT6D_EPS = 1e-8
_SMALL_ANGLE = 1e-6


class DegenerateRotationError(ValueError):
    """6D input whose Gram-Schmidt columns are too short or too parallel."""


def _last(t: Tensor, start: int, stop: int) -> Tensor:
    return T.slice_axis(t, -1, start, stop)


def _mat_el(m: Tensor, i: int, j: int) -> Tensor:
    """Element [..., i, j] of a (..., 3, 3) tensor, shaped (..., 1)."""
    e = T.slice_axis(T.slice_axis(m, -2, i, i + 1), -1, j, j + 1)
    return T.reshape(e, m.shape[:-2] + (1,))


def rot6d_to_matrix(r: Tensor) -> Tensor:
    """Gram-Schmidt a (..., 6) tensor into proper rotations (..., 3, 3).

    The two packed 3-vectors become the first two columns after
    orthonormalization; the third column is their cross product.
    Raises :class:`DegenerateRotationError` when a column norm falls
    below ``ROT6D_EPS`` instead of clamping silently.
    """
    if r.shape[-1] != 6:
        raise ShapeError(f"expected trailing extent 6, got {r.shape}")
    a1, a2 = _last(r, 0, 3), _last(r, 3, 6)

    n1 = T.vecnorm(a1, axis=-1, keepdims=True)
    if (n1.data < ROT6D_EPS).any():
        raise DegenerateRotationError(
            f"first 6D column norm {n1.data.min():.3e} below {ROT6D_EPS:.0e}")
    b1 = T.div(a1, T.expand(n1, a1.shape))

    dot = T.reduce_sum(T.mul(b1, a2), axis=-1, keepdims=True)
    u2 = T.sub(a2, T.mul(b1, T.expand(dot, a2.shape)))
    n2 = T.vecnorm(u2, axis=-1, keepdims=True)
    if (n2.data < ROT6D_EPS).any():
        raise DegenerateRotationError(
            f"second 6D column is parallel to the first within {ROT6D_EPS:.0e}")
    b2 = T.div(u2, T.expand(n2, u2.shape))

    b3 = _cross(b1, b2)
    cols = [T.reshape(b, b.shape + (1,)) for b in (b1, b2, b3)]
    return T.concat(cols, axis=-1)


def _cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = _last(a, 0, 1), _last(a, 1, 2), _last(a, 2, 3)
    bx, by, bz = _last(b, 0, 1), _last(b, 1, 2), _last(b, 2, 3)
    return T.concat([
        T.sub(T.mul(ay, bz), T.mul(az, by)),
        T.sub(T.mul(az, bx), T.mul(ax, bz)),
        T.sub(T.mul(ax, by), T.mul(ay, bx)),
    ], axis=-1)


def axis_angle_to_matrix(v: Tensor) -> Tensor:
    """Rodrigues rotation of (..., 3) axis-angle vectors to (..., 3, 3).

    Uses series coefficients below ``1e-6`` radians so the zero rotation
    and its gradients stay exact.
    """
    if v.shape[-1] != 3:
        raise ShapeError(f"expected trailing extent 3, got {v.shape}")
    theta = T.vecnorm(v, axis=-1, keepdims=True)
    small = theta.data < _SMALL_ANGLE
    ones = Tensor(np.ones_like(theta.data))
    safe = T.where(small, ones, theta)
    t2 = T.mul(theta, theta)

    # sin(t)/t and (1-cos(t))/t^2 with small-angle series
    sin_c = T.where(small, T.add_scalar(T.scale(t2, -1.0 / 6.0), 1.0),
                    T.div(T.sin(safe), safe))
    cos_c = T.where(small, T.add_scalar(T.scale(t2, -1.0 / 24.0), 0.5),
                    T.div(T.add_scalar(T.neg(T.cos(safe)), 1.0), T.mul(safe, safe)))

    x, y, z = _last(v, 0, 1), _last(v, 1, 2), _last(v, 2, 3)
    zero = Tensor(np.zeros_like(x.data))
    k = T.reshape(
        T.concat([zero, T.neg(z), y, z, zero, T.neg(x), T.neg(y), x, zero], axis=-1),
        v.shape[:-1] + (3, 3))
    k2 = T.matmul(k, k)

    mshape = k.shape
    eye = T.expand(Tensor(np.eye(3)), mshape)
    sin_e = T.expand(T.reshape(sin_c, sin_c.shape + (1,)), mshape)
    cos_e = T.expand(T.reshape(cos_c, cos_c.shape + (1,)), mshape)
    return T.add(eye, T.add(T.mul(sin_e, k), T.mul(cos_e, k2)))


def matrix_to_axis_angle(m: Tensor) -> Tensor:
    """Inverse Rodrigues for (..., 3, 3) rotations, output angle in [0, pi].

    Differentiable; ill-defined at exactly pi (axis sign ambiguity), where
    it raises. For robust handling of near-pi inputs outside a gradient
    graph use :func:`matrix_to_axis_angle_np`.
    """
    w = T.concat([
        T.sub(_mat_el(m, 2, 1), _mat_el(m, 1, 2)),
        T.sub(_mat_el(m, 0, 2), _mat_el(m, 2, 0)),
        T.sub(_mat_el(m, 1, 0), _mat_el(m, 0, 1)),
    ], axis=-1)                                    # 2 sin(t) * axis
    s = T.vecnorm(w, axis=-1, keepdims=True)       # 2 sin(t)
    c = T.add_scalar(
        T.add(_mat_el(m, 0, 0), T.add(_mat_el(m, 1, 1), _mat_el(m, 2, 2))),
        -1.0)                                      # 2 cos(t)
    theta = T.atan2(s, c)

    small = s.data < _SMALL_ANGLE
    if (small & (c.data < 0.0)).any():
        raise ValueError("rotation angle at or numerically indistinguishable from pi; "
                         "axis sign is ambiguous")
    ones = Tensor(np.ones_like(s.data))
    safe = T.where(small, ones, s)
    # t / (2 sin t) == theta / s, series 1/2 + t^2/12 near zero
    factor = T.where(small,
                     T.add_scalar(T.scale(T.mul(theta, theta), 1.0 / 12.0), 0.5),
                     T.div(theta, safe))
    return T.mul(w, T.expand(factor, w.shape))


def project(j3d: Tensor, cam: Tensor) -> Tensor:
    """Weak-perspective projection of (T, J, 3) joints with (T, 3) cameras."""
    if j3d.ndim != 3 or j3d.shape[-1] != 3:
        raise ShapeError(f"expected joints shaped (T, J, 3), got {j3d.shape}")
    frames = j3d.shape[0]
    if cam.shape != (frames, 3):
        raise ShapeError(f"expected cameras shaped ({frames}, 3), got {cam.shape}")
    s = T.slice_axis(cam, -1, 0, 1)
    if (s.data <= 0.0).any():
        raise ValueError(f"camera scale must be positive, min {s.data.min():.3e}")
    xy = _last(j3d, 0, 2)
    s_e = T.expand(T.reshape(s, (frames, 1, 1)), xy.shape)
    t_e = T.expand(T.reshape(T.slice_axis(cam, -1, 1, 3), (frames, 1, 2)), xy.shape)
    return T.add(T.mul(xy, s_e), t_e)


# -- plain-array twins -----------------------------------------------------


def axis_angle_to_matrix_np(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    sin_c = np.where(small, 1.0 - theta * theta / 6.0, np.sin(safe) / safe)
    cos_c = np.where(small, 0.5 - theta * theta / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zero = np.zeros_like(x)
    k = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1).reshape(v.shape[:-1] + (3, 3))
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + sin_c[..., None] * k + cos_c[..., None] * (k @ k)


def matrix_to_axis_angle_np(m: np.ndarray) -> np.ndarray:
    """Robust inverse Rodrigues, valid across [0, pi]; at pi the axis sign
    follows the convention that its largest-magnitude component is positive."""
    m = np.asarray(m, dtype=np.float64)
    w = np.stack([m[..., 2, 1] - m[..., 1, 2],
                  m[..., 0, 2] - m[..., 2, 0],
                  m[..., 1, 0] - m[..., 0, 1]], axis=-1)
    s = np.linalg.norm(w, axis=-1)                        # 2 sin(t)
    c = np.trace(m, axis1=-2, axis2=-1) - 1.0             # 2 cos(t)
    theta = np.arctan2(s, c)

    out = np.empty(m.shape[:-2] + (3,))
    generic = s >= _SMALL_ANGLE
    near_pi = ~generic & (c < 0.0)
    tiny = ~generic & ~near_pi

    with np.errstate(invalid="ignore", divide="ignore"):
        out[generic] = w[generic] * (theta[generic] / s[generic])[..., None]
    out[tiny] = w[tiny] * (0.5 + theta[tiny][..., None] ** 2 / 12.0)
    if near_pi.any():
        mm = m[near_pi]
        cos_t = np.clip(c[near_pi] / 2.0, -1.0, 1.0)
        diag = np.stack([mm[..., 0, 0], mm[..., 1, 1], mm[..., 2, 2]], axis=-1)
        axis_sq = np.clip((diag - cos_t[..., None]) / (1.0 - cos_t[..., None]), 0.0, None)
        axis = np.sqrt(axis_sq)
        # off-diagonals fix relative signs: R_ij + R_ji = 2 n_i n_j (1 - cos)
        lead = np.argmax(axis, axis=-1)
        pair = np.stack([mm[..., 0, 1] + mm[..., 1, 0],
                         mm[..., 0, 2] + mm[..., 2, 0],
                         mm[..., 1, 2] + mm[..., 2, 1]], axis=-1)  # xy, xz, yz
        signs = np.ones_like(axis)
        pair_of = {(0, 1): 0, (0, 2): 1, (1, 2): 2}
        for row in range(axis.shape[0]):
            a = int(lead[row])
            for b in range(3):
                if b == a:
                    continue
                key = (min(a, b), max(a, b))
                if pair[row, pair_of[key]] < 0.0:
                    signs[row, b] = -1.0
        out[near_pi] = axis * signs * theta[near_pi][..., None]
    return out


def matrix_to_rot6d_np(m: np.ndarray) -> np.ndarray:
    """Pack the first two columns of (..., 3, 3) rotations as (..., 6)."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def is_rotation_matrix(m: np.ndarray, tol: float = 1e-6) -> bool:
    m = np.asarray(m, dtype=np.float64)
    eye = np.broadcast_to(np.eye(3), m.shape)
    ortho = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max() <= tol
    return bool(ortho and np.abs(np.linalg.det(m) - 1.0).max() <= tol)
