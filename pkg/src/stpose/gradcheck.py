"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def fd_check(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
             h: float = 1e-6, max_coords_per_tensor: int | None = None,
             rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild its graph from the given tensors on every call
    (define-by-run), so that perturbing ``t.data`` in place is observed.
    Returns the worst relative error across all checked coordinates.
    Coordinates are subsampled per tensor when ``max_coords_per_tensor``
    is set (deterministically, via ``rng``).
    """
    for t in tensors:
        t.clear_grad()
    loss_fn().backward()
    analytic = []
    for t in tensors:
        if t.grad is None:
            raise AssertionError("a checked tensor received no gradient; is it in the graph?")
        analytic.append(t.grad.copy())
        t.clear_grad()

    worst = 0.0
    for t, full_grad in zip(tensors, analytic):
        coords = np.arange(t.data.size)
        if max_coords_per_tensor is not None and coords.size > max_coords_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(coords, size=max_coords_per_tensor, replace=False)
        flat = t.data.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, relative_error(full_grad.reshape(-1)[i], numeric))
    return worst


class CheckResult(NamedTuple):
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


OPS_TOL = 1e-5
CHAIN_TOL = 1e-4


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    """Scalarize with fixed weights so cotangents are non-uniform."""
    from . import tensor as T
    return T.reduce_sum(T.mul(out, Tensor(w)))


def op_checks(seed: int = 0) -> list[CheckResult]:
    """One finite-difference check per differentiable tensor/geometry op."""
    from . import tensor as T
    from .geometry import (axis_angle_to_matrix, matrix_to_axis_angle,
                           project, rot6d_to_matrix)

    rng = np.random.default_rng(seed)

    def t(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    a, b = t(2, 3, 4), t(2, 3, 4)
    pos = t(2, 3, 4, lo=0.5, hi=2.0)
    far = t(2, 3, 4, lo=0.3, hi=1.0)          # away from atan2/vecnorm kinks
    m1, m2 = t(2, 3, 5), t(5, 4)
    gain, bias = t(4), t(4)
    mask = rng.random((2, 3, 4)) > 0.5
    six = t(2, 4, 6, lo=-1.0, hi=1.0)
    aa = t(2, 4, 3, lo=-0.5, hi=0.5)
    joints, cam = t(2, 5, 3), Tensor(np.array([[1.2, 0.1, -0.2],
                                               [0.9, -0.3, 0.2]]),
                                     requires_grad=True)

    cases = [
        ("reshape", lambda: T.reshape(a, (6, 4)), [a]),
        ("transpose", lambda: T.transpose(a, (2, 0, 1)), [a]),
        ("concat", lambda: T.concat([a, b], axis=1), [a, b]),
        ("slice_axis", lambda: T.slice_axis(a, 2, 1, 3), [a]),
        ("expand", lambda: T.expand(T.reshape(m2, (1, 5, 4)), (3, 5, 4)), [m2]),
        ("stack_last", lambda: T.stack_last([m2, m2]), [m2]),
        ("add", lambda: T.add(a, b), [a, b]),
        ("sub", lambda: T.sub(a, b), [a, b]),
        ("mul", lambda: T.mul(a, b), [a, b]),
        ("div", lambda: T.div(a, pos), [a, pos]),
        ("neg", lambda: T.neg(a), [a]),
        ("scale", lambda: T.scale(a, -1.7), [a]),
        ("add_scalar", lambda: T.add_scalar(a, 0.3), [a]),
        ("sqrt", lambda: T.sqrt(pos), [pos]),
        ("sin", lambda: T.sin(a), [a]),
        ("cos", lambda: T.cos(a), [a]),
        ("sigmoid", lambda: T.sigmoid(a), [a]),
        ("gelu", lambda: T.gelu(a), [a]),
        ("atan2", lambda: T.atan2(far, pos), [far, pos]),
        ("where", lambda: T.where(mask, a, b), [a, b]),
        ("reduce_sum", lambda: T.reduce_sum(a, axis=1, keepdims=True), [a]),
        ("reduce_mean", lambda: T.reduce_mean(a, axis=(0, 2)), [a]),
        ("vecnorm", lambda: T.vecnorm(far, axis=-1), [far]),
        ("softmax", lambda: T.softmax(a, axis=-1), [a]),
        ("matmul", lambda: T.matmul(m1, m2), [m1, m2]),
        ("layer_norm", lambda: T.layer_norm(a, gain, bias), [a, gain, bias]),
        ("rot6d_to_matrix", lambda: rot6d_to_matrix(six), [six]),
        ("axis_angle_to_matrix", lambda: axis_angle_to_matrix(aa), [aa]),
        ("matrix_to_axis_angle",
         lambda: matrix_to_axis_angle(axis_angle_to_matrix(aa)), [aa]),
        ("project", lambda: project(joints, cam), [joints, cam]),
    ]

    results = []
    for name, builder, inputs in cases:
        w = np.random.default_rng(seed + 1).normal(0.0, 1.0, builder().shape)
        err = fd_check(lambda builder=builder, w=w: _weighted_sum(builder(), w),
                       inputs, rng=np.random.default_rng(seed + 2))
        results.append(CheckResult(f"op.{name}", err, OPS_TOL))
    return results


def _nudge_zero_weights(params: dict, rng: np.random.Generator,
                        sigma: float = 0.01):
    """Move all-zero weight matrices slightly off zero.

    Training starts decoder heads at zero so the first output is the rest
    body, but at that exact point the loss is flat in every encoder
    parameter. Checking gradients at a generic nearby point exercises the
    whole chain.
    """
    for tensor in params.values():
        if tensor.data.ndim >= 2 and not tensor.data.any():
            tensor.data[...] = rng.normal(0.0, sigma, tensor.data.shape)


def chain_checks(seed: int = 0, max_coords_per_tensor: int = 2) -> list[CheckResult]:
    """End-to-end observation -> loss gradients for both decoders."""
    from .config import RunConfig
    from .losses import LossWeights
    from .synth import synth_generate
    from .train import build_model, train_step

    results = []
    for decoder in ("ktd", "iterative"):
        cfg = RunConfig(encoder="parallel_v2", decoder=decoder, blocks=1,
                        d=16, heads=2, hw=4, t_clip=2, seed=seed, clips=1,
                        noise_std=0.01)
        model = build_model(cfg)
        params = model.named_params()
        rng = np.random.default_rng(seed + 3)
        _nudge_zero_weights(params, rng)
        batch = synth_generate(cfg.seed, 1, cfg.t_clip, hw=cfg.hw,
                               noise_std=cfg.noise_std, tree=model.tree)
        weights = LossWeights()

        def loss():
            return train_step(model, batch.obs[0], batch.gt_j3d[0],
                              batch.gt_j2d[0], batch.gt_theta[0],
                              batch.gt_beta[0], True, weights).total

        err = fd_check(loss, list(params.values()),
                       max_coords_per_tensor=max_coords_per_tensor,
                       rng=np.random.default_rng(seed + 4))
        results.append(CheckResult(f"chain.{decoder}", err, CHAIN_TOL))
    return results


def full_suite(seed: int = 0) -> list[CheckResult]:
    return op_checks(seed) + chain_checks(seed)
