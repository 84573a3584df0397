"""Spatial-temporal transformer encoder over patch-feature clips.

Input is a clip of T frames, each a grid of hw patch features. Every frame
gets a class token (index 0, so N = hw + 1 tokens per frame) plus learned
spatial and temporal position embeddings. Multi-head self-attention runs in
one of three modes over the (T, N, d) volume:

  - spatial: tokens of one frame attend to each other (maps T x H x N x N);
  - temporal: each token attends to itself across time (maps N x H x T x T);
  - coupled: all T*N tokens attend jointly (maps H x TN x TN).

Blocks wire these modes into six topologies (spatial, temporal, series,
parallel_v1, parallel_v2, coupling); all use pre-norm residuals and end with
a GELU MLP. parallel_v2 fuses its branches with per-frame, per-channel
gates predicted from the class tokens of both branches; the gates sum to
one. A clip of one frame carries no temporal structure, so temporal
sub-layers are bypassed (the residual passes through untouched) rather than
attending over a single step.

The per-frame output feature is the class token after a final layer norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Affine, LayerNorm
from .tensor import ShapeError, Tensor

TOPOLOGIES = ("spatial", "temporal", "series", "parallel_v1", "parallel_v2",
              "coupling")


@dataclass
class SteConfig:
    topology: str = "parallel_v2"
    blocks: int = 2
    d: int = 64
    heads: int = 4
    hw: int = 16
    t_max: int = 8
    d_in: int = 24
    mlp_ratio: int = 4

    @property
    def tokens(self) -> int:
        return self.hw + 1


class MsaLayer:
    """Multi-head self-attention with mode-dependent token layout."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads != 0:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.wq = Affine(d, d, rng)
        self.wk = Affine(d, d, rng)
        self.wv = Affine(d, d, rng)
        self.wo = Affine(d, d, rng)

    def _attend(self, z: Tensor):
        batch, m, d = z.shape
        h, dh = self.heads, self.d // self.heads

        def split(t):
            return T.transpose(T.reshape(t, (batch, m, h, dh)), (0, 2, 1, 3))

        q, k, v = split(self.wq(z)), split(self.wk(z)), split(self.wv(z))
        logits = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))),
                         1.0 / math.sqrt(dh))
        att = T.softmax(logits, axis=-1)
        out = T.matmul(att, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (batch, m, d))
        return self.wo(out), att.data.copy()

    def __call__(self, x: Tensor, mode: str):
        """x is (T, N, d); returns (y, maps) with y shaped like x and maps
        (T, H, N, N) for spatial, (N, H, T, T) for temporal, (H, TN, TN)
        for coupled attention."""
        if x.ndim != 3 or x.shape[-1] != self.d:
            raise ShapeError(f"expected (T, N, {self.d}) input, got {x.shape}")
        frames, tokens, d = x.shape
        if mode == "spatial":
            return self._attend(x)
        if mode == "temporal":
            y, maps = self._attend(T.transpose(x, (1, 0, 2)))
            return T.transpose(y, (1, 0, 2)), maps
        if mode == "coupled":
            y, maps = self._attend(T.reshape(x, (1, frames * tokens, d)))
            return T.reshape(y, x.shape), maps[0]
        raise ValueError(f"unknown attention mode {mode!r}")

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("wq", "wk", "wv", "wo"):
            out.update(getattr(self, name).named_params(f"{prefix}.{name}"))
        return out


class SteBlock:
    """One encoder block in a chosen topology.

    force_alpha, when set to a (spatial, temporal) pair of floats, replaces
    the learned parallel_v2 gates with constants; it exists so degenerate
    gate settings can be compared against single-branch blocks.
    """

    def __init__(self, topology: str, d: int, heads: int,
                 rng: np.random.Generator, mlp_ratio: int = 4):
        if topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {topology!r}, want one of {TOPOLOGIES}")
        self.topology = topology
        self.d = d
        self.ln_attn = LayerNorm(d)
        if topology in ("spatial", "series", "parallel_v1", "parallel_v2"):
            self.msa_s = MsaLayer(d, heads, rng)
        if topology in ("temporal", "series", "parallel_v1", "parallel_v2"):
            self.msa_t = MsaLayer(d, heads, rng)
        if topology == "series":
            self.ln_attn2 = LayerNorm(d)
        if topology == "parallel_v2":
            self.gate = Affine(d, d, rng)
        if topology == "coupling":
            self.msa_c = MsaLayer(d, heads, rng)
        self.ln_mlp = LayerNorm(d)
        self.fc1 = Affine(d, mlp_ratio * d, rng)
        self.fc2 = Affine(mlp_ratio * d, d, rng)
        self.force_alpha = None
        self.last_alpha = None

    def _mlp(self, z: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(z)))

    def _gated_mix(self, s: Tensor, t: Tensor) -> Tensor:
        frames, tokens, d = s.shape
        if self.force_alpha is not None:
            a_s, a_t = self.force_alpha
            self.last_alpha = (np.full((frames, 1, d), a_s),
                               np.full((frames, 1, d), a_t))
            return T.add(T.scale(s, float(a_s)), T.scale(t, float(a_t)))
        # a shared gate scores each branch's class token; softmax over the
        # two branches reduces to a sigmoid of the logit difference, and the
        # complement 1 - alpha_s makes the pair sum to exactly one
        logit_s = self.gate(T.reshape(T.slice_axis(s, 1, 0, 1), (frames, d)))
        logit_t = self.gate(T.reshape(T.slice_axis(t, 1, 0, 1), (frames, d)))
        alpha_s = T.sigmoid(T.sub(logit_s, logit_t))
        alpha_t = T.add_scalar(T.neg(alpha_s), 1.0)
        self.last_alpha = (alpha_s.data.copy().reshape(frames, 1, d),
                           alpha_t.data.copy().reshape(frames, 1, d))

        def broad(a):
            return T.expand(T.reshape(a, (frames, 1, d)), s.shape)

        return T.add(T.mul(broad(alpha_s), s), T.mul(broad(alpha_t), t))

    def __call__(self, x: Tensor, bypass_temporal: bool = False):
        maps: dict[str, np.ndarray] = {}
        self.last_alpha = None
        topo = self.topology

        if topo == "spatial":
            s, maps["spatial"] = self.msa_s(self.ln_attn(x), "spatial")
            u = T.add(x, s)
        elif topo == "temporal":
            if bypass_temporal:
                u = x
            else:
                t, maps["temporal"] = self.msa_t(self.ln_attn(x), "temporal")
                u = T.add(x, t)
        elif topo == "series":
            s, maps["spatial"] = self.msa_s(self.ln_attn(x), "spatial")
            u = T.add(x, s)
            if not bypass_temporal:
                t, maps["temporal"] = self.msa_t(self.ln_attn2(u), "temporal")
                u = T.add(u, t)
        elif topo in ("parallel_v1", "parallel_v2"):
            xn = self.ln_attn(x)
            s, maps["spatial"] = self.msa_s(xn, "spatial")
            if bypass_temporal:
                mix = s
            else:
                t, maps["temporal"] = self.msa_t(xn, "temporal")
                if topo == "parallel_v1":
                    mix = T.scale(T.add(s, t), 0.5)
                else:
                    mix = self._gated_mix(s, t)
            u = T.add(x, mix)
        else:   # coupling
            c, maps["coupled"] = self.msa_c(self.ln_attn(x), "coupled")
            u = T.add(x, c)

        y = T.add(u, self._mlp(self.ln_mlp(u)))
        return y, maps

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = self.ln_attn.named_params(f"{prefix}.ln_attn")
        for name in ("msa_s", "msa_t", "ln_attn2", "gate", "msa_c"):
            sub = getattr(self, name, None)
            if sub is not None:
                out.update(sub.named_params(f"{prefix}.{name}"))
        out.update(self.ln_mlp.named_params(f"{prefix}.ln_mlp"))
        out.update(self.fc1.named_params(f"{prefix}.fc1"))
        out.update(self.fc2.named_params(f"{prefix}.fc2"))
        return out


class SteEncoder:
    """Stack of blocks plus class token and position embeddings."""

    def __init__(self, cfg: SteConfig, rng: np.random.Generator):
        self.cfg = cfg
        n = cfg.tokens
        self.cls_token = Tensor(rng.normal(0.0, 0.02, (1, 1, cfg.d)),
                                requires_grad=True)
        self.pos_spatial = Tensor(rng.normal(0.0, 0.02, (1, n, cfg.d)),
                                  requires_grad=True)
        self.pos_temporal = Tensor(rng.normal(0.0, 0.02, (cfg.t_max, 1, cfg.d)),
                                   requires_grad=True)
        self.blocks = [SteBlock(cfg.topology, cfg.d, cfg.heads, rng, cfg.mlp_ratio)
                       for _ in range(cfg.blocks)]
        self.ln_final = LayerNorm(cfg.d)

    def encode(self, obs: Tensor, patch_embed: Affine, bypass_temporal=None):
        """obs is (T, hw, d_in) patch features; returns per-frame features
        (T, d) and the attention maps of every block.

        bypass_temporal defaults to (T == 1): single frames carry no
        temporal axis worth attending over.
        """
        cfg = self.cfg
        if obs.ndim != 3 or obs.shape[1] != cfg.hw or obs.shape[2] != cfg.d_in:
            raise ShapeError(
                f"expected observations (T, {cfg.hw}, {cfg.d_in}), got {obs.shape}")
        frames = obs.shape[0]
        if frames < 1 or frames > cfg.t_max:
            raise ShapeError(f"clip length {frames} outside 1..{cfg.t_max}")
        if bypass_temporal is None:
            bypass_temporal = frames == 1

        x = patch_embed(obs)
        n = cfg.tokens
        cls = T.expand(self.cls_token, (frames, 1, cfg.d))
        x = T.concat([cls, x], axis=1)
        x = T.add(x, T.expand(self.pos_spatial, (frames, n, cfg.d)))
        pos_t = T.slice_axis(self.pos_temporal, 0, 0, frames)
        x = T.add(x, T.expand(pos_t, (frames, n, cfg.d)))

        all_maps = []
        for block in self.blocks:
            x, maps = block(x, bypass_temporal=bypass_temporal)
            all_maps.append(maps)
        x = self.ln_final(x)
        feats = T.reshape(T.slice_axis(x, 1, 0, 1), (frames, cfg.d))
        return feats, all_maps

    def named_params(self) -> dict[str, Tensor]:
        out = {"cls_token": self.cls_token, "pos_spatial": self.pos_spatial,
               "pos_temporal": self.pos_temporal}
        for i, block in enumerate(self.blocks):
            out.update(block.named_params(f"blocks.{i}"))
        out.update(self.ln_final.named_params("ln_final"))
        return out


def encode(obs: Tensor, encoder: SteEncoder, patch_embed: Affine,
           bypass_temporal=None):
    return encoder.encode(obs, patch_embed, bypass_temporal=bypass_temporal)
