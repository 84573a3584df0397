"""Model assembly, two-stage training, evaluation, ablation, gradcheck.

A model is patch embedding + encoder + decoder over one kinematic tree.
Training overfits synthetic clips generated from the run seed: stage 1
sees single frames (temporal attention bypassed), stage 2 alternates full
clips with single frames at a configurable ratio. Everything downstream of
the seed is deterministic, so a config fully reproduces a run.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np

from . import tensor as T
from .attention import TOPOLOGIES, SteConfig, SteEncoder, encode
from .checkpoint import save_checkpoint
from .config import RunConfig, config_to_text
from .decoders import (IterativeDecoder, KtdDecoder, SmplParams, smpl_forward)
from .geometry import matrix_to_axis_angle, project, rot6d_to_matrix
from .kinematics import (NUM_JOINTS, KinematicTree, forward_kinematics,
                         random_tree, reverse_tree, smpl_tree)
from .layers import Affine
from .losses import LossReport, LossWeights, total_loss
from .metrics import accel_error, mpjpe, pa_mpjpe
from .optim import Adam
from .synth import ClipBatch, frame_view, synth_generate
from .tensor import Tensor

EVAL_COLUMNS = ("mpjpe", "pa_mpjpe", "accel")


def build_tree(kind: str, seed: int) -> KinematicTree:
    if kind == "smpl":
        return smpl_tree()
    if kind == "random":
        return random_tree(seed)
    if kind == "reverse":
        return reverse_tree(smpl_tree())
    raise ValueError(f"unknown tree kind {kind!r}")


@dataclass
class Model:
    cfg: RunConfig
    tree: KinematicTree
    patch_embed: Affine
    encoder: SteEncoder
    decoder: Union[KtdDecoder, IterativeDecoder]

    def named_params(self) -> dict:
        out = dict(self.patch_embed.named_params("patch_embed"))
        for name, p in self.encoder.named_params().items():
            out[f"encoder.{name}"] = p
        out.update(self.decoder.named_params("decoder"))
        return out


def build_model(cfg: RunConfig) -> Model:
    rng = np.random.default_rng(cfg.seed)
    tree = build_tree(cfg.tree, cfg.seed)
    patch_embed = Affine(cfg.d_in, cfg.d, rng)
    enc_cfg = SteConfig(topology=cfg.encoder, blocks=cfg.blocks, d=cfg.d,
                        heads=cfg.heads, hw=cfg.hw, t_max=cfg.t_clip,
                        d_in=cfg.d_in)
    encoder = SteEncoder(enc_cfg, rng)
    if cfg.decoder == "ktd":
        decoder = KtdDecoder(cfg.d, tree, rng)
    else:
        decoder = IterativeDecoder(cfg.d, rng, iterations=cfg.iterations)
    return Model(cfg, tree, patch_embed, encoder, decoder)


class ForwardOut(NamedTuple):
    params: SmplParams
    j3d: Tensor     # (T, 24, 3)
    j2d: Tensor     # (T, 24, 2)
    theta: Tensor   # (T, 72) axis-angle
    maps: list


def model_forward(model: Model, obs: np.ndarray,
                  bypass_temporal=None) -> ForwardOut:
    """Full chain: observations -> features -> parameters -> joints."""
    feats, maps = encode(Tensor(np.asarray(obs, dtype=np.float64)),
                         model.encoder, model.patch_embed, bypass_temporal)
    params = model.decoder.decode(feats)
    rot = rot6d_to_matrix(params.pose)
    j3d, _ = forward_kinematics(model.tree, rot, params.shape,
                                want_transforms=False)
    j2d = project(j3d, params.cam)
    theta = T.reshape(matrix_to_axis_angle(rot),
                      (feats.shape[0], NUM_JOINTS * 3))
    return ForwardOut(params, j3d, j2d, theta, maps)


@dataclass
class StepRecord:
    step: int
    stage: int
    lr: float
    total: float
    l_3d: float
    l_2d: float
    l_smpl: float
    l_norm: float


@dataclass
class TrainResult:
    model: Model
    batch: ClipBatch
    history: list

    @property
    def initial_loss(self) -> float:
        return self.history[0].total

    @property
    def final_loss(self) -> float:
        return self.history[-1].total


def lr_factor(step: int, total_steps: int) -> float:
    """Base multiplier: x0.1 past 60% of the run, x0.01 past 90%."""
    if total_steps <= 0:
        return 1.0
    if step >= int(0.9 * total_steps):
        return 0.01
    if step >= int(0.6 * total_steps):
        return 0.1
    return 1.0


def _check_finite(report: LossReport, step: int):
    terms = (("total", report.value()), ("3d", report.l_3d),
             ("2d", report.l_2d), ("smpl", report.l_smpl),
             ("norm", report.l_norm))
    for name, value in terms:
        if not np.isfinite(value):
            raise RuntimeError(
                f"non-finite loss at step {step}: {name} term is {value}")


def _loss_weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(cfg.w_3d, cfg.w_2d, cfg.w_smpl_pose,
                       cfg.w_smpl_shape, cfg.w_norm)


def train_step(model: Model, obs: np.ndarray, gt_j3d, gt_j2d, gt_theta,
               gt_beta, has_3d: bool, weights: LossWeights) -> LossReport:
    out = model_forward(model, obs)
    return total_loss(out.j3d, out.j2d, out.theta, out.params.shape,
                      gt_j3d, gt_j2d, gt_theta, gt_beta, weights,
                      has_3d=has_3d)


def batch_step(model: Model, batch: ClipBatch, clips, weights: LossWeights,
               frame=None) -> LossReport:
    """Mean loss over the given clips; ``frame`` picks one frame per clip
    (image mode), ``None`` feeds whole clips (video mode)."""
    reports = []
    for clip in clips:
        sample = batch if frame is None else frame_view(batch, clip, frame)
        c = clip if frame is None else 0
        reports.append(train_step(model, sample.obs[c], sample.gt_j3d[c],
                                  sample.gt_j2d[c], sample.gt_theta[c],
                                  sample.gt_beta[c], bool(sample.has_3d[c]),
                                  weights))
    n = len(reports)
    total = reports[0].total
    for rep in reports[1:]:
        total = T.add(total, rep.total)
    total = T.scale(total, 1.0 / n)
    return LossReport(total,
                      sum(r.l_3d for r in reports) / n,
                      sum(r.l_2d for r in reports) / n,
                      sum(r.l_smpl for r in reports) / n,
                      sum(r.l_norm for r in reports) / n)


def _blend_reports(video: LossReport, image: LossReport,
                   ratio: float) -> LossReport:
    w_v, w_i = 1.0 - ratio, ratio
    total = T.add(T.scale(video.total, w_v), T.scale(image.total, w_i))
    return LossReport(total,
                      w_v * video.l_3d + w_i * image.l_3d,
                      w_v * video.l_2d + w_i * image.l_2d,
                      w_v * video.l_smpl + w_i * image.l_smpl,
                      w_v * video.l_norm + w_i * image.l_norm)


def train(cfg: RunConfig, out_dir=None) -> TrainResult:
    """Two-stage training on the seed's synthetic clips.

    Stage 1 (first ``steps_stage1`` steps) rotates through single frames
    with temporal attention bypassed. Stage 2 feeds mixed batches: whole
    clips plus single frames, blended at ``stage2_image_ratio``. Writes
    config.txt, loss_log.csv, and final.ckpt when ``out_dir`` is given.
    """
    model = build_model(cfg)
    batch = synth_generate(cfg.seed, cfg.clips, cfg.t_clip, hw=cfg.hw,
                           noise_std=cfg.noise_std, tree=model.tree,
                           p_2d_only=cfg.p_2d_only)
    weights = _loss_weights(cfg)
    params = model.named_params()
    opt = Adam(list(params.values()), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    history = []
    all_clips = range(batch.clips)
    image_step = 0
    ratio = cfg.stage2_image_ratio
    for step in range(cfg.total_steps):
        stage = 1 if step < cfg.steps_stage1 else 2
        if stage == 1:
            # image stage: one rotating frame per clip, temporal bypass
            report = batch_step(model, batch, all_clips, weights,
                                frame=image_step % batch.frames)
            image_step += 1
        elif ratio == 0.0:
            report = batch_step(model, batch, all_clips, weights)
        elif ratio == 1.0:
            report = batch_step(model, batch, all_clips, weights,
                                frame=image_step % batch.frames)
            image_step += 1
        else:
            # mixed batch: whole clips and single frames in the same step,
            # weighted by the configured ratio, so the objective is the
            # same from step to step
            video = batch_step(model, batch, all_clips, weights)
            image = batch_step(model, batch, all_clips, weights,
                               frame=image_step % batch.frames)
            image_step += 1
            report = _blend_reports(video, image, ratio)
        _check_finite(report, step)
        opt.lr = cfg.lr * lr_factor(step, cfg.total_steps)
        opt.zero_grad()
        report.total.backward()
        opt.step()
        history.append(StepRecord(step, stage, opt.lr, report.value(),
                                  report.l_3d, report.l_2d, report.l_smpl,
                                  report.l_norm))

    result = TrainResult(model, batch, history)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(config_to_text(cfg))
        write_loss_log(os.path.join(out_dir, "loss_log.csv"), history)
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), params)
    return result


def write_loss_log(path, history):
    fields = [f.name for f in dataclasses.fields(StepRecord)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(fields) + "\n")
        for rec in history:
            fh.write(",".join(repr(getattr(rec, f)) for f in fields) + "\n")


def evaluate(model: Model, batch: ClipBatch, csv_path=None,
             decode_fn: Callable = None):
    """Per-clip mpjpe / pa_mpjpe / accel (mm) plus their means.

    ``decode_fn(feats, clip) -> SmplParams`` overrides the model decoder
    (used to inject oracle parameters). Returns (rows, mean).
    """
    rows = []
    for clip in range(batch.clips):
        feats, _ = encode(Tensor(batch.obs[clip]), model.encoder,
                          model.patch_embed)
        if decode_fn is not None:
            params = decode_fn(feats, clip)
        else:
            params = model.decoder.decode(feats)
        j3d, _ = smpl_forward(params, model.tree)
        pred, gt = j3d.data, batch.gt_j3d[clip]
        row = {"clip_id": clip, "mpjpe": mpjpe(pred, gt),
               "pa_mpjpe": pa_mpjpe(pred, gt),
               "accel": accel_error(pred, gt) if batch.frames >= 3
               else float("nan")}
        rows.append(row)
    mean = {k: float(np.mean([r[k] for r in rows])) for k in EVAL_COLUMNS}
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("clip_id," + ",".join(EVAL_COLUMNS) + "\n")
            for row in rows:
                fh.write(f"{row['clip_id']}," +
                         ",".join(repr(row[k]) for k in EVAL_COLUMNS) + "\n")
            fh.write("mean," +
                     ",".join(repr(mean[k]) for k in EVAL_COLUMNS) + "\n")
    return rows, mean


def ablation_configs(cfg: RunConfig) -> list:
    """Variant rows: encoder sweep with the iterative decoder, then decoder
    sweep behind the gated parallel encoder, duplicates dropped."""
    variants = []
    for topology in TOPOLOGIES:
        variants.append(dataclasses.replace(
            cfg, encoder=topology, decoder="iterative", tree="smpl"))
    for decoder, tree in (("iterative", "smpl"), ("ktd", "smpl"),
                          ("ktd", "random"), ("ktd", "reverse")):
        variants.append(dataclasses.replace(
            cfg, encoder="parallel_v2", decoder=decoder, tree=tree))
    unique, seen = [], set()
    for variant in variants:
        key = (variant.encoder, variant.decoder, variant.tree)
        if key not in seen:
            seen.add(key)
            unique.append(variant)
    return unique


ABLATION_NOTE = ("# desk-scale ablation on synthetic clips; absolute numbers "
                 "are not comparable to full-scale results, and rows with "
                 "random/reverse trees train on data generated from those "
                 "trees")


def ablate(cfg: RunConfig, out_dir=None) -> list:
    """Train and evaluate every variant row with the shared seed/budget."""
    table = []
    for variant in ablation_configs(cfg):
        result = train(variant)
        _, mean = evaluate(result.model, result.batch)
        table.append({"encoder": variant.encoder, "decoder": variant.decoder,
                      "tree": variant.tree, "final_loss": result.final_loss,
                      **mean})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        columns = ("encoder", "decoder", "tree", "final_loss") + EVAL_COLUMNS
        with open(os.path.join(out_dir, "ablation.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write(ABLATION_NOTE + "\n")
            fh.write(",".join(columns) + "\n")
            for row in table:
                fh.write(",".join(
                    row[c] if isinstance(row[c], str) else repr(row[c])
                    for c in columns) + "\n")
    return table
