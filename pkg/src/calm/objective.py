"""Total training loss and its discriminative ablation variants.

The total in the standard (CALM) mode is

    task + rec + alpha * kl

where the task term is a symmetric InfoNCE over the batch's paired
features and the other two come from the variational head. Ablation modes
swap the variational pair for a direct divergence between the two anchor
distributions (applied unweighted), and BASELINE drops the alignment term
entirely. Every term is batch-mean reduced so magnitudes are comparable
across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .cvae import CvaeOutput, CvaeNoise, CvaeParams, cvae_forward
from .anchors import AnchorSet, Temperature, anchor_probabilities
from .errors import ContractError, DimensionError, EmptyInputError
from .tensor import PROB_FLOOR, Tensor


class LossMode(str, Enum):
    CALM = "CALM"
    KL_DIV = "KL_DIV"
    CROSS_ENTROPY = "CROSS_ENTROPY"
    MSE = "MSE"
    BASELINE = "BASELINE"


@dataclass
class LossConfig:
    alpha: float = 0.1
    mode: LossMode = LossMode.CALM
    task_temperature: float = 1.0 / 0.07
    block_target_grad: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if self.task_temperature <= 0:
            raise ContractError(f"task temperature must be positive, got {self.task_temperature}")
        self.mode = LossMode(self.mode)


def task_loss(video_feats: Tensor, text_feats: Tensor, temp: float) -> Tensor:
    """Symmetric InfoNCE over cosine logits with in-batch negatives.

    Rows of the two matrices are paired; the diagonal holds the positives.
    """
    if video_feats.data.ndim != 2 or text_feats.data.ndim != 2:
        raise DimensionError(
            f"task_loss expects [B, D] matrices, got {video_feats.shape} and {text_feats.shape}"
        )
    b = video_feats.shape[0]
    if b == 0:
        raise EmptyInputError("task_loss: empty batch")
    if text_feats.shape[0] != b:
        raise DimensionError(
            f"batch sizes disagree: {video_feats.shape[0]} videos vs {text_feats.shape[0]} texts"
        )
    logits = T.scale(T.cosine_rows(video_feats, text_feats), float(temp))
    eye = T.const(np.eye(b))

    def ce_diag(mat: Tensor) -> Tensor:
        p = T.softmax_row(mat)
        picked = T.mul(eye, T.log(T.clamp_min(p, PROB_FLOOR)))
        return T.scale(T.sum_all(picked), -1.0 / b)

    v2t = ce_diag(logits)
    t2v = ce_diag(T.transpose(logits))
    return T.scale(T.add(v2t, t2v), 0.5)


def alignment_loss(
    vp: Tensor,
    sp: Tensor,
    mode: LossMode,
    alpha: float,
    cvae_out: CvaeOutput | None = None,
) -> Tensor:
    """Distribution-alignment term: variational (rec + alpha*kl) or a
    direct divergence between the video and text anchor distributions."""
    mode = LossMode(mode)
    if mode is LossMode.CALM:
        if cvae_out is None:
            raise ContractError("CALM mode requires the variational forward output")
        return T.add(cvae_out.rec, T.scale(cvae_out.kl, alpha))
    if mode is LossMode.BASELINE:
        return T.const(np.asarray(0.0))

    v = vp if vp.data.ndim == 2 else T.reshape(vp, (1, vp.shape[0]))
    s = sp if sp.data.ndim == 2 else T.reshape(sp, (1, sp.shape[0]))
    if v.shape != s.shape:
        raise DimensionError(f"distribution shapes disagree: {v.shape} vs {s.shape}")
    rows = v.shape[0]
    if mode is LossMode.MSE:
        d = T.sub(v, s)
        return T.mean_all(T.mul(d, d))
    log_v = T.log(T.clamp_min(v, PROB_FLOOR))
    if mode is LossMode.CROSS_ENTROPY:
        return T.scale(T.sum_all(T.mul(s, log_v)), -1.0 / rows)
    # KL(sp || vp) = sum sp * (log sp - log vp)
    log_s = T.log(T.clamp_min(s, PROB_FLOOR))
    return T.scale(T.sum_all(T.mul(s, T.sub(log_s, log_v))), 1.0 / rows)


@dataclass
class Batch:
    """One training batch: per-frame video rows and paired text rows."""

    frames: Tensor        # [B*T, D]
    texts: Tensor         # [B, D]
    frames_per_clip: int

    def __post_init__(self):
        if self.frames_per_clip < 1:
            raise ContractError("frames_per_clip must be >= 1")
        if self.frames.shape[0] != self.texts.shape[0] * self.frames_per_clip:
            raise DimensionError(
                f"{self.frames.shape[0]} frame rows != "
                f"{self.texts.shape[0]} clips x {self.frames_per_clip} frames"
            )

    @property
    def size(self) -> int:
        return self.texts.shape[0]


@dataclass
class Model:
    """Everything trainable plus the frozen anchor base."""

    anchors: AnchorSet
    temperature: Temperature
    cvae: CvaeParams
    dropout: float = 0.1

    def trainable(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"anchor_offsets": self.anchors.offsets}
        out.update(self.cvae.named())
        if self.temperature.learnable:
            out["temperature"] = self.temperature.value
        return out

    def all_tensors(self) -> dict[str, Tensor]:
        out = {"anchor_base": self.anchors.base, "anchor_offsets": self.anchors.offsets}
        out.update(self.cvae.named())
        out["temperature"] = self.temperature.value
        return out


def total_loss(
    batch: Batch,
    model: Model,
    cfg: LossConfig,
    noise: CvaeNoise | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Compose the full objective for one batch.

    Returns the scalar loss tensor and a per-term report whose entries are
    built from the exact tensors that were summed, so
    report["task"] + report["alignment"] == report["total"] bitwise.
    """
    fused = T.mean_rows_grouped(batch.frames, batch.frames_per_clip)
    task = task_loss(fused, batch.texts, cfg.task_temperature)

    report: dict[str, float] = {}
    if cfg.mode is LossMode.BASELINE:
        total = task
        align = T.const(np.asarray(0.0))
        report["alignment"] = 0.0
    else:
        vp = anchor_probabilities(fused, model.anchors, model.temperature)
        sp = anchor_probabilities(batch.texts, model.anchors, model.temperature)
        if cfg.mode is LossMode.CALM:
            if noise is None:
                raise ContractError("CALM mode requires a noise bundle (eps, masks)")
            out = cvae_forward(vp, sp, model.cvae, noise, cfg.block_target_grad)
            align = alignment_loss(vp, sp, cfg.mode, cfg.alpha, cvae_out=out)
            report["rec"] = out.rec.item()
            report["kl"] = out.kl.item()
        else:
            align = alignment_loss(vp, sp, cfg.mode, cfg.alpha)
        total = T.add(task, align)
        report["alignment"] = align.item()

    report["task"] = task.item()
    report["total"] = total.item()
    report["mode"] = cfg.mode.value
    return total, report
