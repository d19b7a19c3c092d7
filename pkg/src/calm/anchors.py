"""Class anchors and per-modality anchor probability distributions.

An anchor set is a frozen matrix of anchor embeddings plus a learnable
per-anchor offset; the effective anchors are their sum, recomputed on every
forward so gradients reach the offsets. A modality feature is turned into a
probability vector over anchors by temperature-scaled cosine similarity
followed by a row softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, EmptyInputError
from .tensor import Tensor


@dataclass
class AnchorSet:
    """K anchor embeddings with trainable offsets and label metadata."""

    base: Tensor                  # [K, D], frozen
    offsets: Tensor               # [K, D], learnable
    labels: list[str]
    template: str = ""

    def __post_init__(self):
        if self.base.data.ndim != 2 or self.base.shape[0] < 1:
            raise DimensionError(f"anchor base must be [K>=1, D], got {self.base.shape}")
        if self.offsets.shape != self.base.shape:
            raise DimensionError(
                f"offset shape {self.offsets.shape} != base shape {self.base.shape}"
            )
        if len(self.labels) != self.base.shape[0]:
            raise ContractError(
                f"{len(self.labels)} labels for {self.base.shape[0]} anchors"
            )

    @property
    def count(self) -> int:
        return self.base.shape[0]

    @property
    def dim(self) -> int:
        return self.base.shape[1]

    def effective(self) -> Tensor:
        """base + offsets, rebuilt per call so offset gradients flow."""
        return T.add(self.base, self.offsets)

    @classmethod
    def from_matrix(cls, base: np.ndarray, labels: list[str], template: str = "") -> "AnchorSet":
        b = T.const(base)
        return cls(
            base=b,
            offsets=T.zeros(b.shape, requires_grad=True),
            labels=list(labels),
            template=template,
        )


@dataclass
class Temperature:
    """Sharpness of the anchor softmax; positive, optionally learnable."""

    value: Tensor
    learnable: bool = False

    @classmethod
    def fixed(cls, tau: float) -> "Temperature":
        cls._check(tau)
        return cls(value=T.const(np.asarray(float(tau))), learnable=False)

    @classmethod
    def trainable(cls, tau: float) -> "Temperature":
        cls._check(tau)
        return cls(value=T.tensor(float(tau), requires_grad=True), learnable=True)

    @staticmethod
    def _check(tau: float) -> None:
        if not tau > 0:
            raise ContractError(f"temperature must be positive, got {tau}")


@dataclass
class VideoFeatures:
    """Per-frame embeddings [T, D] and their pooled clip feature [D]."""

    frames: Tensor
    fused: Tensor = field(init=False)

    def __post_init__(self):
        if self.frames.data.ndim != 2 or self.frames.shape[0] < 1:
            raise EmptyInputError(f"need at least one frame row, got {self.frames.shape}")
        self.fused = fuse_frames(self.frames)


@dataclass
class TextFeatures:
    """Sentence-level embedding [D]."""

    cls: Tensor

    def __post_init__(self):
        if self.cls.data.ndim != 1:
            raise DimensionError(f"text feature must be a vector, got {self.cls.shape}")
        if not np.isfinite(self.cls.data).all():
            raise ContractError("text feature contains NaN/Inf")


@dataclass
class AnchorDistribution:
    """Probability vector over the K anchors for one sample."""

    probs: Tensor
    modality: Literal["video", "text"]

    def __post_init__(self):
        p = self.probs.data
        if p.ndim != 1:
            raise DimensionError(f"distribution must be a vector, got {p.shape}")
        if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ContractError("probabilities must be nonnegative and sum to 1")


def fuse_frames(frames: Tensor) -> Tensor:
    """Arithmetic mean over frame rows; differentiable."""
    if frames.data.ndim != 2 or frames.shape[0] < 1:
        raise EmptyInputError(f"fuse_frames needs [T>=1, D], got {frames.shape}")
    return T.mean_rows(frames)


def anchor_probabilities(features: Tensor, anchors: AnchorSet, temp: Temperature) -> Tensor:
    """softmax(tau * cos(features, effective anchors)) over the anchor axis.

    features may be a single vector [D] or a batch [B, D]; the output matches
    ([K] or [B, K]).
    """
    sims = T.cosine_rows(features, anchors.effective())
    return T.softmax_row(T.smul(sims, temp.value))


def video_anchor_distribution(
    video: VideoFeatures, anchors: AnchorSet, temp: Temperature
) -> AnchorDistribution:
    return AnchorDistribution(
        probs=anchor_probabilities(video.fused, anchors, temp), modality="video"
    )


def text_anchor_distribution(
    text: TextFeatures, anchors: AnchorSet, temp: Temperature
) -> AnchorDistribution:
    return AnchorDistribution(
        probs=anchor_probabilities(text.cls, anchors, temp), modality="text"
    )
