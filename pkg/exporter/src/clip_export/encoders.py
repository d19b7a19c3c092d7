"""Text/image encoders behind one small interface.

ClipEncoder wraps a pretrained two-tower model (torch + transformers,
installed via the  [clip]  extra) and emits raw, unnormalized embeddings;
any normalization belongs to the consumer so synthetic and real corpora
share one code path.

HashedEncoder is a deterministic stand-in for tests and offline plumbing:
each input is hashed and the digest seeds a Gaussian vector, so outputs
are stable across platforms and runs while remaining input-sensitive.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np


class Encoder(Protocol):
    dim: int

    def encode_texts(self, texts: list[str]) -> np.ndarray: ...

    def encode_images(self, images: np.ndarray) -> np.ndarray: ...


class HashedEncoder:
    """Digest-seeded Gaussian embeddings; no model weights required."""

    def __init__(self, dim: int = 512):
        self.dim = dim

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        seed = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(seed).standard_normal(self.dim)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._vector(t.encode("utf-8")) for t in texts])

    def encode_images(self, images: np.ndarray) -> np.ndarray:
        return np.stack([self._vector(img.tobytes()) for img in images])


class ClipEncoder:
    """Pretrained CLIP towers. images: [N, H, W, 3] uint8 RGB."""

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32",
                 batch_size: int = 32, device: str = "cpu"):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_name)
        self.batch_size = batch_size
        self.device = device
        self.dim = self.model.config.projection_dim

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for i in range(0, len(texts), self.batch_size):
                batch = self.processor(
                    text=texts[i:i + self.batch_size],
                    return_tensors="pt", padding=True, truncation=True,
                ).to(self.device)
                feats = self.model.get_text_features(**batch)
                chunks.append(feats.cpu().numpy())
        return np.concatenate(chunks, axis=0).astype(np.float64)

    def encode_images(self, images: np.ndarray) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for i in range(0, len(images), self.batch_size):
                batch = self.processor(
                    images=list(images[i:i + self.batch_size]), return_tensors="pt"
                ).to(self.device)
                feats = self.model.get_image_features(**batch)
                chunks.append(feats.cpu().numpy())
        return np.concatenate(chunks, axis=0).astype(np.float64)


def make_encoder(name: str, dim: int = 512, model_name: str | None = None) -> Encoder:
    if name == "hashed":
        return HashedEncoder(dim=dim)
    if name == "clip":
        kwargs = {"model_name": model_name} if model_name else {}
        return ClipEncoder(**kwargs)
    from .errors import ExportError

    raise ExportError(f"unknown encoder '{name}' (expected 'hashed' or 'clip')")
