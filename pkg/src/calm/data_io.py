"""Embedding stores, corpus manifests, and the synthetic paired corpus.

Store layout (all little-endian):

    bytes 0..3    magic "CALM"
    bytes 4..7    version  u32 == 1
    bytes 8..11   dtype    u32 == 0 (32-bit float)
    bytes 12..19  rows     u64
    bytes 20..27  dim      u64
    bytes 28..    payload  rows*dim float32, row-major

A file is valid iff its size is exactly 28 + 4*rows*dim. Values are
widened to float64 on load; compute happens in 64-bit, storage in 32-bit.

The synthetic generator models a paired video/text corpus where every clip
has its own identity inside a class, but the text keeps only a truncated
projection of it: class centers are drawn in R^D, each sample gets a
per-clip latent near its center, frames jitter around that latent, and the
text is the latent's first `imbalance_keep` coordinates plus noise. With
`imbalance_keep < D` several clips become plausible matches for one text,
which is exactly the one-to-many regime the head is meant to absorb.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, StoreFormatError
from .rng import RngHub

MAGIC = b"CALM"
VERSION = 1
DTYPE_F32 = 0
HEADER = struct.Struct("<4sIIQQ")
HEADER_BYTES = HEADER.size  # 28


def write_store(path: str | Path, matrix: np.ndarray) -> None:
    """Write a [rows, dim] matrix as a store file (float32 payload)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise StoreFormatError(f"store payload must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise StoreFormatError("store payload contains NaN/Inf")
    rows, dim = m.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, DTYPE_F32, rows, dim))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_store(path: str | Path) -> np.ndarray:
    """Read a store file back as float64, validating every header field."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER_BYTES:
        raise StoreFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, dtype, rows, dim = HEADER.unpack(blob[:HEADER_BYTES])
    if magic != MAGIC:
        raise StoreFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise StoreFormatError(f"{path}: unsupported dtype code {dtype}")
    expected = HEADER_BYTES + 4 * rows * dim
    if len(blob) != expected:
        raise StoreFormatError(
            f"{path}: file size {len(blob)} != expected {expected} for rows={rows} dim={dim}"
        )
    payload = np.frombuffer(blob, dtype="<f4", offset=HEADER_BYTES)
    return payload.astype(np.float64).reshape(rows, dim)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class Manifest:
    """Corpus description tying sample ids to the paired stores.

    Store paths are kept relative to the manifest's directory. The video
    store holds frames_per_video consecutive rows per sample, in id order;
    the text store holds one row per sample.
    """

    ids: list[str]
    video_store: str
    text_store: str
    frames_per_video: int
    split: dict[str, list[str]]
    labels: list[str] | None = None
    anchor_store: str | None = None

    def to_json(self) -> str:
        doc = {
            "ids": self.ids,
            "pairing": {
                "video": self.video_store,
                "text": self.text_store,
                "frames_per_video": self.frames_per_video,
            },
            "split": self.split,
        }
        if self.labels is not None:
            doc["labels"] = self.labels
        if self.anchor_store is not None:
            doc["anchors"] = self.anchor_store
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        doc = json.loads(text)
        try:
            pairing = doc["pairing"]
            man = cls(
                ids=list(doc["ids"]),
                video_store=pairing["video"],
                text_store=pairing["text"],
                frames_per_video=int(pairing.get("frames_per_video", 1)),
                split={k: list(v) for k, v in doc["split"].items()},
                labels=list(doc["labels"]) if "labels" in doc else None,
                anchor_store=doc.get("anchors"),
            )
        except KeyError as exc:
            raise ConfigError(f"manifest missing required field {exc}") from exc
        if man.frames_per_video < 1:
            raise ConfigError(f"frames_per_video must be >= 1, got {man.frames_per_video}")
        known = set(man.ids)
        for name, members in man.split.items():
            stray = [s for s in members if s not in known]
            if stray:
                raise ConfigError(f"split '{name}' references unknown ids: {stray[:3]}")
        return man


def save_manifest(man: Manifest, path: str | Path) -> None:
    Path(path).write_text(man.to_json())


def load_manifest(path: str | Path) -> Manifest:
    return Manifest.from_json(Path(path).read_text())


@dataclass
class Corpus:
    """Loaded, validated dataset: arrays plus the manifest bookkeeping."""

    manifest: Manifest
    videos: np.ndarray   # [N*T, D]
    texts: np.ndarray    # [N, D]
    anchors: np.ndarray | None
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {sid: i for i, sid in enumerate(self.manifest.ids)}

    @property
    def frames_per_video(self) -> int:
        return self.manifest.frames_per_video

    def split_indices(self, name: str) -> np.ndarray:
        if name not in self.manifest.split:
            raise ConfigError(f"unknown split '{name}' (have {sorted(self.manifest.split)})")
        return np.array([self.index[sid] for sid in self.manifest.split[name]], dtype=np.int64)

    def frames_of(self, sample_indices: np.ndarray) -> np.ndarray:
        """Stacked frame rows for the given samples, T consecutive rows each."""
        t = self.frames_per_video
        rows = (sample_indices[:, None] * t + np.arange(t)[None, :]).reshape(-1)
        return self.videos[rows]


def load_corpus(manifest_path: str | Path) -> Corpus:
    man = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    videos = read_store(base / man.video_store)
    texts = read_store(base / man.text_store)
    n = len(man.ids)
    if texts.shape[0] != n:
        raise ConfigError(
            f"text store has {texts.shape[0]} rows for {n} manifest ids"
        )
    if videos.shape[0] != n * man.frames_per_video:
        raise ConfigError(
            f"video store has {videos.shape[0]} rows, expected "
            f"{n} x {man.frames_per_video}"
        )
    anchors = None
    if man.anchor_store is not None:
        anchors = read_store(base / man.anchor_store)
        if man.labels is not None and anchors.shape[0] != len(man.labels):
            raise ConfigError(
                f"anchor store has {anchors.shape[0]} rows for {len(man.labels)} labels"
            )
    return Corpus(manifest=man, videos=videos, texts=texts, anchors=anchors)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    n_classes: int = 8
    samples_per_class: int = 32
    dim: int = 16
    frames: int = 4
    video_noise: float = 0.2
    text_noise: float = 0.2
    imbalance_keep: int = 4
    sample_spread: float = 0.3   # per-clip identity scale around its class center
    split_fractions: tuple[float, float, float] = (0.75, 0.125, 0.125)

    def __post_init__(self):
        if self.imbalance_keep < 1 or self.imbalance_keep > self.dim:
            raise ConfigError(
                f"imbalance_keep must satisfy 1 <= m <= dim, got {self.imbalance_keep} "
                f"with dim {self.dim}"
            )
        if min(self.video_noise, self.text_noise, self.sample_spread) < 0:
            raise ConfigError("noise and spread parameters must be >= 0")
        if self.n_classes < 1 or self.samples_per_class < 1 or self.frames < 1:
            raise ConfigError("counts must be >= 1")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split_fractions}")


def generate_synthetic(cfg: SyntheticConfig, seed: int, out_dir: str | Path) -> Path:
    """Write a paired corpus plus class anchors; returns the manifest path.

    Deterministic byte-for-byte in (cfg, seed). Anchors are the class
    centers themselves, labelled class_00..; stores and manifest land in
    out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hub = RngHub(seed)
    r_centers = hub.stream("centers")
    r_samples = hub.stream("samples")
    r_split = hub.stream("split")

    d, t, m = cfg.dim, cfg.frames, cfg.imbalance_keep
    centers = r_centers.standard_normal((cfg.n_classes, d))

    ids: list[str] = []
    frames_rows = []
    text_rows = []
    for c in range(cfg.n_classes):
        for s in range(cfg.samples_per_class):
            latent = centers[c] + cfg.sample_spread * r_samples.standard_normal(d)
            clip = latent[None, :] + cfg.video_noise * r_samples.standard_normal((t, d))
            text = np.zeros(d)
            text[:m] = latent[:m]
            text += cfg.text_noise * r_samples.standard_normal(d)
            ids.append(f"c{c:03d}_s{s:04d}")
            frames_rows.append(clip)
            text_rows.append(text)

    videos = np.concatenate(frames_rows, axis=0)
    texts = np.stack(text_rows, axis=0)

    # stratified split: permute within each class, then cut by fractions
    split: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    spc = cfg.samples_per_class
    n_val = max(1, int(round(spc * cfg.split_fractions[1])))
    n_test = max(1, int(round(spc * cfg.split_fractions[2])))
    n_train = spc - n_val - n_test
    if n_train < 1:
        raise ConfigError("split fractions leave no training samples per class")
    for c in range(cfg.n_classes):
        order = r_split.permutation(spc)
        members = [ids[c * spc + k] for k in order]
        split["train"].extend(members[:n_train])
        split["val"].extend(members[n_train:n_train + n_val])
        split["test"].extend(members[n_train + n_val:])

    write_store(out / "videos.calm", videos)
    write_store(out / "texts.calm", texts)
    write_store(out / "anchors.calm", centers)
    man = Manifest(
        ids=ids,
        video_store="videos.calm",
        text_store="texts.calm",
        frames_per_video=t,
        split=split,
        labels=[f"class_{c:02d}" for c in range(cfg.n_classes)],
        anchor_store="anchors.calm",
    )
    manifest_path = out / "manifest.json"
    save_manifest(man, manifest_path)
    return manifest_path


def synthetic_config_dict(cfg: SyntheticConfig) -> dict:
    doc = asdict(cfg)
    doc["split_fractions"] = list(cfg.split_fractions)
    return doc
