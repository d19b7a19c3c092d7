"""Anchor-prompt and video/caption corpus export.

Anchor export turns each class label into a prompt via a template with a
single {label} placeholder, encodes the prompts in label order, and writes
one store row per label. Learnable per-anchor offsets are the consumer's
parameters and are never baked into the store.

Corpus export uniformly samples T frames per video (video files or frame
directories), resizes them to 224x224, and writes a frame store with T
consecutive rows per clip plus one caption row per clip, id-aligned.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .encoders import Encoder
from .errors import ExportError, PairingError
from .store import write_embedding_store

PLACEHOLDER = "{label}"
DEFAULT_TEMPLATE = "The content of {label}"
_VIDEO_SUFFIXES = {".mp4", ".avi", ".mkv", ".mov", ".webm"}
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
FRAME_SIZE = 224


def render_prompts(labels: list[str], template: str) -> list[str]:
    if not labels:
        raise ExportError("label list is empty")
    if template.count(PLACEHOLDER) != 1:
        raise ExportError(
            f"template must contain exactly one {PLACEHOLDER} placeholder, got: {template!r}"
        )
    seen: set[str] = set()
    for lab in labels:
        if not lab.strip():
            raise ExportError("empty label in label list")
        if lab in seen:
            raise ExportError(f"duplicate label: {lab!r}")
        seen.add(lab)
    return [template.replace(PLACEHOLDER, lab) for lab in labels]


def export_anchors(
    labels: list[str],
    template: str,
    encoder: Encoder,
    out_dir: str | Path,
) -> Path:
    """Write anchors.calm (one row per label) plus a manifest with the labels."""
    prompts = render_prompts(labels, template)
    embeddings = encoder.encode_texts(prompts)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_embedding_store(out / "anchors.calm", embeddings)
    manifest = {
        "anchors": "anchors.calm",
        "labels": list(labels),
        "template": template,
    }
    path = out / "anchor_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class ExportJob:
    videos: list[Path]            # video files or frame directories, in output order
    captions: dict[str, str]      # id -> caption; ids are input stems
    frames: int = 12
    out_dir: Path = Path("export")
    anchor_labels: list[str] | None = None
    template: str = DEFAULT_TEMPLATE
    split: str = "test"
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.frames < 1:
            raise ExportError(f"frame count must be >= 1, got {self.frames}")
        if self.split not in ("train", "val", "test"):
            raise ExportError(f"split must be train/val/test, got {self.split!r}")


def _read_frame_dir(path: Path) -> np.ndarray | None:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        return None
    frames = []
    for f in files:
        img = cv2.imread(str(f), cv2.IMREAD_COLOR)
        if img is None:
            return None
        frames.append(img)
    return np.stack(frames)


def _read_video_file(path: Path) -> np.ndarray | None:
    cap = cv2.VideoCapture(str(path))
    frames = []
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            frames.append(frame)
    finally:
        cap.release()
    if not frames:
        return None
    return np.stack(frames)


def sample_frames(all_frames: np.ndarray, t: int) -> np.ndarray:
    """Uniform temporal sampling with repetition when the clip is short."""
    n = all_frames.shape[0]
    idx = np.round(np.linspace(0, n - 1, t)).astype(int)
    picked = all_frames[idx]
    resized = [
        cv2.resize(f, (FRAME_SIZE, FRAME_SIZE), interpolation=cv2.INTER_AREA)
        for f in picked
    ]
    # BGR (opencv) -> RGB for the encoder
    return np.stack(resized)[..., ::-1].copy()


def load_clip(path: Path) -> np.ndarray | None:
    if path.is_dir():
        return _read_frame_dir(path)
    if path.suffix.lower() in _VIDEO_SUFFIXES:
        return _read_video_file(path)
    return None


def export_corpus(job: ExportJob, encoder: Encoder) -> Path:
    """Write videos.calm / texts.calm / manifest.json; returns the manifest path.

    Undecodable inputs are skipped with a warning and left out of the
    manifest; a caption missing for a decodable input aborts.
    """
    ids: list[str] = []
    frame_blocks: list[np.ndarray] = []
    for src in job.videos:
        clip_id = src.stem if not src.is_dir() else src.name
        frames = load_clip(src)
        if frames is None:
            print(f"warning: skipping undecodable input {src}", file=sys.stderr)
            job.skipped.append(clip_id)
            continue
        if clip_id not in job.captions:
            raise PairingError(f"no caption for id '{clip_id}'")
        ids.append(clip_id)
        frame_blocks.append(sample_frames(frames, job.frames))
    if not ids:
        raise ExportError("no decodable inputs")

    images = np.concatenate(frame_blocks, axis=0)
    video_embeddings = encoder.encode_images(images)
    text_embeddings = encoder.encode_texts([job.captions[i] for i in ids])

    out = job.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_embedding_store(out / "videos.calm", video_embeddings)
    write_embedding_store(out / "texts.calm", text_embeddings)

    manifest: dict = {
        "ids": ids,
        "pairing": {
            "video": "videos.calm",
            "text": "texts.calm",
            "frames_per_video": job.frames,
        },
        "split": {"train": [], "val": [], "test": []},
    }
    manifest["split"][job.split] = list(ids)
    if job.anchor_labels is not None:
        anchor_manifest = export_anchors(job.anchor_labels, job.template, encoder, out)
        anchor_doc = json.loads(anchor_manifest.read_text())
        manifest["labels"] = anchor_doc["labels"]
        manifest["anchors"] = anchor_doc["anchors"]
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
