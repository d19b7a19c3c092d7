"""Writer for the shared embedding-store byte layout.

Little-endian header: magic "CALM", version u32=1, dtype u32=0 (float32),
rows u64, dim u64; then rows*dim float32 values, row-major. File size is
exactly 28 + 4*rows*dim bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ExportError

_HEADER = struct.Struct("<4sIIQQ")


def write_embedding_store(path: str | Path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ExportError(f"store payload must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ExportError("store payload contains NaN/Inf")
    rows, dim = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"CALM", 1, 0, rows, dim))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
