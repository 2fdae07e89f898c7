"""Pixel-per-zone PPM rendering of frames and correlation matrices."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def to_bytes(values) -> np.ndarray:
    """Map ``[-1, 1]`` onto ``0..255``; NaN renders as mid-grey."""
    v = np.nan_to_num(np.asarray(values, dtype=np.float64), nan=0.0)
    return np.clip(np.round(255.0 * (v + 1.0) / 2.0), 0, 255).astype(np.uint8)


def ppm_bytes(image) -> bytes:
    """Binary P6 image from an ``(M, N)`` grey or ``(M, N, 3)`` RGB array in ``[-1, 1]``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (M, N) or (M, N, 3), got {img.shape}")
    rows, cols = img.shape[:2]
    return f"P6\n{cols} {rows}\n255\n".encode("ascii") + to_bytes(img).tobytes()


def write_ppm(path, image) -> None:
    Path(path).write_bytes(ppm_bytes(image))


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    cols, rows = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols, 3)


def frame_image(frame, channel: int | None = 0) -> np.ndarray:
    """``(M, N, F)`` frame -> grey image of one channel, or RGB of channels 0-2."""
    f = np.asarray(frame, dtype=np.float64)
    if channel is None:
        if f.shape[2] < 3:
            raise ValueError("RGB rendering needs at least three channels")
        return f[..., :3]
    return f[..., channel]
