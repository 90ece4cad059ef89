"""Pixel-image I/O and conversion helpers.

Conventions used across the package:
  - RGB images are float arrays of shape (H, W, 3) with values in [0, 1].
  - RGBA renders are float arrays of shape (H, W, 4), alpha in [0, 1].
  - Depth maps are float arrays of shape (H, W) in [0, 1], 1 = nearest.

Files: PNG/JPEG for color, 16-bit grayscale PNG or .npy for depth.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError


def load_image(path: str | Path) -> np.ndarray:
    """Load an RGB image as float (H, W, 3) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def load_rgba(path: str | Path) -> np.ndarray:
    """Load an RGBA image as float (H, W, 4) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
    return arr


def load_depth(path: str | Path) -> np.ndarray:
    """Load a depth map as float (H, W) in [0, 1].

    Accepts 16-bit (or 8-bit) grayscale PNG, or a .npy float array which is
    clipped to [0, 1].
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float64)
        return np.clip(arr, 0.0, 1.0)
    with Image.open(path) as im:
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "I":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr


def save_image(arr: np.ndarray, path: str | Path) -> None:
    """Write a float [0,1] RGB/RGBA array as PNG (deterministic bytes)."""
    arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "RGBA" if data.ndim == 3 and data.shape[2] == 4 else "RGB"
    if data.ndim == 2:
        mode = "L"
    Image.fromarray(data, mode=mode).save(path, format="PNG")


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


def content_hash(arr: np.ndarray) -> str:
    """sha256 over dtype/shape/bytes; keys caches and run records."""
    h = hashlib.sha256()
    a = np.ascontiguousarray(arr)
    h.update(str(a.dtype).encode())
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def require_rgb(arr: np.ndarray, what: str = "image") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"{what} must be (H, W, 3), got {arr.shape}")
    return arr


def require_rgba(arr: np.ndarray, what: str = "render") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 4:
        raise ContractError(f"{what} must be (H, W, 4), got {arr.shape}")
    return arr


def resize(arr: np.ndarray, size_hw: tuple[int, int], mode: str = "bilinear") -> np.ndarray:
    """Resize a float image/array to (H, W) with PIL; 'nearest' for masks."""
    h, w = size_hw
    resample = Image.Resampling.BILINEAR if mode == "bilinear" else Image.Resampling.NEAREST
    if arr.ndim == 2:
        im = Image.fromarray(arr.astype(np.float32), mode="F")
        return np.asarray(im.resize((w, h), resample=resample), dtype=np.float64)
    chans = [
        np.asarray(
            Image.fromarray(arr[:, :, c].astype(np.float32), mode="F").resize((w, h), resample=resample),
            dtype=np.float64,
        )
        for c in range(arr.shape[2])
    ]
    return np.stack(chans, axis=2)
