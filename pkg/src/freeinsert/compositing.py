"""Pixel-space assembly: paste the rendered object onto the background,
derive the editing mask, and build the full-canvas depth condition.

Resampling policy: bilinear for color and depth, nearest/threshold for
masks (mask values bleed under bilinear). No-op transforms (scale 1,
rotation 0) are skipped so untouched pixels stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import BackendError, ContractError, PlacementError
from .images import require_rgb, require_rgba

MIN_BG_SIDE = 64
DEFAULT_DILATE_RADIUS = 8


@dataclass(frozen=True)
class DepthMap:
    """2D depth in [0, 1], 1 = nearest to the camera."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ContractError(f"DepthMap must be 2D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("DepthMap values must be finite")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ContractError("DepthMap values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class RenderedObject:
    """User-posed object render: RGBA + aligned depth + view provenance."""

    rgba: np.ndarray
    depth: DepthMap
    view_tag: str = ""

    def __post_init__(self):
        rgba = require_rgba(self.rgba)
        object.__setattr__(self, "rgba", rgba)
        a = rgba[:, :, 3]
        if a.min() < 0.0 or a.max() > 1.0:
            raise ContractError("render alpha must lie in [0, 1]")
        if self.depth.shape != rgba.shape[:2]:
            raise ContractError(
                f"render depth {self.depth.shape} not aligned with rgba {rgba.shape[:2]}"
            )


@dataclass(frozen=True)
class Placement:
    """Where the transformed render lands on the background canvas."""

    x: int
    y: int
    scale: float = 1.0
    rotation_deg: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ContractError(f"placement scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class MaskGrid:
    """Editing mask at pixel and latent resolution.

    latent_mask is the pixel mask max-pooled by the VAE scale factor
    (any covered pixel sets the cell) and broadcastable across channels.
    """

    pixel_mask: np.ndarray
    latent_mask: np.ndarray

    def __post_init__(self):
        pm = np.asarray(self.pixel_mask).astype(bool)
        lm = np.asarray(self.latent_mask).astype(bool)
        object.__setattr__(self, "pixel_mask", pm)
        object.__setattr__(self, "latent_mask", lm)
        if pm.ndim != 2:
            raise ContractError(f"pixel_mask must be 2D, got {pm.shape}")
        if lm.ndim != 3:
            raise ContractError(f"latent_mask must be 3D, got {lm.shape}")


class DepthEstimator(Protocol):
    """Monocular depth backend: RGB image -> DepthMap."""

    def estimate(self, image: np.ndarray) -> DepthMap: ...


class LuminanceDepthEstimator:
    """Cheap deterministic depth proxy: smoothed luminance, renormalized.

    Stands in where a learned monocular estimator is not available; the
    real estimator plugs in through the same protocol.
    """

    def __init__(self, sigma: float = 3.0):
        self.sigma = sigma

    def estimate(self, image: np.ndarray) -> DepthMap:
        img = require_rgb(image)
        luma = 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
        smooth = ndimage.gaussian_filter(luma, sigma=self.sigma)
        lo, hi = smooth.min(), smooth.max()
        if hi > lo:
            smooth = (smooth - lo) / (hi - lo)
        else:
            smooth = np.zeros_like(smooth)
        return DepthMap(values=smooth)


def _resample_channel(arr: np.ndarray, size_wh: tuple[int, int]) -> np.ndarray:
    im = Image.fromarray(arr.astype(np.float32), mode="F")
    return np.asarray(im.resize(size_wh, resample=Image.Resampling.BILINEAR), dtype=np.float64)


def _rotate_channel(arr: np.ndarray, deg: float) -> np.ndarray:
    im = Image.fromarray(arr.astype(np.float32), mode="F")
    out = im.rotate(-deg, resample=Image.Resampling.BILINEAR, expand=True, fillcolor=0.0)
    return np.asarray(out, dtype=np.float64)


def _transform_render(render: RenderedObject, place: Placement) -> tuple[np.ndarray, np.ndarray]:
    """Scale then rotate the RGBA render and its depth. Returns (rgba, depth)."""
    rgba = render.rgba
    depth = render.depth.values
    h, w = rgba.shape[:2]
    tw, th = max(1, round(w * place.scale)), max(1, round(h * place.scale))
    if (tw, th) != (w, h):
        rgba = np.stack([_resample_channel(rgba[:, :, c], (tw, th)) for c in range(4)], axis=2)
        depth = _resample_channel(depth, (tw, th))
    if place.rotation_deg % 360.0 != 0.0:
        rgba = np.stack([_rotate_channel(rgba[:, :, c], place.rotation_deg) for c in range(4)], axis=2)
        depth = _rotate_channel(depth, place.rotation_deg)
    rgba = np.clip(rgba, 0.0, 1.0)
    depth = np.clip(depth, 0.0, 1.0)
    return rgba, depth


def _overlap(place: Placement, render_hw: tuple[int, int], bg_hw: tuple[int, int]):
    """Clipped destination/source slices for pasting at (x, y)."""
    rh, rw = render_hw
    bh, bw = bg_hw
    x0, y0 = place.x, place.y
    dst_x0, dst_y0 = max(0, x0), max(0, y0)
    dst_x1, dst_y1 = min(bw, x0 + rw), min(bh, y0 + rh)
    if dst_x0 >= dst_x1 or dst_y0 >= dst_y1:
        sug = {
            "x": int(np.clip(x0, 1 - rw, bw - 1)),
            "y": int(np.clip(y0, 1 - rh, bh - 1)),
        }
        raise PlacementError(
            f"placement ({x0}, {y0}) with render {rw}x{rh} does not intersect a "
            f"{bw}x{bh} background",
            suggestion=sug,
        )
    src_x0, src_y0 = dst_x0 - x0, dst_y0 - y0
    src_x1, src_y1 = src_x0 + (dst_x1 - dst_x0), src_y0 + (dst_y1 - dst_y0)
    return (slice(dst_y0, dst_y1), slice(dst_x0, dst_x1)), (slice(src_y0, src_y1), slice(src_x0, src_x1))


def _disk(radius: int) -> np.ndarray:
    if radius < 1:
        return np.ones((1, 1), dtype=bool)
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (yy * yy + xx * xx) <= radius * radius


def alpha_footprint(render: RenderedObject, place: Placement, bg_hw: tuple[int, int]) -> np.ndarray:
    """Undilated object footprint on the canvas: resampled alpha > 0.5."""
    rgba, _ = _transform_render(render, place)
    dst, src = _overlap(place, rgba.shape[:2], bg_hw)
    fp = np.zeros(bg_hw, dtype=bool)
    fp[dst] = rgba[src][:, :, 3] > 0.5
    return fp


def paste(
    render: RenderedObject,
    bg: np.ndarray,
    place: Placement,
    *,
    dilate_radius: int = DEFAULT_DILATE_RADIUS,
    latent_scale_factor: int = 8,
    mode: str = "alpha",
) -> tuple[np.ndarray, MaskGrid]:
    """Composite the transformed render onto the background.

    mode="alpha": out = a*render + (1-a)*bg; mode="hard": binary paste of the
    footprint. Pixels with resampled alpha exactly 0 are bit-identical to bg.
    pixel_mask = (alpha > 0.5) dilated by `dilate_radius` background pixels.
    """
    bg = require_rgb(bg, "background")
    bh, bw = bg.shape[:2]
    if bh < MIN_BG_SIDE or bw < MIN_BG_SIDE:
        raise ContractError(f"background must be at least {MIN_BG_SIDE}x{MIN_BG_SIDE}, got {bw}x{bh}")
    if mode not in ("alpha", "hard"):
        raise ContractError(f"unknown paste mode {mode!r}")

    rgba, _ = _transform_render(render, place)
    dst, src = _overlap(place, rgba.shape[:2], (bh, bw))

    out = bg.copy()
    patch = rgba[src]
    a = patch[:, :, 3:4]
    region = out[dst]
    if mode == "alpha":
        blended = a * patch[:, :, :3] + (1.0 - a) * region
    else:
        blended = np.where(a > 0.5, patch[:, :, :3], region)
    # selection keeps alpha=0 pixels bit-exact regardless of float rounding
    out[dst] = np.where(a > 0.0, blended, region)

    footprint = np.zeros((bh, bw), dtype=bool)
    footprint[dst] = patch[:, :, 3] > 0.5
    if dilate_radius > 0 and footprint.any():
        pixel_mask = ndimage.binary_dilation(footprint, structure=_disk(dilate_radius))
    else:
        pixel_mask = footprint
    latent_mask = derive_latent_mask(pixel_mask, latent_scale_factor)
    return out, MaskGrid(pixel_mask=pixel_mask, latent_mask=latent_mask)


def compose_depth(
    render: RenderedObject,
    bg: np.ndarray,
    place: Placement,
    bg_depth_source: str = "constant_far",
    estimator: DepthEstimator | None = None,
) -> DepthMap:
    """Full-canvas depth condition: rendered depth inside the object
    footprint, estimator output (or constant far plane) outside, then
    renormalized to [0, 1]."""
    bg = require_rgb(bg, "background")
    bh, bw = bg.shape[:2]
    if bh < MIN_BG_SIDE or bw < MIN_BG_SIDE:
        raise ContractError(f"background must be at least {MIN_BG_SIDE}x{MIN_BG_SIDE}, got {bw}x{bh}")

    rgba, depth = _transform_render(render, place)
    dst, src = _overlap(place, rgba.shape[:2], (bh, bw))

    if bg_depth_source == "estimator":
        if estimator is None:
            raise BackendError(
                "depth estimator backend unavailable; rerun with bg_depth_source='constant_far'"
            )
        full = estimator.estimate(bg).values.copy()
    elif bg_depth_source == "constant_far":
        full = np.zeros((bh, bw), dtype=np.float64)
    else:
        raise ContractError(f"unknown bg_depth_source {bg_depth_source!r}")

    inside = rgba[src][:, :, 3] > 0.5
    region = full[dst]
    full[dst] = np.where(inside, depth[src], region)

    lo, hi = full.min(), full.max()
    if hi > lo:
        full = (full - lo) / (hi - lo)
    return DepthMap(values=full)


def derive_latent_mask(pixel_mask: np.ndarray, scale_factor: int) -> np.ndarray:
    """Max-pool the pixel mask to latent resolution (any covered -> 1).

    Non-divisible sizes are zero-padded up to the next stride multiple before
    pooling, so the pooled grid is ceil-sized and stays conservative. Returns
    a (1, h, w) boolean array that broadcasts across latent channels.
    """
    pm = np.asarray(pixel_mask).astype(bool)
    if pm.ndim != 2:
        raise ContractError(f"pixel_mask must be 2D, got {pm.shape}")
    if scale_factor < 1:
        raise ContractError(f"scale_factor must be >= 1, got {scale_factor}")
    h, w = pm.shape
    ph = (scale_factor - h % scale_factor) % scale_factor
    pw = (scale_factor - w % scale_factor) % scale_factor
    if ph or pw:
        pm = np.pad(pm, ((0, ph), (0, pw)), mode="constant", constant_values=False)
    hh, ww = pm.shape[0] // scale_factor, pm.shape[1] // scale_factor
    pooled = pm.reshape(hh, scale_factor, ww, scale_factor).any(axis=(1, 3))
    return pooled[None, :, :]
