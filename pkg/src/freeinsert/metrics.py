"""Quantitative evaluation: region-wise embedding similarities, perceptual
distance, and depth-map RMSE between the rendered and generated object.

Object metrics compare the target-region crop of the generated image against
the object image; style metrics compare the same crop against the full
background. Backends are pluggable handles — deterministic CPU defaults ship
so the toy pipeline evaluates in CI, and learned embedders (CLIP/DINO/LPIPS/
monocular depth) slot in through the same protocols on hosts that have them.
An unavailable backend marks its metric absent in the report, never zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import ndimage

from .compositing import DepthEstimator, DepthMap, MaskGrid
from .errors import ContractError
from .images import require_rgb, resize

EVAL_SIZE = 64  # common resolution for perceptual comparisons

OBJ_METRICS = ("clip_obj", "dino_obj", "lpips_obj")
STYLE_METRICS = ("clip_style", "dino_style", "lpips_style")
TABLE_COLUMNS = ("clip_obj", "dino_obj", "clip_style", "dino_style", "lpips_obj", "lpips_style", "d_rmse")


@dataclass(frozen=True)
class RegionSpec:
    """Target region in generated-image coordinates: (x0, y0, x1, y1), exclusive ends."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ContractError(f"region must have nonzero area, got {self}")

    def validate_within(self, shape_hw: tuple[int, int]) -> None:
        h, w = shape_hw
        if self.x0 < 0 or self.y0 < 0 or self.x1 > w or self.y1 > h:
            raise ContractError(f"region {self} outside image {w}x{h}")

    def crop(self, image: np.ndarray) -> np.ndarray:
        self.validate_within(image.shape[:2])
        return image[self.y0 : self.y1, self.x0 : self.x1]


def region_from_mask(mask: MaskGrid) -> RegionSpec:
    """Dilated-mask bounding box — the default crop geometry for all
    region metrics (recorded in report metadata)."""
    ys, xs = np.nonzero(mask.pixel_mask)
    if len(ys) == 0:
        raise ContractError("mask is empty; no target region")
    return RegionSpec(x0=int(xs.min()), y0=int(ys.min()), x1=int(xs.max()) + 1, y1=int(ys.max()) + 1)


class GlobalEmbedder(Protocol):
    """Whole-image embedding backend (CLIP-like or DINO-like)."""

    embedder_id: str

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...


class SeededPatchEmbedder:
    """Deterministic stand-in for a learned global embedder: seeded random
    projection of a downsampled image, L2-normalized."""

    def __init__(self, seed: int, dim: int = 128, grid: int = 16):
        self.embedder_id = f"seeded-patch-{seed}"
        rng = np.random.default_rng(seed)
        self.grid = grid
        self._proj = rng.standard_normal((dim, grid * grid * 3)) / np.sqrt(grid * grid * 3)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        img = require_rgb(image)
        small = resize(img, (self.grid, self.grid), mode="bilinear").ravel()
        v = self._proj @ small
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


class PerceptualBackend(Protocol):
    """Perceptual distance backend: two same-size images -> nonnegative real."""

    backend_id: str

    def distance(self, a: np.ndarray, b: np.ndarray) -> float: ...


class PyramidPerceptual:
    """Laplacian-pyramid L2 distance: a deterministic CPU perceptual proxy.

    Exactly 0 for identical inputs, symmetric, nonnegative. A learned
    perceptual backend plugs in through the same protocol.
    """

    backend_id = "laplacian-pyramid"

    def __init__(self, levels: int = 3):
        self.levels = levels

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        if a.shape != b.shape:
            raise ContractError(f"perceptual distance needs same shapes, got {a.shape} vs {b.shape}")
        total = 0.0
        ga, gb = a.astype(np.float64), b.astype(np.float64)
        for _ in range(self.levels):
            sa = ndimage.gaussian_filter(ga, sigma=(1.0, 1.0, 0))
            sb = ndimage.gaussian_filter(gb, sigma=(1.0, 1.0, 0))
            total += float(np.mean((ga - sa - (gb - sb)) ** 2))
            ga, gb = sa[::2, ::2], sb[::2, ::2]
        total += float(np.mean((ga - gb) ** 2))
        return total


def similarity(a: np.ndarray, b: np.ndarray, embedder: GlobalEmbedder) -> float:
    """Cosine similarity of global embeddings."""
    va = embedder.embed_image(a)
    vb = embedder.embed_image(b)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


def lpips_distance(a: np.ndarray, b: np.ndarray, backend: PerceptualBackend) -> float:
    """Perceptual distance on a shared evaluation size; 0 for identical inputs."""
    a = require_rgb(a)
    b = require_rgb(b)
    if np.array_equal(a, b):
        return 0.0
    ra = resize(a, (EVAL_SIZE, EVAL_SIZE))
    rb = resize(b, (EVAL_SIZE, EVAL_SIZE))
    return float(backend.distance(ra, rb))


def _normalize_region(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    mu = x.mean()
    sd = x.std()
    if sd < eps:
        return np.zeros_like(x)
    return (x - mu) / sd


def d_rmse(
    render_depth: DepthMap,
    gen_image: np.ndarray,
    region: RegionSpec,
    estimator: DepthEstimator,
) -> float:
    """RMSE between rendered and estimated depth inside the target region.

    Monocular estimates are affine-ambiguous, so both crops are normalized to
    zero mean / unit variance within the region before the RMSE.
    """
    gen = require_rgb(gen_image, "generated image")
    region.validate_within(gen.shape[:2])
    est = estimator.estimate(gen)
    if est.shape != gen.shape[:2]:
        raise ContractError(f"estimated depth {est.shape} does not match image {gen.shape[:2]}")
    if render_depth.shape != gen.shape[:2]:
        raise ContractError(
            f"render depth {render_depth.shape} must be canvas-sized {gen.shape[:2]}"
        )
    a = _normalize_region(region.crop(render_depth.values))
    b = _normalize_region(region.crop(est.values))
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class MetricBackends:
    """Handles for every metric; None marks the metric absent."""

    clip: GlobalEmbedder | None = None
    dino: GlobalEmbedder | None = None
    lpips: PerceptualBackend | None = None
    depth: DepthEstimator | None = None

    @classmethod
    def defaults(cls) -> "MetricBackends":
        from .compositing import LuminanceDepthEstimator

        return cls(
            clip=SeededPatchEmbedder(seed=101),
            dino=SeededPatchEmbedder(seed=202, grid=8),
            lpips=PyramidPerceptual(),
            depth=LuminanceDepthEstimator(),
        )


def compute_pair_metrics(
    gen_image: np.ndarray,
    object_image: np.ndarray,
    background: np.ndarray,
    region: RegionSpec,
    backends: MetricBackends,
    render_depth: DepthMap | None = None,
) -> dict:
    """All metrics for one generated image; unavailable backends yield None."""
    crop = region.crop(gen_image)
    row: dict = {"region": [region.x0, region.y0, region.x1, region.y1]}

    for name, embedder in (("clip", backends.clip), ("dino", backends.dino)):
        if embedder is None:
            row[f"{name}_obj"] = None
            row[f"{name}_style"] = None
        else:
            row[f"{name}_obj"] = similarity(crop, object_image, embedder)
            row[f"{name}_style"] = similarity(crop, background, embedder)
    if backends.lpips is None:
        row["lpips_obj"] = None
        row["lpips_style"] = None
    else:
        row["lpips_obj"] = lpips_distance(crop, object_image, backends.lpips)
        row["lpips_style"] = lpips_distance(crop, background, backends.lpips)
    if backends.depth is None or render_depth is None:
        row["d_rmse"] = None
    else:
        row["d_rmse"] = d_rmse(render_depth, gen_image, region, backends.depth)
    return row


@dataclass
class MetricsReport:
    """Per-image rows plus aggregate means, Table-style.

    Every requested metric is present in each row — either a value or None
    (absent); aggregation averages over available values only.
    """

    per_image: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: dict, image_id: str = "") -> None:
        row = dict(row)
        row["id"] = image_id
        for col in TABLE_COLUMNS:
            row.setdefault(col, None)
        self.per_image.append(row)

    @property
    def aggregate(self) -> dict:
        agg: dict = {}
        for col in TABLE_COLUMNS:
            vals = [r[col] for r in self.per_image if r.get(col) is not None]
            agg[col] = float(np.mean(vals)) if vals else None
        return agg

    def to_dict(self) -> dict:
        return {
            "per_image": self.per_image,
            "aggregate": self.aggregate,
            "metadata": dict(self.metadata, region_geometry="dilated-mask bbox"),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def render_table(self) -> str:
        """Text table in the headline column order."""
        header = ["id"] + list(TABLE_COLUMNS)
        rows = [header]
        for r in self.per_image:
            rows.append([str(r.get("id", ""))] + [self._fmt(r[c]) for c in TABLE_COLUMNS])
        rows.append(["mean"] + [self._fmt(self.aggregate[c]) for c in TABLE_COLUMNS])
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines)

    @staticmethod
    def _fmt(v) -> str:
        return "absent" if v is None else f"{v:.4f}"
