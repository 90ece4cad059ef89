"""Prompt and image-embedding clients.

Three conditioning signals feed the dual-branch loop: a text prompt (from a
vision-language captioner, the user, or a template fallback), a content
embedding extracted from the object image (routed to the reconstruction
branch only) and a style embedding extracted from the background (routed to
the generation branch only).
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import BackendError, ContractError
from .images import content_hash, require_rgb, resize

logger = logging.getLogger(__name__)

# Instruction sent to the captioner; fixed so prompts are reproducible.
CAPTION_INSTRUCTION = (
    "Describe the main object in detail, including color, material, and distinctive features."
)

DEFAULT_CONTENT_WEIGHT = 0.8
DEFAULT_STYLE_WEIGHT = 0.6


@dataclass(frozen=True)
class PromptSpec:
    text: str
    source: str = "user"  # "vlm" | "user" | "template"

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ContractError("prompt text must be non-empty")
        if self.source not in ("vlm", "user", "template"):
            raise ContractError(f"unknown prompt source {self.source!r}")


@dataclass(frozen=True)
class ImageEmbedding:
    """Adapter conditioning vector with its routing role recorded."""

    vector: np.ndarray
    role: str  # "content" | "style"
    extractor_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).ravel()
        object.__setattr__(self, "vector", v)
        if not np.all(np.isfinite(v)):
            raise ContractError("embedding vector must be finite")
        if self.role not in ("content", "style"):
            raise ContractError(f"unknown embedding role {self.role!r}")


class EmbeddingExtractor(Protocol):
    """Image -> fixed-dimension vector; deterministic for fixed input."""

    extractor_id: str

    def extract(self, image: np.ndarray) -> np.ndarray: ...


class PatchEmbedder:
    """Deterministic CPU extractor: seeded projection of a downsampled image.

    Continuous in the input (tiny pixel noise keeps cosine near 1), which is
    what the routing and sensitivity tests need. Real adapter image encoders
    plug in through the same protocol.
    """

    def __init__(self, dim: int = 64, seed: int = 17, grid: int = 16):
        self.dim = dim
        self.grid = grid
        self.extractor_id = f"patch-{grid}x{grid}-d{dim}-s{seed}"
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((dim, grid * grid * 3)) / np.sqrt(grid * grid * 3)

    def extract(self, image: np.ndarray) -> np.ndarray:
        img = require_rgb(image)
        small = resize(img, (self.grid, self.grid), mode="bilinear").ravel()
        vec = self._proj @ small
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def embed(image: np.ndarray, role: str, extractor: EmbeddingExtractor) -> ImageEmbedding:
    """Extract a role-tagged conditioning embedding."""
    if extractor is None:
        raise BackendError(
            f"no embedding extractor loaded; the {role} control is disabled in this run"
        )
    vec = extractor.extract(image)
    return ImageEmbedding(vector=vec, role=role, extractor_id=getattr(extractor, "extractor_id", ""))


@dataclass
class VlmClient:
    """Captioning client: HTTP endpoint or in-process callable.

    mode="http" posts {"image_b64", "instruction"} to `endpoint` and expects
    {"caption": str}; mode="local" calls `local_fn(image, instruction)`.
    """

    mode: str = "local"
    endpoint: str = ""
    timeout_s: float = 30.0
    local_fn: Callable[[np.ndarray, str], str] | None = None

    def caption(self, image: np.ndarray, instruction: str) -> str:
        if self.mode == "local":
            if self.local_fn is None:
                raise BackendError("local VLM callable not configured")
            return self.local_fn(image, instruction)
        if self.mode == "http":
            import base64
            import io

            import httpx
            from PIL import Image as PilImage

            buf = io.BytesIO()
            PilImage.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8)).save(buf, format="PNG")
            payload = {
                "image_b64": base64.b64encode(buf.getvalue()).decode("ascii"),
                "instruction": instruction,
            }
            resp = httpx.post(self.endpoint, json=payload, timeout=self.timeout_s)
            resp.raise_for_status()
            return resp.json()["caption"]
        raise ContractError(f"unknown VLM client mode {self.mode!r}")


@dataclass
class CaptionCache:
    """Thread-safe content-hash -> PromptSpec map."""

    _entries: dict[str, PromptSpec] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def get(self, key: str) -> PromptSpec | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, spec: PromptSpec) -> None:
        with self._lock:
            self._entries[key] = spec


_default_cache = CaptionCache()


def caption_object(
    image: np.ndarray,
    client: VlmClient | None,
    object_tag: str = "object",
    cache: CaptionCache | None = None,
) -> PromptSpec:
    """Caption the object image, falling back to a template prompt.

    Captions are cached by image content hash so repeated runs on the same
    asset never re-hit the client. Every failure path yields a usable
    PromptSpec; captioning never hard-fails the pipeline.
    """
    cache = cache if cache is not None else _default_cache
    key = content_hash(np.asarray(image))
    cached = cache.get(key)
    if cached is not None:
        return cached

    if client is not None:
        try:
            text = client.caption(image, CAPTION_INSTRUCTION)
            if text and text.strip():
                spec = PromptSpec(text=text.strip(), source="vlm")
                cache.put(key, spec)
                return spec
            logger.warning("VLM returned empty caption; falling back to template prompt")
        except Exception as exc:
            logger.warning("VLM captioning failed (%s); falling back to template prompt", exc)

    spec = PromptSpec(text=f"a photo of a {object_tag}", source="template")
    cache.put(key, spec)
    return spec
