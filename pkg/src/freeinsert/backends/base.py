"""Contracts for every learned component: denoiser (with depth conditioning
and feature taps), VAE, optional refiner.

The engine never touches a concrete model; it talks to these interfaces. A
backend's layer catalog is the source of truth for which feature taps exist,
and every injection selection is validated against it before the first
denoise call.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from ..compositing import DepthMap
from ..conditioning import ImageEmbedding
from ..errors import ConfigError, ContractError
from ..latent import LatentGrid

SPATIAL = "spatial"
ATTENTION = "attention"


@dataclass(frozen=True)
class LayerSpec:
    layer_id: str
    kind: str  # "spatial" | "attention"
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in (SPATIAL, ATTENTION):
            raise ContractError(f"layer kind must be spatial|attention, got {self.kind!r}")


@dataclass(frozen=True)
class ConditioningSet:
    """Everything a denoiser call is conditioned on.

    A branch carries at most one image embedding: content for the
    reconstruction branch, style for the generation branch. The role tag on
    the embedding must match the slot it occupies.
    """

    prompt_text: str
    depth: DepthMap
    guidance_weight: float = 1.0
    content_embedding: ImageEmbedding | None = None
    style_embedding: ImageEmbedding | None = None
    embedding_weight: float = 1.0

    def __post_init__(self):
        if self.guidance_weight < 0:
            raise ContractError("guidance_weight must be >= 0")
        if self.content_embedding is not None and self.style_embedding is not None:
            raise ContractError("at most one of content/style embedding per branch call")
        if self.content_embedding is not None and self.content_embedding.role != "content":
            raise ContractError(
                f"content slot holds an embedding tagged {self.content_embedding.role!r}"
            )
        if self.style_embedding is not None and self.style_embedding.role != "style":
            raise ContractError(
                f"style slot holds an embedding tagged {self.style_embedding.role!r}"
            )

    @property
    def embedding(self) -> ImageEmbedding | None:
        return self.content_embedding if self.content_embedding is not None else self.style_embedding


def conditioning_fingerprint(cond: ConditioningSet) -> str:
    """Stable hash of a ConditioningSet; records what produced a trajectory."""
    h = hashlib.sha256()
    h.update(cond.prompt_text.encode())
    h.update(np.float64(cond.guidance_weight).tobytes())
    h.update(np.float64(cond.embedding_weight).tobytes())
    h.update(np.ascontiguousarray(cond.depth.values).tobytes())
    emb = cond.embedding
    if emb is None:
        h.update(b"no-embedding")
    else:
        h.update(emb.role.encode())
        h.update(emb.extractor_id.encode())
        h.update(np.ascontiguousarray(emb.vector).tobytes())
    return h.hexdigest()


@dataclass
class FeatureBundle:
    """Per-layer features captured (or injected) at one timestep.

    spatial holds residual-block feature maps; queries/keys hold
    self-attention projections. There is deliberately no slot for attention
    values: v is never overridden.
    """

    spatial: dict[str, np.ndarray] = field(default_factory=dict)
    queries: dict[str, np.ndarray] = field(default_factory=dict)
    keys: dict[str, np.ndarray] = field(default_factory=dict)
    timestep: int = 0

    def layer_ids(self) -> set[str]:
        return set(self.spatial) | set(self.queries) | set(self.keys)

    def is_empty(self) -> bool:
        return not (self.spatial or self.queries or self.keys)

    def validate_against_catalog(self, catalog: tuple[LayerSpec, ...]) -> None:
        by_id = {spec.layer_id: spec for spec in catalog}
        for lid, arr in self.spatial.items():
            spec = by_id.get(lid)
            if spec is None or spec.kind != SPATIAL:
                raise ConfigError(f"spatial feature for unknown/mismatched layer {lid!r}")
            if tuple(arr.shape) != spec.shape:
                raise ContractError(
                    f"layer {lid!r} feature shape {arr.shape} != catalog {spec.shape}"
                )
        for name, group in (("query", self.queries), ("key", self.keys)):
            for lid, arr in group.items():
                spec = by_id.get(lid)
                if spec is None or spec.kind != ATTENTION:
                    raise ConfigError(f"{name} feature for unknown/mismatched layer {lid!r}")
                if tuple(arr.shape) != spec.shape:
                    raise ContractError(
                        f"layer {lid!r} {name} shape {arr.shape} != catalog {spec.shape}"
                    )


class DenoiserBackend(ABC):
    """Noise predictor with depth conditioning and observable feature taps.

    Contract: deterministic for fixed inputs; when `overrides` supplies a
    layer, the returned bundle echoes the override for that layer (so
    injection is observable from outside).
    """

    layer_catalog: tuple[LayerSpec, ...] = ()
    has_refiner: bool = False

    @abstractmethod
    def predict(
        self,
        z: LatentGrid,
        t: int,
        cond: ConditioningSet,
        overrides: FeatureBundle | None = None,
    ) -> tuple[LatentGrid, FeatureBundle]: ...

    def refine(self, z: LatentGrid, remaining_fraction: float = 0.1) -> LatentGrid:
        raise ConfigError("this backend has no refiner hook")

    def catalog_ids(self, kind: str | None = None) -> list[str]:
        return [s.layer_id for s in self.layer_catalog if kind is None or s.kind == kind]


class VaeBackend(ABC):
    """Pixel <-> latent codec. decode(encode(I)) must stay within
    `round_trip_bound` mean-abs per pixel."""

    scale_factor: int = 8
    round_trip_bound: float = 0.1

    @abstractmethod
    def encode(self, image: np.ndarray) -> LatentGrid: ...

    @abstractmethod
    def decode(self, z: LatentGrid) -> np.ndarray: ...


def validate_layer_selection(
    backend: DenoiserBackend,
    spatial_layers: list[str],
    attention_layers: list[str],
) -> None:
    """Catalog closure: every referenced layer must exist with the right kind.

    Raises ConfigError naming the first offending layer.
    """
    spatial_ok = set(backend.catalog_ids(SPATIAL))
    attn_ok = set(backend.catalog_ids(ATTENTION))
    for lid in spatial_layers:
        if lid not in spatial_ok:
            raise ConfigError(f"injection references unknown spatial layer {lid!r}")
    for lid in attention_layers:
        if lid not in attn_ok:
            raise ConfigError(f"injection references unknown attention layer {lid!r}")
