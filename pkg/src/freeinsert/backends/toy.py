"""Deterministic toy backends for GPU-free, exact testing.

The toy denoiser is a seeded contractive affine map of (z, t) plus a small
conditioning-derived offset, with two spatial and two attention taps whose
(possibly overridden) features feed back into the prediction. Contraction
(|∂eps/∂z| well below 1) is what lets the fixed-point inversion converge and
the invert→sample round trip close to <1e-4.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import ContractError
from ..images import require_rgb
from ..latent import LatentGrid
from .base import (
    ATTENTION,
    SPATIAL,
    ConditioningSet,
    DenoiserBackend,
    FeatureBundle,
    LayerSpec,
    VaeBackend,
)

ATTN_DIM = 4
COND_GAIN = 0.05
SPATIAL_GAIN = 0.05
ATTN_GAIN = 0.02


def _cond_seed(seed: int, cond: ConditioningSet) -> int:
    h = hashlib.sha256()
    h.update(seed.to_bytes(8, "little", signed=True))
    h.update(cond.prompt_text.encode())
    h.update(np.float64(cond.guidance_weight).tobytes())
    h.update(np.ascontiguousarray(cond.depth.values).tobytes())
    emb = cond.embedding
    if emb is None:
        h.update(b"none")
    else:
        h.update(emb.role.encode())
        h.update(np.float64(cond.embedding_weight).tobytes())
        h.update(np.ascontiguousarray(emb.vector).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


class ToyDenoiser(DenoiserBackend):
    """Seeded linear toy noise predictor with observable feature taps."""

    def __init__(self, seed: int, latent_shape: tuple[int, int, int]):
        c, h, w = latent_shape
        self.seed = seed
        self.latent_shape = (c, h, w)
        rng = np.random.default_rng(seed)
        self._a = rng.uniform(-0.25, 0.25, size=(c, 1, 1))
        self._freq = rng.uniform(0.5, 2.0, size=(c, 1, 1))
        self._drift = 0.1 * rng.standard_normal((c, h, w))
        # light spatial coupling so predictions mix across cells the way a
        # convolutional denoiser does (keeps |d eps/d z| well under 1)
        self._mix_neighbors = rng.uniform(-0.05, 0.05, size=(c, 1, 1))
        # spatial taps: per-channel gains; attention taps: channel projections
        self._w_spatial = [rng.uniform(-0.3, 0.3, size=(c, 1, 1)) for _ in range(2)]
        self._p_q = [rng.standard_normal((ATTN_DIM, c)) / np.sqrt(c) for _ in range(2)]
        self._p_k = [rng.standard_normal((ATTN_DIM, c)) / np.sqrt(c) for _ in range(2)]
        self._mix_spatial = [rng.uniform(-1.0, 1.0, size=(c, 1, 1)) for _ in range(2)]
        self._mix_attn = [rng.uniform(-1.0, 1.0, size=(c, 1, 1)) for _ in range(2)]

        self.layer_catalog = tuple(
            [LayerSpec(f"spatial.{i}", SPATIAL, (c, h, w)) for i in range(2)]
            + [LayerSpec(f"attn.{i}", ATTENTION, (ATTN_DIM, h, w)) for i in range(2)]
        )
        self._cond_patterns: dict[int, np.ndarray] = {}

    def _cond_pattern(self, cond: ConditioningSet) -> np.ndarray:
        key = _cond_seed(self.seed, cond)
        pat = self._cond_patterns.get(key)
        if pat is None:
            pat = COND_GAIN * np.random.default_rng(key).standard_normal(self.latent_shape)
            self._cond_patterns[key] = pat
        return pat

    def predict(
        self,
        z: LatentGrid,
        t: int,
        cond: ConditioningSet,
        overrides: FeatureBundle | None = None,
    ) -> tuple[LatentGrid, FeatureBundle]:
        if z.shape != self.latent_shape:
            raise ContractError(f"toy backend built for {self.latent_shape}, got {z.shape}")
        if t < 0:
            raise ContractError(f"timestep must be >= 0, got {t}")
        v = z.values

        spatial = {
            f"spatial.{i}": self._w_spatial[i] * v + 0.05 * np.sin(0.37 * t * (i + 1))
            for i in range(2)
        }
        queries = {f"attn.{i}": np.einsum("dc,chw->dhw", self._p_q[i], v) for i in range(2)}
        keys = {f"attn.{i}": np.einsum("dc,chw->dhw", self._p_k[i], v) for i in range(2)}

        if overrides is not None:
            overrides.validate_against_catalog(self.layer_catalog)
            spatial.update({k: a for k, a in overrides.spatial.items()})
            queries.update({k: a for k, a in overrides.queries.items()})
            keys.update({k: a for k, a in overrides.keys.items()})

        neighborhood = (
            np.roll(v, 1, axis=1) + np.roll(v, -1, axis=1) + np.roll(v, 1, axis=2) + np.roll(v, -1, axis=2)
        ) / 4.0
        eps = self._a * v + self._mix_neighbors * neighborhood + self._drift * np.sin(self._freq * 0.13 * t)
        eps = eps + self._cond_pattern(cond)
        for i in range(2):
            eps = eps + SPATIAL_GAIN * self._mix_spatial[i] * spatial[f"spatial.{i}"]
            qk = np.mean(queries[f"attn.{i}"] * keys[f"attn.{i}"], axis=0)
            eps = eps + ATTN_GAIN * self._mix_attn[i] * qk[None, :, :]

        captured = FeatureBundle(spatial=spatial, queries=queries, keys=keys, timestep=t)
        return z.with_values(eps), captured


class ZeroDenoiser(DenoiserBackend):
    """Predicts eps = 0 always; inversion under it is pure rescaling."""

    layer_catalog: tuple[LayerSpec, ...] = ()

    def predict(self, z, t, cond, overrides=None):
        return z.with_values(np.zeros_like(z.values)), FeatureBundle(timestep=t)


class IdentityVae(VaeBackend):
    """Exact pixel<->latent transpose; round-trip bound 0, scale factor 1."""

    scale_factor = 1
    round_trip_bound = 0.0

    def encode(self, image: np.ndarray) -> LatentGrid:
        img = require_rgb(image)
        return LatentGrid(values=np.transpose(img, (2, 0, 1)), space_tag="latent")

    def decode(self, z: LatentGrid) -> np.ndarray:
        return np.transpose(z.values, (1, 2, 0))


def toy_backend(seed: int, latent_shape: tuple[int, int, int]) -> ToyDenoiser:
    """Factory for the deterministic toy denoiser (test oracle)."""
    return ToyDenoiser(seed=seed, latent_shape=latent_shape)
