"""Backend profile resolution for the CLI, service and benchmark runner.

A profile string is either "toy" (optionally "toy:<seed>") or a path to a
real-adapter config JSON. The default comes from FREEINSERT_BACKEND_PROFILE.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from ..backends import DenoiserBackend, IdentityVae, VaeBackend, toy_backend
from ..backends.real import real_backend_from_config
from ..compositing import DepthEstimator, LuminanceDepthEstimator
from ..conditioning import EmbeddingExtractor, PatchEmbedder
from ..errors import ConfigError
from ..metrics import MetricBackends
from ..schedule import NoiseSchedule

ENV_PROFILE = "FREEINSERT_BACKEND_PROFILE"
DEFAULT_TOY_SEED = 1234


def resolve_profile_name(name: str | None) -> str:
    return name or os.environ.get(ENV_PROFILE, "toy")


@dataclass
class ProfileRuntime:
    """Loaded backends plus the factories a run needs.

    Toy denoisers are shape-bound, so jobs get a fresh instance per request
    (which also gives job isolation for free); the real adapter is a single
    loaded instance.
    """

    name: str
    kind: str  # "toy" | "real"
    vae: VaeBackend
    content_extractor: EmbeddingExtractor | None = None
    style_extractor: EmbeddingExtractor | None = None
    estimator: DepthEstimator | None = None
    metric_backends: MetricBackends = field(default_factory=MetricBackends.defaults)
    toy_seed: int = DEFAULT_TOY_SEED
    schedule_path: str | None = None
    _real_denoiser: DenoiserBackend | None = None

    def denoiser_for(self, latent_shape: tuple[int, int, int]) -> DenoiserBackend:
        if self.kind == "toy":
            return toy_backend(seed=self.toy_seed, latent_shape=latent_shape)
        return self._real_denoiser

    def schedule(self, num_steps: int = 50) -> NoiseSchedule:
        """Default scaled-linear curve, unless a schedule config was given."""
        if self.schedule_path:
            loaded = NoiseSchedule.from_json(self.schedule_path)
            if loaded.num_steps != num_steps and num_steps != 50:
                raise ConfigError(
                    f"schedule config has T={loaded.num_steps} but the run asked for T={num_steps}"
                )
            return loaded
        return NoiseSchedule.default(num_steps)


def load_profile(name: str | None, schedule_path: str | None = None) -> ProfileRuntime:
    name = resolve_profile_name(name)
    if name == "toy" or name.startswith("toy:"):
        seed = DEFAULT_TOY_SEED
        if ":" in name:
            try:
                seed = int(name.split(":", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"bad toy profile seed in {name!r}") from exc
        embedder = PatchEmbedder()
        return ProfileRuntime(
            name=name,
            kind="toy",
            vae=IdentityVae(),
            content_extractor=embedder,
            style_extractor=embedder,
            estimator=LuminanceDepthEstimator(),
            toy_seed=seed,
            schedule_path=schedule_path,
        )
    if not Path(name).exists():
        raise ConfigError(
            f"backend profile {name!r} is neither 'toy[:seed]' nor an existing config path"
        )
    denoiser, vae = real_backend_from_config(name)
    return ProfileRuntime(
        name=name,
        kind="real",
        vae=vae,
        estimator=LuminanceDepthEstimator(),
        schedule_path=schedule_path,
        _real_denoiser=denoiser,
    )
