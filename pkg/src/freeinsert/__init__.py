"""Training-free object insertion into background images.

A user-posed, user-viewed object rendering (RGBA + depth, produced by any
image-to-3D + editor + renderer toolchain) is composited into a background
and regenerated by a dual-branch diffusion loop: the reconstruction branch's
internal features steer the generation branch early on, depth conditions
both branches, content/style embeddings route to their own branches, and
per-step noise blending pins the untouched background to its own noising
trajectory.
"""

from .backends import (
    ConditioningSet,
    DenoiserBackend,
    FeatureBundle,
    IdentityVae,
    LayerSpec,
    VaeBackend,
    toy_backend,
)
from .compositing import (
    DepthMap,
    MaskGrid,
    Placement,
    RenderedObject,
    compose_depth,
    derive_latent_mask,
    paste,
)
from .diffusion import add_noise, ddim_invert, ddim_sample, ddim_step
from .engine import (
    GenerationResult,
    InjectionConfig,
    apply_injection,
    noise_blend,
    run_controllable_generation,
)
from .latent import LatentGrid, Trajectory
from .metrics import MetricBackends, MetricsReport, RegionSpec, d_rmse, lpips_distance, similarity
from .request import CompositeRequest
from .schedule import NoiseSchedule

__version__ = "0.1.0"

__all__ = [
    "CompositeRequest",
    "ConditioningSet",
    "DenoiserBackend",
    "DepthMap",
    "FeatureBundle",
    "GenerationResult",
    "IdentityVae",
    "InjectionConfig",
    "LatentGrid",
    "LayerSpec",
    "MaskGrid",
    "MetricBackends",
    "MetricsReport",
    "NoiseSchedule",
    "Placement",
    "RegionSpec",
    "RenderedObject",
    "Trajectory",
    "VaeBackend",
    "add_noise",
    "apply_injection",
    "compose_depth",
    "d_rmse",
    "ddim_invert",
    "ddim_sample",
    "ddim_step",
    "derive_latent_mask",
    "lpips_distance",
    "noise_blend",
    "paste",
    "run_controllable_generation",
    "similarity",
    "toy_backend",
]
