from .base import (
    ATTENTION,
    SPATIAL,
    ConditioningSet,
    DenoiserBackend,
    FeatureBundle,
    LayerSpec,
    VaeBackend,
    conditioning_fingerprint,
    validate_layer_selection,
)
from .real import BackendConfig, real_backend_from_config
from .toy import IdentityVae, ToyDenoiser, ZeroDenoiser, toy_backend

__all__ = [
    "ATTENTION",
    "SPATIAL",
    "BackendConfig",
    "ConditioningSet",
    "DenoiserBackend",
    "FeatureBundle",
    "IdentityVae",
    "LayerSpec",
    "ToyDenoiser",
    "VaeBackend",
    "ZeroDenoiser",
    "conditioning_fingerprint",
    "real_backend_from_config",
    "toy_backend",
    "validate_layer_selection",
]
