"""Adapter loading a production text-to-image model behind the backend
contracts: depth-conditioned denoiser with feature taps, VAE, optional
refiner hook.

Everything testable without model weights lives here at module level:
config parsing, asset resolution (fails listing every unresolved path),
catalog construction and injection-selection validation. The torch/diffusers
glue is imported lazily inside `_load_models`, so the package works on
CPU-only hosts; install the `real` extra and provide local weights to run
it.

Layer names are configuration, not code contracts: the default catalog
lists the decoder self-attention taps and the first up-block's spatial taps
by their module paths, and a config may override the list entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import AssetError, ConfigError
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

# Decoder self-attention taps plus the first up-block's residual features,
# by module path inside the denoising UNet. Shapes are resolved at load time
# (they depend on the working resolution), so the descriptor here is empty.
_DEFAULT_ATTENTION_TAPS = [
    f"up_blocks.{b}.attentions.{a}.transformer_blocks.{tb}.attn1"
    for b in (0, 1)
    for a in (0, 1, 2)
    for tb in (0,)
]
_DEFAULT_SPATIAL_TAPS = [f"up_blocks.0.resnets.{r}" for r in (0, 1, 2)]


@dataclass
class RefinerConfig:
    enabled: bool = False
    start_fraction: float = 0.1
    path: str = ""


@dataclass
class BackendConfig:
    """Asset paths + device + tap catalog for the real adapter."""

    base_model_path: str
    depth_controlnet_path: str
    image_adapter_path: str = ""
    vae_path: str = ""
    device: str = "cuda"
    dtype: str = "float16"
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    attention_taps: list[str] = field(default_factory=lambda: list(_DEFAULT_ATTENTION_TAPS))
    spatial_taps: list[str] = field(default_factory=lambda: list(_DEFAULT_SPATIAL_TAPS))
    injection_spatial: list[str] = field(default_factory=list)
    injection_attention: list[str] = field(default_factory=list)

    @classmethod
    def from_json(cls, path: str | Path) -> "BackendConfig":
        with open(path) as f:
            raw = json.load(f)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "BackendConfig":
        try:
            refiner = RefinerConfig(**raw.get("refiner", {}))
            return cls(
                base_model_path=raw["base_model_path"],
                depth_controlnet_path=raw["depth_controlnet_path"],
                image_adapter_path=raw.get("image_adapter_path", ""),
                vae_path=raw.get("vae_path", ""),
                device=raw.get("device", "cuda"),
                dtype=raw.get("dtype", "float16"),
                refiner=refiner,
                attention_taps=list(raw.get("attention_taps", _DEFAULT_ATTENTION_TAPS)),
                spatial_taps=list(raw.get("spatial_taps", _DEFAULT_SPATIAL_TAPS)),
                injection_spatial=list(raw.get("injection_spatial", [])),
                injection_attention=list(raw.get("injection_attention", [])),
            )
        except KeyError as exc:
            raise ConfigError(f"backend config missing required key {exc.args[0]!r}") from exc
        except TypeError as exc:
            raise ConfigError(f"malformed backend config: {exc}") from exc

    def catalog(self) -> tuple[LayerSpec, ...]:
        return tuple(
            [LayerSpec(lid, SPATIAL, ()) for lid in self.spatial_taps]
            + [LayerSpec(lid, ATTENTION, ()) for lid in self.attention_taps]
        )

    def validate(self) -> None:
        """Injection selections must reference declared taps; asset paths
        must resolve. Raises ConfigError / AssetError (listing all missing)."""
        spatial_ok = set(self.spatial_taps)
        attn_ok = set(self.attention_taps)
        for lid in self.injection_spatial:
            if lid not in spatial_ok:
                raise ConfigError(f"injection references unknown spatial layer {lid!r}")
        for lid in self.injection_attention:
            if lid not in attn_ok:
                raise ConfigError(f"injection references unknown attention layer {lid!r}")

        missing = [
            p
            for p in (
                self.base_model_path,
                self.depth_controlnet_path,
                self.image_adapter_path,
                self.vae_path,
                self.refiner.path if self.refiner.enabled else "",
            )
            if p and not Path(p).exists()
        ]
        if missing:
            raise AssetError(
                "backend assets not found: " + ", ".join(missing), missing=missing
            )


class _FeatureTaps:
    """Capture/override state shared by the module hooks for one predict call."""

    def __init__(self):
        self.captured = FeatureBundle()
        self.overrides: FeatureBundle | None = None

    def reset(self, overrides: FeatureBundle | None, t: int):
        self.captured = FeatureBundle(timestep=t)
        self.overrides = overrides


class RealDenoiser(DenoiserBackend):
    """Depth-conditioned UNet + image adapter behind the denoiser contract.

    One instance serves one denoising loop at a time (the taps are stateful
    between reset and read); the service layer pools instances.
    """

    def __init__(self, cfg: BackendConfig, models: dict):
        self.cfg = cfg
        self._m = models
        self._taps = _FeatureTaps()
        self.layer_catalog = cfg.catalog()
        self.has_refiner = cfg.refiner.enabled
        self._install_hooks()

    def _install_hooks(self):
        import torch  # noqa: F401

        unet = self._m["unet"]
        taps = self._taps

        def spatial_hook(layer_id):
            def hook(module, args, output):
                ov = taps.overrides
                if ov is not None and layer_id in ov.spatial:
                    out = output.new_tensor(ov.spatial[layer_id])
                    taps.captured.spatial[layer_id] = ov.spatial[layer_id]
                    return out
                taps.captured.spatial[layer_id] = output.detach().float().cpu().numpy()
                return output

            return hook

        for lid in self.cfg.spatial_taps:
            unet.get_submodule(lid).register_forward_hook(spatial_hook(lid))

        # q/k capture+override happens inside a custom attention processor;
        # v is untouched by construction.
        from .real_attention import install_qk_processors

        install_qk_processors(unet, self.cfg.attention_taps, taps)

    def predict(self, z, t, cond, overrides=None):
        import torch

        if overrides is not None:
            overrides.validate_against_catalog(self.layer_catalog)
        self._taps.reset(overrides, t)
        m = self._m
        device, dtype = m["device"], m["dtype"]
        latent = torch.from_numpy(z.values[None]).to(device=device, dtype=dtype)
        timestep = m["timestep_map"][t]

        text_embeds = m["encode_prompt"](cond.prompt_text)
        depth_image = torch.from_numpy(
            np.repeat(cond.depth.values[None, None], 3, axis=1)
        ).to(device=device, dtype=dtype)
        adapter_embeds = None
        if cond.embedding is not None:
            adapter_embeds = (
                torch.from_numpy(cond.embedding.vector[None]).to(device=device, dtype=dtype),
                float(cond.embedding_weight),
            )

        with torch.no_grad():
            eps_uncond, eps_text = m["unet_forward"](
                latent, timestep, text_embeds, depth_image, adapter_embeds
            )
            w = cond.guidance_weight
            eps = eps_uncond + w * (eps_text - eps_uncond) if w != 1.0 else eps_text

        bundle = self._taps.captured
        return z.with_values(eps[0].float().cpu().numpy()), bundle

    def refine(self, z, remaining_fraction: float = 0.1):
        if not self.has_refiner:
            raise ConfigError("refiner not enabled in backend config")
        return self._m["refine"](z, remaining_fraction)


class RealVae(VaeBackend):
    scale_factor = 8
    round_trip_bound = 0.05

    def __init__(self, models: dict):
        self._m = models

    def encode(self, image):
        import torch

        m = self._m
        x = torch.from_numpy(np.transpose(image, (2, 0, 1))[None] * 2.0 - 1.0)
        x = x.to(device=m["device"], dtype=m["dtype"])
        with torch.no_grad():
            posterior = m["vae"].encode(x).latent_dist
            z = posterior.mode() * m["vae"].config.scaling_factor
        return LatentGrid(values=z[0].float().cpu().numpy())

    def decode(self, z):
        import torch

        m = self._m
        zt = torch.from_numpy(z.values[None]).to(device=m["device"], dtype=m["dtype"])
        with torch.no_grad():
            x = m["vae"].decode(zt / m["vae"].config.scaling_factor).sample
        img = (x[0].float().cpu().numpy() + 1.0) / 2.0
        return np.clip(np.transpose(img, (1, 2, 0)), 0.0, 1.0)


def _load_models(cfg: BackendConfig) -> dict:
    try:
        import torch
        from diffusers import AutoencoderKL, ControlNetModel, UNet2DConditionModel
    except ImportError as exc:
        raise ConfigError(
            "real backend needs the 'real' extra (pip install freeinsert[real])"
        ) from exc

    dtype = getattr(torch, cfg.dtype)
    device = torch.device(cfg.device)
    unet = UNet2DConditionModel.from_pretrained(cfg.base_model_path, subfolder="unet", torch_dtype=dtype)
    controlnet = ControlNetModel.from_pretrained(cfg.depth_controlnet_path, torch_dtype=dtype)
    vae_path = cfg.vae_path or cfg.base_model_path
    vae = AutoencoderKL.from_pretrained(
        vae_path, subfolder="" if cfg.vae_path else "vae", torch_dtype=dtype
    )
    for mod in (unet, controlnet, vae):
        mod.to(device).eval()

    from .real_glue import build_runtime

    return build_runtime(cfg, unet=unet, controlnet=controlnet, vae=vae, device=device, dtype=dtype)


def real_backend_from_config(cfg: BackendConfig | str | Path) -> tuple[RealDenoiser, RealVae]:
    """Validate config + assets, then load the adapter pair.

    Raises AssetError listing every unresolved path before any model import,
    and ConfigError on catalog/injection mismatches (naming the layer).
    """
    if not isinstance(cfg, BackendConfig):
        cfg = BackendConfig.from_json(cfg)
    cfg.validate()
    models = _load_models(cfg)
    return RealDenoiser(cfg, models), RealVae(models)
