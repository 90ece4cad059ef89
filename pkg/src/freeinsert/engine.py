"""Dual-branch denoising loop with thresholded feature injection and
per-step noise blending — the heart of the pipeline.

Loop structure for one request:

    paste -> encode(I_coarse), encode(I_bg) -> invert I_coarse
    z_T^g = z_T^c
    for t = T .. 1:
        Branch1 evaluates the reconstruction latent, capturing (f, q, k)
        Branch2 predicts on z_t^g with captured features injected while
            t > τ·T (per family f/q/k)
        DDIM step, then blend: masked cells keep the generated latent,
            unmasked cells are pinned to the background's noising trajectory
    decode(z_0^g)

Branch1 replays the stored inversion trajectory by default (its own DDIM
output is discarded), which keeps the reconstruction exact; `free` mode runs
it as a live denoising process instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .backends.base import (
    ConditioningSet,
    DenoiserBackend,
    FeatureBundle,
    VaeBackend,
    conditioning_fingerprint,
    validate_layer_selection,
)
from .compositing import DepthEstimator, DepthMap, MaskGrid, compose_depth, derive_latent_mask, paste
from .conditioning import PromptSpec, caption_object, embed
from .diffusion import add_noise, ddim_invert, ddim_step
from .errors import BackendError, ConfigError, ContractError
from .latent import LatentGrid
from .request import CompositeRequest
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


def _threshold(tau: float, num_steps: int) -> int:
    """τ·T rounded half-up; injection applies strictly above this step."""
    return int(np.floor(tau * num_steps + 0.5))


@dataclass(frozen=True)
class InjectionConfig:
    """Injection thresholds (fractions of T) and tap selections.

    Features are injected while t > τ·T, i.e. during the early, high-noise
    portion of denoising. Only spatial features and attention q/k can be
    selected; attention values are never overridable.
    """

    tau_f: float = 0.2
    tau_q: float = 0.5
    tau_k: float = 0.5
    spatial_layers: tuple[str, ...] = ()
    attention_layers: tuple[str, ...] = ()

    def __post_init__(self):
        for name, v in (("tau_f", self.tau_f), ("tau_q", self.tau_q), ("tau_k", self.tau_k)):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "spatial_layers", tuple(self.spatial_layers))
        object.__setattr__(self, "attention_layers", tuple(self.attention_layers))

    @classmethod
    def for_backend(cls, backend: DenoiserBackend, tau_f=0.2, tau_q=0.5, tau_k=0.5) -> "InjectionConfig":
        """Select the backend's full catalog, per kind."""
        return cls(
            tau_f=tau_f,
            tau_q=tau_q,
            tau_k=tau_k,
            spatial_layers=tuple(backend.catalog_ids("spatial")),
            attention_layers=tuple(backend.catalog_ids("attention")),
        )


@dataclass
class GenerationResult:
    image: np.ndarray
    final_latent: LatentGrid
    injection_log: list[dict]
    seed: int
    prompt: PromptSpec | None = None
    mask: MaskGrid | None = None
    depth_condition: "DepthMap | None" = None
    latent_trace: list[np.ndarray] | None = None
    noise_trace: list[np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)


def apply_injection(
    captured_c: FeatureBundle, t: int, inj: InjectionConfig, num_steps: int
) -> FeatureBundle:
    """Build Branch2's override set for step t from Branch1's captures.

    Spatial layers are included iff t > τ_f·T, queries iff t > τ_q·T, keys
    iff t > τ_k·T (strict comparisons).
    """
    out = FeatureBundle(timestep=t)
    if t > _threshold(inj.tau_f, num_steps):
        for lid in inj.spatial_layers:
            if lid not in captured_c.spatial:
                raise ContractError(f"captured bundle missing spatial layer {lid!r}")
            out.spatial[lid] = captured_c.spatial[lid]
    if t > _threshold(inj.tau_q, num_steps):
        for lid in inj.attention_layers:
            if lid not in captured_c.queries:
                raise ContractError(f"captured bundle missing queries for layer {lid!r}")
            out.queries[lid] = captured_c.queries[lid]
    if t > _threshold(inj.tau_k, num_steps):
        for lid in inj.attention_layers:
            if lid not in captured_c.keys:
                raise ContractError(f"captured bundle missing keys for layer {lid!r}")
            out.keys[lid] = captured_c.keys[lid]
    return out


def noise_blend(
    z_g: LatentGrid,
    z0_bg: LatentGrid,
    t_prev: int,
    mask: MaskGrid,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
) -> LatentGrid:
    """Masked cells keep z_g; unmasked cells get the background noised to
    t_prev: √ᾱ_{t_prev}·z0_bg + √(1−ᾱ_{t_prev})·ε.

    Selection is boolean (np.where), so masked cells are bit-exact copies of
    z_g and, at t_prev = 0, unmasked cells are bit-exact copies of z0_bg.
    One of rng/eps supplies the noise draw.
    """
    z_g.check_compatible(z0_bg, op="noise_blend")
    m = mask.latent_mask
    if m.shape[1:] != z_g.shape[1:]:
        raise ContractError(f"latent mask {m.shape} does not cover latent {z_g.shape}")
    if eps is None:
        if rng is None:
            raise ContractError("noise_blend needs rng or an explicit eps draw")
        eps = rng.standard_normal(z_g.shape)
    elif eps.shape != z_g.shape:
        raise ContractError(f"eps shape {eps.shape} != latent {z_g.shape}")
    if t_prev == 0:
        noised = z0_bg.values
    else:
        noised = add_noise(z0_bg, t_prev, z0_bg.with_values(eps), schedule).values
    return z_g.with_values(np.where(m, z_g.values, noised))


def _pad_reflect(img: np.ndarray, s: int) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape[:2]
    ph = (s - h % s) % s
    pw = (s - w % s) % s
    if ph or pw:
        pad = ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2)
        img = np.pad(img, pad, mode="reflect")
    return img, (h, w)


def _predict(denoiser, z, t, cond, overrides, branch):
    try:
        return denoiser.predict(z, t, cond, overrides)
    except Exception as exc:
        raise BackendError(f"denoiser failed: {exc}", timestep=t, branch=branch) from exc


def run_controllable_generation(
    req: CompositeRequest,
    denoiser: DenoiserBackend,
    vae: VaeBackend,
    schedule: NoiseSchedule,
    inj: InjectionConfig | None = None,
    *,
    vlm_client=None,
    content_extractor=None,
    style_extractor=None,
    estimator: DepthEstimator | None = None,
    keep_latent_trace: bool = False,
) -> GenerationResult:
    """Execute the full dual-branch loop for one request."""
    if inj is None:
        inj = InjectionConfig.for_backend(denoiser, req.tau_f, req.tau_q, req.tau_k)
    validate_layer_selection(denoiser, list(inj.spatial_layers), list(inj.attention_layers))
    num_steps = schedule.num_steps

    # pixel-space assembly
    coarse, mask = paste(
        req.render,
        req.background,
        req.placement,
        dilate_radius=req.dilate_radius,
        latent_scale_factor=vae.scale_factor,
        mode=req.paste_mode,
    )
    depth = compose_depth(
        req.render, req.background, req.placement,
        bg_depth_source=req.bg_depth_source, estimator=estimator,
    )

    # conditioning: text prompt, content -> Branch1 only, style -> Branch2 only
    if req.prompt:
        prompt = PromptSpec(text=req.prompt, source="user")
    else:
        prompt = caption_object(req.object_image, vlm_client, req.object_tag)
    content = None
    if req.use_content_embedding and content_extractor is not None:
        content = embed(req.object_image, "content", content_extractor)
    style = None
    if req.use_style_embedding and style_extractor is not None:
        style = embed(req.background, "style", style_extractor)

    cond_inv = ConditioningSet(prompt_text=prompt.text, depth=depth, guidance_weight=1.0)
    cond1 = replace(cond_inv, content_embedding=content, embedding_weight=req.content_weight)
    cond2 = ConditioningSet(
        prompt_text=prompt.text,
        depth=depth,
        guidance_weight=req.guidance,
        style_embedding=style,
        embedding_weight=req.style_weight,
    )
    if cond1.style_embedding is not None or cond2.content_embedding is not None:
        raise ContractError("embedding routing violated: content is Branch1-only, style Branch2-only")

    # encode (VAE stride: reflect-pad, crop after decode)
    coarse_p, orig_hw = _pad_reflect(coarse, vae.scale_factor)
    bg_p, _ = _pad_reflect(req.background, vae.scale_factor)
    z0_c = vae.encode(coarse_p)
    z0_bg = vae.encode(bg_p)

    pixel_mask_p, _ = _pad_reflect(mask.pixel_mask.astype(np.float64), vae.scale_factor)
    latent_mask = derive_latent_mask(pixel_mask_p > 0.5, vae.scale_factor)
    mask = MaskGrid(pixel_mask=mask.pixel_mask, latent_mask=latent_mask)

    traj = ddim_invert(z0_c, denoiser, cond_inv, schedule)
    if traj.conditioning_fingerprint != conditioning_fingerprint(cond_inv):
        raise ContractError("inversion trajectory was produced under different conditioning")

    blend_rng = np.random.default_rng(np.random.SeedSequence(entropy=req.seed, spawn_key=(1,)))
    style_lo = _threshold(req.style_active_range[0], num_steps)
    style_hi = _threshold(req.style_active_range[1], num_steps)

    z_g = traj[num_steps]
    z_c = traj[num_steps]
    injection_log: list[dict] = []
    latent_trace: list[np.ndarray] = []
    noise_trace: list[np.ndarray] = []

    for t in range(num_steps, 0, -1):
        z_c = traj[t] if req.branch1_mode == "replay" else z_c
        eps_c, captured_c = _predict(denoiser, z_c, t, cond1, None, "branch1")

        overrides = apply_injection(captured_c, t, inj, num_steps)
        cond2_t = cond2
        if cond2.style_embedding is not None and not (style_lo < t <= style_hi):
            cond2_t = replace(cond2, style_embedding=None)
        eps_g, _ = _predict(denoiser, z_g, t, cond2_t, overrides, "branch2")

        z_g = ddim_step(z_g, eps_g, t, t - 1, schedule)
        eps_blend = blend_rng.standard_normal(z_g.shape)
        z_g = noise_blend(z_g, z0_bg, t - 1, mask, schedule, eps=eps_blend)

        if req.branch1_mode == "free":
            z_c = ddim_step(z_c, eps_c, t, t - 1, schedule)

        injection_log.append(
            {
                "t": t,
                "spatial": sorted(overrides.spatial),
                "queries": sorted(overrides.queries),
                "keys": sorted(overrides.keys),
            }
        )
        if keep_latent_trace:
            latent_trace.append(z_g.values.copy())
            noise_trace.append(eps_blend)

    if denoiser.has_refiner:
        z_g = denoiser.refine(z_g, getattr(denoiser, "refiner_fraction", 0.1))

    assert len(injection_log) == num_steps, "injection log must cover every loop step exactly once"

    decoded = vae.decode(z_g)
    h, w = orig_hw
    image = np.clip(decoded[:h, :w], 0.0, 1.0)

    return GenerationResult(
        image=image,
        final_latent=z_g,
        injection_log=injection_log,
        seed=req.seed,
        prompt=prompt,
        mask=mask,
        depth_condition=depth,
        latent_trace=latent_trace if keep_latent_trace else None,
        noise_trace=noise_trace if keep_latent_trace else None,
        metadata={
            "num_steps": num_steps,
            "knobs": req.knobs(),
            "prompt_text": prompt.text,
            "prompt_source": prompt.source,
            "inversion_fingerprint": traj.conditioning_fingerprint,
            "injection": {
                "tau_f": inj.tau_f,
                "tau_q": inj.tau_q,
                "tau_k": inj.tau_k,
                "spatial_layers": list(inj.spatial_layers),
                "attention_layers": list(inj.attention_layers),
            },
        },
    )
