"""Runtime closures for the real adapter: prompt encoding, one depth-guided
UNet evaluation (unconditional + conditional for guidance), timestep
mapping, refiner hook. Imported only on hosts with the 'real' extra."""

from __future__ import annotations

import numpy as np


def build_runtime(cfg, *, unet, controlnet, vae, device, dtype) -> dict:
    import torch
    from transformers import CLIPTextModel, CLIPTextModelWithProjection, CLIPTokenizer

    tok1 = CLIPTokenizer.from_pretrained(cfg.base_model_path, subfolder="tokenizer")
    tok2 = CLIPTokenizer.from_pretrained(cfg.base_model_path, subfolder="tokenizer_2")
    enc1 = CLIPTextModel.from_pretrained(
        cfg.base_model_path, subfolder="text_encoder", torch_dtype=dtype
    ).to(device).eval()
    enc2 = CLIPTextModelWithProjection.from_pretrained(
        cfg.base_model_path, subfolder="text_encoder_2", torch_dtype=dtype
    ).to(device).eval()

    # Work at the diffusion model's native 1000-step axis; pipeline timesteps
    # (0..T) are mapped by uniform stride.
    base_steps = unet.config.get("num_train_timesteps", 1000) if hasattr(unet.config, "get") else 1000

    def timestep_map_factory(num_steps: int = 50):
        return {
            t: int(round(t * (base_steps - 1) / num_steps)) for t in range(num_steps + 1)
        }

    timestep_map = timestep_map_factory()

    @torch.no_grad()
    def encode_one(text: str):
        out = []
        pooled = None
        for tok, enc in ((tok1, enc1), (tok2, enc2)):
            ids = tok(
                text, padding="max_length", max_length=tok.model_max_length,
                truncation=True, return_tensors="pt",
            ).input_ids.to(device)
            res = enc(ids, output_hidden_states=True)
            if hasattr(res, "text_embeds"):
                pooled = res.text_embeds
            out.append(res.hidden_states[-2])
        return torch.cat(out, dim=-1), pooled

    @torch.no_grad()
    def encode_prompt(text: str):
        cond, pooled_cond = encode_one(text)
        uncond, pooled_uncond = encode_one("")
        return {"cond": cond, "uncond": uncond, "pooled_cond": pooled_cond, "pooled_uncond": pooled_uncond}

    @torch.no_grad()
    def unet_forward(latent, timestep, text_embeds, depth_image, adapter_embeds):
        h_pix = latent.shape[-2] * 8
        w_pix = latent.shape[-1] * 8
        time_ids = torch.tensor(
            [[h_pix, w_pix, 0, 0, h_pix, w_pix]], device=device, dtype=dtype
        )
        eps = []
        for key, pooled_key in (("uncond", "pooled_uncond"), ("cond", "pooled_cond")):
            added = {"text_embeds": text_embeds[pooled_key], "time_ids": time_ids}
            if adapter_embeds is not None and key == "cond":
                vec, weight = adapter_embeds
                added["image_embeds"] = vec * weight
            down_res, mid_res = controlnet(
                latent,
                timestep,
                encoder_hidden_states=text_embeds[key],
                controlnet_cond=depth_image,
                added_cond_kwargs=added,
                return_dict=False,
            )
            pred = unet(
                latent,
                timestep,
                encoder_hidden_states=text_embeds[key],
                down_block_additional_residuals=down_res,
                mid_block_additional_residual=mid_res,
                added_cond_kwargs=added,
            ).sample
            eps.append(pred)
        return eps[0], eps[1]

    def refine(z, remaining_fraction: float):
        # Refinement re-noises to the remaining fraction and re-denoises with
        # the refiner UNet; loaded lazily because it is optional.
        if not cfg.refiner.enabled:
            return z
        from diffusers import StableDiffusionXLImg2ImgPipeline

        pipe = StableDiffusionXLImg2ImgPipeline.from_pretrained(
            cfg.refiner.path, torch_dtype=dtype
        ).to(device)
        img = vae.decode(
            torch.from_numpy(z.values[None]).to(device=device, dtype=dtype)
            / vae.config.scaling_factor
        ).sample
        img = (img.clamp(-1, 1) + 1) / 2
        out = pipe(
            prompt="", image=img, strength=remaining_fraction, output_type="latent"
        ).images
        return z.with_values(out[0].float().cpu().numpy())

    return {
        "unet": unet,
        "vae": vae,
        "device": device,
        "dtype": dtype,
        "timestep_map": timestep_map,
        "timestep_map_factory": timestep_map_factory,
        "encode_prompt": encode_prompt,
        "unet_forward": unet_forward,
        "refine": refine,
    }
