"""Self-attention processors that capture and override q/k projections.

Installed on the tap modules named in the backend config. Values (v) are
computed from the module's own hidden states and are never overridden.
Imported only on hosts with the 'real' extra.
"""

from __future__ import annotations


def install_qk_processors(unet, attention_taps: list[str], taps) -> None:
    import torch
    import torch.nn.functional as F

    class QkTapProcessor:
        def __init__(self, layer_id: str):
            self.layer_id = layer_id

        def __call__(
            self,
            attn,
            hidden_states,
            encoder_hidden_states=None,
            attention_mask=None,
            temb=None,
            **kwargs,
        ):
            residual = hidden_states
            input_ndim = hidden_states.ndim
            if input_ndim == 4:
                b, c, h, w = hidden_states.shape
                hidden_states = hidden_states.view(b, c, h * w).transpose(1, 2)

            if attn.group_norm is not None:
                hidden_states = attn.group_norm(hidden_states.transpose(1, 2)).transpose(1, 2)

            query = attn.to_q(hidden_states)
            context = hidden_states if encoder_hidden_states is None else encoder_hidden_states
            key = attn.to_k(context)
            value = attn.to_v(context)

            ov = taps.overrides
            if ov is not None and self.layer_id in ov.queries:
                query = query.new_tensor(ov.queries[self.layer_id])
            if ov is not None and self.layer_id in ov.keys:
                key = key.new_tensor(ov.keys[self.layer_id])
            taps.captured.queries[self.layer_id] = query.detach().float().cpu().numpy()
            taps.captured.keys[self.layer_id] = key.detach().float().cpu().numpy()

            batch = query.shape[0]
            head_dim = query.shape[-1] // attn.heads
            q = query.view(batch, -1, attn.heads, head_dim).transpose(1, 2)
            k = key.view(batch, -1, attn.heads, head_dim).transpose(1, 2)
            v = value.view(batch, -1, attn.heads, head_dim).transpose(1, 2)
            out = F.scaled_dot_product_attention(q, k, v, attn_mask=attention_mask)
            out = out.transpose(1, 2).reshape(batch, -1, attn.heads * head_dim).to(query.dtype)

            out = attn.to_out[0](out)
            out = attn.to_out[1](out)
            if input_ndim == 4:
                out = out.transpose(-1, -2).reshape(b, c, h, w)
            if attn.residual_connection:
                out = out + residual
            return out / attn.rescale_output_factor

    for lid in attention_taps:
        unet.get_submodule(lid).processor = QkTapProcessor(lid)
