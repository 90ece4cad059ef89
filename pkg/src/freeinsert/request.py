"""CompositeRequest: the unit of work for the CLI, service and benchmark.

Carries loaded pixel data plus every control knob. File resolution lives in
the harness; the engine itself never touches disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compositing import Placement, RenderedObject
from .errors import ConfigError

KNOB_RANGES = {
    "tau_f": (0.0, 1.0),
    "tau_q": (0.0, 1.0),
    "tau_k": (0.0, 1.0),
    "guidance": (0.0, 30.0),
    "content_weight": (0.0, 2.0),
    "style_weight": (0.0, 2.0),
    "seed": (0, 2**31 - 1),
}


@dataclass
class CompositeRequest:
    object_image: np.ndarray
    background: np.ndarray
    render: RenderedObject
    placement: Placement
    prompt: str | None = None
    object_tag: str = "object"
    tau_f: float = 0.2
    tau_q: float = 0.5
    tau_k: float = 0.5
    seed: int = 0
    guidance: float = 5.0
    content_weight: float = 0.8
    style_weight: float = 0.6
    style_active_range: tuple[float, float] = (0.0, 1.0)
    use_content_embedding: bool = True
    use_style_embedding: bool = True
    dilate_radius: int = 8
    bg_depth_source: str = "constant_far"
    paste_mode: str = "alpha"
    branch1_mode: str = "replay"  # "replay" pins Branch1 to the inversion path
    backend_profile: str = "toy"
    source_paths: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tau_f", "tau_q", "tau_k"):
            v = getattr(self, name)
            lo, hi = KNOB_RANGES[name]
            if not lo <= v <= hi:
                raise ConfigError(f"{name} must be in [{lo}, {hi}], got {v}")
        if self.guidance < 0:
            raise ConfigError(f"guidance must be >= 0, got {self.guidance}")
        if self.branch1_mode not in ("replay", "free"):
            raise ConfigError(f"branch1_mode must be replay|free, got {self.branch1_mode!r}")
        lo, hi = self.style_active_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ConfigError(f"style_active_range must satisfy 0 <= lo <= hi <= 1, got {self.style_active_range}")

    def knobs(self) -> dict:
        """Everything echoed into metadata/run records (no pixel data)."""
        return {
            "prompt": self.prompt,
            "object_tag": self.object_tag,
            "view_tag": self.render.view_tag,
            "placement": {
                "x": self.placement.x,
                "y": self.placement.y,
                "scale": self.placement.scale,
                "rotation_deg": self.placement.rotation_deg,
            },
            "tau_f": self.tau_f,
            "tau_q": self.tau_q,
            "tau_k": self.tau_k,
            "seed": self.seed,
            "guidance": self.guidance,
            "content_weight": self.content_weight,
            "style_weight": self.style_weight,
            "style_active_range": list(self.style_active_range),
            "use_content_embedding": self.use_content_embedding,
            "use_style_embedding": self.use_style_embedding,
            "dilate_radius": self.dilate_radius,
            "bg_depth_source": self.bg_depth_source,
            "paste_mode": self.paste_mode,
            "branch1_mode": self.branch1_mode,
            "backend_profile": self.backend_profile,
            "source_paths": dict(self.source_paths),
        }
