"""Latent-space value types: LatentGrid and inversion Trajectory."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class LatentGrid:
    """A real-valued (channels, height, width) array plus a space tag.

    Elementwise combination of two grids requires identical shape and tag;
    `check_compatible` is the single enforcement point.
    """

    values: np.ndarray
    space_tag: str = "latent"  # "latent" | "pixel"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 3:
            raise ContractError(f"LatentGrid must be 3D (C, H, W), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("LatentGrid entries must be finite")
        if self.space_tag not in ("latent", "pixel"):
            raise ContractError(f"unknown space_tag {self.space_tag!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def check_compatible(self, other: "LatentGrid", op: str = "combine") -> None:
        if self.shape != other.shape:
            raise ContractError(f"cannot {op} grids of shapes {self.shape} and {other.shape}")
        if self.space_tag != other.space_tag:
            raise ContractError(f"cannot {op} grids tagged {self.space_tag!r} and {other.space_tag!r}")

    def with_values(self, values: np.ndarray) -> "LatentGrid":
        return LatentGrid(values=values, space_tag=self.space_tag)


@dataclass(frozen=True)
class Trajectory:
    """Ordered latents z_0..z_T from DDIM inversion, plus a conditioning hash.

    latents[0] is the encoded input, latents[T] the terminal noise. The
    fingerprint lets the dual-branch loop assert it replays the trajectory
    under the same conditioning that produced it.
    """

    latents: tuple[LatentGrid, ...]
    conditioning_fingerprint: str = field(default="")

    def __post_init__(self):
        if len(self.latents) < 2:
            raise ContractError("trajectory needs at least latents[0] and latents[1]")
        shape0 = self.latents[0].shape
        for i, z in enumerate(self.latents):
            if z.shape != shape0:
                raise ContractError(f"trajectory latents[{i}] shape {z.shape} != {shape0}")
        object.__setattr__(self, "latents", tuple(self.latents))

    @property
    def num_steps(self) -> int:
        return len(self.latents) - 1

    def __getitem__(self, t: int) -> LatentGrid:
        return self.latents[t]
