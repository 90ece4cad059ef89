"""Discrete noise schedule: cumulative signal coefficients ᾱ_0..ᾱ_T.

The forward process is z_t = √ᾱ_t·z_0 + √(1−ᾱ_t)·ε, so everything the
pipeline needs from a schedule is the cumulative curve. Index 0 is clean
data (ᾱ_0 = 1), index T is terminal noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScheduleError, TimestepError

# Defaults match the scaled-linear beta curve used by the SD model family:
# beta ramps linearly in sqrt-space over 1000 base steps.
_BASE_STEPS = 1000
_BETA_START = 0.00085
_BETA_END = 0.012


@dataclass(frozen=True)
class NoiseSchedule:
    """ᾱ_0..ᾱ_T over T discrete steps.

    Invariants (enforced at construction):
      ᾱ_0 = 1 within 1e-6, strictly decreasing, every value in (0, 1], T ≥ 1.
    """

    alpha_bar: np.ndarray
    num_steps: int = field(default=0)

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        t = len(ab) - 1
        if self.num_steps == 0:
            object.__setattr__(self, "num_steps", t)
        if self.num_steps != t:
            raise ScheduleError(f"num_steps={self.num_steps} but alpha_bar has {t + 1} entries")
        if t < 1:
            raise ScheduleError("schedule needs T >= 1")
        if not np.all(np.isfinite(ab)):
            raise ScheduleError("alpha_bar contains non-finite values")
        if abs(ab[0] - 1.0) > 1e-6:
            raise ScheduleError(f"alpha_bar[0] must be 1 within 1e-6, got {ab[0]!r}")
        if np.any(np.diff(ab) >= 0):
            raise ScheduleError("alpha_bar must be strictly decreasing")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ScheduleError("alpha_bar values must lie in (0, 1]")

    @property
    def T(self) -> int:
        return self.num_steps

    def at(self, t: int) -> float:
        """ᾱ_t, with range checking."""
        if not 0 <= t <= self.num_steps:
            raise TimestepError(f"timestep {t} outside 0..{self.num_steps}")
        return float(self.alpha_bar[t])

    @classmethod
    def default(cls, num_steps: int = 50) -> "NoiseSchedule":
        """Uniform-stride subsample of the 1000-step scaled-linear curve."""
        betas = np.linspace(_BETA_START**0.5, _BETA_END**0.5, _BASE_STEPS) ** 2
        full = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        idx = np.round(np.linspace(0, _BASE_STEPS, num_steps + 1)).astype(int)
        if len(np.unique(idx)) != num_steps + 1:
            raise ScheduleError(f"num_steps={num_steps} too large for the {_BASE_STEPS}-step base curve")
        return cls(alpha_bar=full[idx])

    @classmethod
    def from_json(cls, path: str | Path) -> "NoiseSchedule":
        """Load {"num_steps": int, "alpha_bar": [floats]} and validate."""
        with open(path) as f:
            cfg = json.load(f)
        if "alpha_bar" not in cfg or "num_steps" not in cfg:
            raise ScheduleError("schedule config needs 'num_steps' and 'alpha_bar'")
        return cls(alpha_bar=np.asarray(cfg["alpha_bar"], dtype=np.float64), num_steps=int(cfg["num_steps"]))

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump({"num_steps": self.num_steps, "alpha_bar": self.alpha_bar.tolist()}, f)
