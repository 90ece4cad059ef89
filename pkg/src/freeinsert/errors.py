"""Exception taxonomy for the freeinsert pipeline.

Callers distinguish contract violations (caller bugs), placement problems
(recoverable, carry a clamped suggestion), backend failures (propagated with
loop context) and configuration/asset problems (startup-time).
"""

from __future__ import annotations


class FreeInsertError(Exception):
    """Base class for all pipeline errors."""


class ContractError(FreeInsertError):
    """A call violated a documented precondition (shape/space mismatch, etc.)."""


class TimestepError(FreeInsertError):
    """Timestep outside the schedule's 0..T range, or invalid step ordering."""


class ScheduleError(FreeInsertError):
    """Noise schedule failed its construction invariants."""


class PlacementError(FreeInsertError):
    """Placement does not intersect the background canvas.

    `suggestion` carries clamped (x, y) coordinates that would be valid.
    """

    def __init__(self, message: str, suggestion: dict | None = None):
        super().__init__(message)
        self.suggestion = suggestion or {}


class BackendError(FreeInsertError):
    """A learned-component backend failed.

    `timestep` and `branch` locate the failure inside the denoising loop when
    it happened there.
    """

    def __init__(self, message: str, timestep: int | None = None, branch: str | None = None):
        super().__init__(message)
        self.timestep = timestep
        self.branch = branch


class ConfigError(FreeInsertError):
    """Invalid configuration (unknown layer, bad knob value, malformed JSON)."""


class AssetError(FreeInsertError):
    """Referenced files missing at load/startup.

    `missing` lists every unresolved path so the operator can fix them in one
    pass.
    """

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []
