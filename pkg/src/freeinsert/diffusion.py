"""Scheduler-level diffusion math: forward noising, DDIM stepping, inversion.

All operations are pure functions over LatentGrid/NoiseSchedule values and
are independent of any concrete denoiser.

Core identities (s_t = √ᾱ_t, u_t = √(1−ᾱ_t)):

    forward:   z_t = s_t·z_0 + u_t·ε
    ddim step: ẑ_0 = (z_t − u_t·ε̂)/s_t ;  z_{t'} = s_{t'}·ẑ_0 + u_{t'}·ε̂

The same retiming formula serves both directions; `ddim_step` restricts it
to t' < t.

Inversion runs the retiming upward and, by default, solves each step's
sampling-consistency equation by fixed-point iteration: z_{t+1} is chosen so
that a later DDIM sampling step, querying the denoiser at (z_{t+1}, t+1),
lands back on z_t. That makes invert→sample exact to solver tolerance for
any contractive denoiser, which the naive single-evaluation inversion
(eps_reference="lower") cannot guarantee.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .backends.base import ConditioningSet, DenoiserBackend, conditioning_fingerprint
from .errors import BackendError, ContractError, TimestepError
from .latent import LatentGrid, Trajectory
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

SOLVE_TOL = 1e-12
SOLVE_MAX_ITERS = 50


def add_noise(z0: LatentGrid, t: int, eps: LatentGrid, schedule: NoiseSchedule) -> LatentGrid:
    """Forward noising: √ᾱ_t·z0 + √(1−ᾱ_t)·eps."""
    if not 0 <= t <= schedule.num_steps:
        raise TimestepError(f"timestep {t} outside 0..{schedule.num_steps}")
    z0.check_compatible(eps, op="add_noise")
    a = schedule.at(t)
    return z0.with_values(math.sqrt(a) * z0.values + math.sqrt(1.0 - a) * eps.values)


def _retime(z: LatentGrid, eps: LatentGrid, t_from: int, t_to: int, schedule: NoiseSchedule) -> LatentGrid:
    """Move z from noise level t_from to t_to while keeping eps fixed."""
    a_from = schedule.at(t_from)
    a_to = schedule.at(t_to)
    s_from = math.sqrt(a_from)
    if s_from == 0.0:
        raise ContractError("alpha_bar must stay positive (schedule invariant)")
    z0_hat = (z.values - math.sqrt(1.0 - a_from) * eps.values) / s_from
    return z.with_values(math.sqrt(a_to) * z0_hat + math.sqrt(1.0 - a_to) * eps.values)


def ddim_step(
    z_t: LatentGrid, eps_pred: LatentGrid, t: int, t_prev: int, schedule: NoiseSchedule
) -> LatentGrid:
    """One deterministic DDIM sampling step t -> t_prev (t_prev < t)."""
    if not 0 <= t_prev < t <= schedule.num_steps:
        raise TimestepError(f"need 0 <= t_prev < t <= {schedule.num_steps}, got t={t}, t_prev={t_prev}")
    z_t.check_compatible(eps_pred, op="ddim_step")
    return _retime(z_t, eps_pred, t, t_prev, schedule)


def _predict(
    backend: DenoiserBackend, z: LatentGrid, t: int, cond: ConditioningSet
) -> LatentGrid:
    try:
        eps, _ = backend.predict(z, t, cond)
    except Exception as exc:
        raise BackendError(f"denoiser failed during inversion: {exc}", timestep=t) from exc
    z.check_compatible(eps, op="use eps from backend")
    return eps


def ddim_invert(
    z0: LatentGrid,
    backend: DenoiserBackend,
    cond: ConditioningSet,
    schedule: NoiseSchedule,
    eps_reference: str = "solve",
    solve_tol: float = SOLVE_TOL,
    solve_max_iters: int = SOLVE_MAX_ITERS,
) -> Trajectory:
    """Integrate z0 up the noise axis, returning the full trajectory z_0..z_T.

    eps_reference:
      "solve" (default) — per step, fixed-point solve for z_{t+1} such that
        the DDIM sampling step evaluated at (z_{t+1}, t+1) returns z_t.
      "lower" — single evaluation at (z_t, t), the textbook approximation.
    """
    if eps_reference not in ("solve", "lower"):
        raise ContractError(f"unknown eps_reference {eps_reference!r}")
    latents = [z0]
    z = z0
    for t in range(schedule.num_steps):
        if eps_reference == "lower":
            eps = _predict(backend, z, t, cond)
            z = _retime(z, eps, t, t + 1, schedule)
        else:
            eps = _predict(backend, z, t + 1, cond)
            z_up = _retime(z, eps, t, t + 1, schedule)
            for _ in range(solve_max_iters):
                eps = _predict(backend, z_up, t + 1, cond)
                z_next = _retime(z, eps, t, t + 1, schedule)
                delta = float(np.max(np.abs(z_next.values - z_up.values)))
                z_up = z_next
                if delta < solve_tol:
                    break
            else:
                logger.warning("inversion fixed point not converged at t=%d (delta=%.3e)", t + 1, delta)
            z = z_up
        latents.append(z)
    return Trajectory(latents=tuple(latents), conditioning_fingerprint=conditioning_fingerprint(cond))


def ddim_sample(
    z_T: LatentGrid,
    backend: DenoiserBackend,
    cond: ConditioningSet,
    schedule: NoiseSchedule,
) -> LatentGrid:
    """Plain DDIM sampling loop T -> 0 (test oracle and building block)."""
    z = z_T
    for t in range(schedule.num_steps, 0, -1):
        try:
            eps, _ = backend.predict(z, t, cond)
        except Exception as exc:
            raise BackendError(f"denoiser failed during sampling: {exc}", timestep=t) from exc
        z = ddim_step(z, eps, t, t - 1, schedule)
    return z
