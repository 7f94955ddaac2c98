"""Noise schedule, forward noising and the deterministic sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)


def make_linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def q_sample(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise ``z0`` to step ``t`` in one shot."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise DimensionError(f"noise shape {eps.shape} != latent shape {z0.shape}")
    if not 0 <= t < sched.T:
        raise ParameterError(f"timestep {t} outside [0, {sched.T})")
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def sampling_timesteps(T: int, num_steps: int) -> list[int]:
    """Evenly spaced descending timesteps starting at ``T - 1``."""
    if not 0 <= num_steps <= T:
        raise ParameterError(f"num_steps must lie in [0, {T}], got {num_steps}")
    if num_steps == 0:
        return []
    return [int(t) for t in np.round(np.linspace(T - 1, 0, num_steps))]


def initial_latent(
    shape: tuple,
    rng: np.random.Generator,
    sched: NoiseSchedule,
    mode: str = "noise",
    first_latent: np.ndarray | None = None,
) -> np.ndarray:
    """Starting point for the sampler's noisy slot.

    ``noise`` draws pure Gaussian noise. ``degraded`` tiles the input-image
    latent over time and noises it to the final timestep, so the start
    retains a faint trace of the image.
    """
    eps = rng.standard_normal(shape)
    if mode == "noise":
        return eps
    if mode == "degraded":
        if first_latent is None:
            raise ParameterError("degraded init needs the first-frame latent")
        tiled = np.broadcast_to(first_latent, shape)
        return q_sample(tiled, sched.T - 1, eps, sched)
    raise ParameterError(f"unknown init mode {mode!r}")


def denoise_loop(
    model: Callable[[np.ndarray, int], np.ndarray],
    bundle,
    sched: NoiseSchedule,
    num_steps: int,
) -> np.ndarray:
    """Run the eta=0 DDIM update from ``bundle.z_t`` and return the clean estimate.

    ``model(z_c, t)`` receives the 9-channel input rebuilt from the current
    noisy latent and the bundle's fixed condition channels. The final step
    targets alpha_bar = 1, so the return value is the model's Z0 estimate.
    """
    z = np.array(bundle.z_t, dtype=np.float64)
    steps = sampling_timesteps(sched.T, num_steps)
    for i, t in enumerate(steps):
        z_c = np.concatenate([z, bundle.z_sd, bundle.z_m], axis=1)
        eps = np.asarray(model(z_c, t), dtype=np.float64)
        if eps.shape != z.shape:
            raise ContractError(f"model returned {eps.shape}, expected {z.shape}")
        ab = sched.alpha_bars[t]
        ab_prev = sched.alpha_bars[steps[i + 1]] if i + 1 < len(steps) else 1.0
        x0 = (z - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        z = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    return z
