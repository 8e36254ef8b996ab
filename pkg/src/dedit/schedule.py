"""Noise schedule, forward noising, and the deterministic samplers.

The forward process mixes data and Gaussian noise with a monotone
alpha-bar sequence pinned to 1 at index 0 and 0 at index T. Both
samplers walk the same sigma parameterization, sigma = sqrt(1-ab)/sqrt(ab),
so a DDIM chain and the Euler sampler agree on identical grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, DivergenceError, ScheduleError

SAMPLERS = ("ddim", "euler")


def noise_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream); reproducible across platforms."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream & 0xFFFFFFFFFFFFFFFF)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_normal(seed: int, stream: int, shape) -> np.ndarray:
    return noise_rng(seed, stream).standard_normal(shape).astype(np.float32)


@dataclass
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray  # length T+1, alpha_bar[0]=1, alpha_bar[T]=0, strictly decreasing

    def sigma(self, t: int) -> float:
        ab = float(self.alpha_bar[t])
        if ab <= 0.0:
            return math.inf
        return math.sqrt(1.0 - ab) / math.sqrt(ab)


@dataclass
class SampleRun:
    seed: int
    steps: int = 20
    guidance_scale: float = 3.0
    sampler: str = "euler"

    def validate(self, sched: NoiseSchedule) -> None:
        if self.steps < 1 or self.steps > sched.T:
            raise ConfigError(f"steps must be in [1, {sched.T}], got {self.steps}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}")


@dataclass
class DiffusionState:
    z: np.ndarray
    t: int


def make_schedule(T: int, curve: str = "cosine") -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    ts = np.arange(T + 1, dtype=np.float64)
    if curve == "linear_alpha_bar":
        ab = 1.0 - ts / T
    elif curve == "cosine":
        ab = np.cos((ts / T) * (math.pi / 2.0)) ** 2
    else:
        raise ConfigError(f"unknown schedule curve {curve!r}")
    ab[0] = 1.0
    ab[T] = 0.0
    if not np.all(np.diff(ab) < 0):
        raise ConfigError(f"curve {curve!r} is not strictly decreasing at T={T}")
    return NoiseSchedule(T=T, alpha_bar=ab)


def add_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    if x0.shape != eps.shape:
        raise DimensionError(f"add_noise shapes {x0.shape} and {eps.shape}")
    if not 0 <= t <= sched.T:
        raise ContractError(f"t={t} outside [0, {sched.T}]")
    ab = float(sched.alpha_bar[t])
    out = math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    return out.astype(x0.dtype, copy=False)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, s: float) -> np.ndarray:
    if eps_cond.shape != eps_uncond.shape:
        raise DimensionError(f"cfg shapes {eps_cond.shape} and {eps_uncond.shape}")
    if s == 0.0:
        return eps_uncond.copy()
    if s == 1.0:
        return eps_cond.copy()
    return eps_uncond + s * (eps_cond - eps_uncond)


def ddim_step(state: DiffusionState, eps_hat: np.ndarray, t_next: int,
              sched: NoiseSchedule) -> DiffusionState:
    """Deterministic denoising step: estimate x0, then renoise to t_next.

    At the terminal index (alpha_bar exactly 0) the latent carries no
    data component, so the x0 estimate is taken as 0.
    """
    if not 0 <= t_next < state.t:
        raise ContractError(f"t_next {t_next} must lie in [0, {state.t})")
    if state.t > sched.T:
        raise ContractError(f"state.t {state.t} outside schedule range")
    if state.z.shape != eps_hat.shape:
        raise DimensionError(f"ddim shapes {state.z.shape} and {eps_hat.shape}")
    ab_t = float(sched.alpha_bar[state.t])
    ab_n = float(sched.alpha_bar[t_next])
    if ab_t <= 0.0:
        if state.t != sched.T:
            raise ScheduleError(f"alpha_bar is 0 at nonterminal index {state.t}")
        x0_hat = np.zeros_like(state.z)
    else:
        x0_hat = (state.z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
        np.clip(x0_hat, -1.0, 1.0, out=x0_hat)
    z_next = math.sqrt(ab_n) * x0_hat + math.sqrt(1.0 - ab_n) * eps_hat
    return DiffusionState(z=z_next.astype(state.z.dtype, copy=False), t=t_next)


def sample_grid(T: int, steps: int) -> list[int]:
    """Strictly decreasing schedule indices ending at 0.

    The model is evaluated at every index except the final 0; pure noise
    enters at the first index's sigma, so the degenerate alpha_bar=0
    endpoint is never queried.
    """
    raw = [round((steps - k) * T / (steps + 1)) for k in range(steps + 1)]
    grid: list[int] = []
    for t in raw:
        if not grid or t < grid[-1]:
            grid.append(t)
    if grid[-1] != 0:
        grid.append(0)
    return grid


DenoiseFn = Callable[[np.ndarray, int], np.ndarray]
"""Model closure: (z_t, t) -> predicted noise, conditioning already bound."""


def euler_sample(denoise_cond: DenoiseFn, denoise_uncond: Optional[DenoiseFn],
                 run: SampleRun, sched: NoiseSchedule, shape) -> np.ndarray:
    """Euler walk over sigma space from seeded Gaussian noise to a [-1,1] image.

    x_t = z_t / sqrt(alpha_bar_t) satisfies dx/dsigma = eps_hat, so each
    transition adds (sigma_next - sigma) * eps_hat. Guidance combines the
    conditional and unconditional predictions each step; scale 1 skips
    the unconditional pass entirely.
    """
    run.validate(sched)
    if run.guidance_scale != 1.0 and denoise_uncond is None:
        raise ContractError("guidance_scale != 1 needs an unconditional branch")
    grid = sample_grid(sched.T, run.steps)
    sigmas = [sched.sigma(t) for t in grid]
    eps0 = standard_normal(run.seed, 0, shape)
    x = (sigmas[0] * eps0).astype(np.float32)
    for k in range(len(grid) - 1):
        t = grid[k]
        ab = float(sched.alpha_bar[t])
        z = (math.sqrt(ab) * x).astype(np.float32)
        eps_c = denoise_cond(z, t)
        if run.guidance_scale == 1.0:
            eps = eps_c
        else:
            eps_u = denoise_uncond(z, t)
            eps = cfg_combine(eps_c, eps_u, run.guidance_scale)
        x = x + np.float32(sigmas[k + 1] - sigmas[k]) * eps
        if not math.isfinite(float(np.sum(x, dtype=np.float64))):
            raise DivergenceError(f"non-finite latent after sampler step at index {t}")
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def ddim_sample(denoise_cond: DenoiseFn, denoise_uncond: Optional[DenoiseFn],
                run: SampleRun, sched: NoiseSchedule, shape) -> np.ndarray:
    """DDIM chain over the same grid and seed policy as euler_sample."""
    run.validate(sched)
    if run.guidance_scale != 1.0 and denoise_uncond is None:
        raise ContractError("guidance_scale != 1 needs an unconditional branch")
    grid = sample_grid(sched.T, run.steps)
    eps0 = standard_normal(run.seed, 0, shape)
    t0 = grid[0]
    ab0 = float(sched.alpha_bar[t0])
    state = DiffusionState(z=(math.sqrt(1.0 - ab0) * eps0).astype(np.float32), t=t0)
    for t_next in grid[1:]:
        eps_c = denoise_cond(state.z, state.t)
        if run.guidance_scale == 1.0:
            eps = eps_c
        else:
            eps_u = denoise_uncond(state.z, state.t)
            eps = cfg_combine(eps_c, eps_u, run.guidance_scale)
        state = ddim_step(state, eps, t_next, sched)
        if not math.isfinite(float(np.sum(state.z, dtype=np.float64))):
            raise DivergenceError(f"non-finite latent after sampler step at index {t_next}")
    return np.clip(state.z, -1.0, 1.0).astype(np.float32)
