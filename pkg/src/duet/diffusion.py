"""Cosine noise schedule, forward noising and deterministic DDIM sampling.

The denoiser predicts clean samples, so every reverse step goes through the
predicted ``x0``. All arithmetic here is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidParams, InvalidShape, InvalidTimesteps, ShapeMismatch

MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray  # (T + 1,), alpha_bar[0] == 1

    @property
    def total_steps(self) -> int:
        return self.alpha_bar.shape[0] - 1

    T = total_steps


def build_cosine_schedule(T: int = 1000, s: float = 0.008) -> NoiseSchedule:
    """``alpha_bar[t] = f(t) / f(0)`` with ``f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)``.

    Where the implied per-step beta would exceed 0.999 the step ratio is
    clamped, which keeps ``alpha_bar[T]`` strictly positive.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidParams(f"T must be a positive integer, got {T!r}")
    if not 0 < s < 1:
        raise InvalidParams(f"s must lie in (0, 1), got {s!r}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1 + s)) * (math.pi / 2)) ** 2
    ab = f / f[0]
    ab[0] = 1.0
    for i in range(1, T + 1):
        if ab[i] < (1 - MAX_BETA) * ab[i - 1]:
            ab[i] = (1 - MAX_BETA) * ab[i - 1]
    ab.flags.writeable = False
    return NoiseSchedule(ab)


@dataclass(frozen=True)
class SamplerConfig:
    ddim_steps: int = 50
    eta: float = 0.0
    seed: int = 0
    shared_init_noise: bool = False

    def __post_init__(self):
        if self.eta != 0.0:
            raise InvalidParams("only deterministic sampling (eta = 0) is supported")
        if self.ddim_steps < 1:
            raise InvalidParams("ddim_steps must be >= 1")


def _ab(sched: NoiseSchedule, t) -> np.ndarray:
    return sched.alpha_bar[np.asarray(t)]


def _bcast(coef, x):
    coef = np.asarray(coef, dtype=np.float64)
    return coef.reshape(coef.shape + (1,) * (x.ndim - coef.ndim))


def q_sample(x0, t, noise, sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise``; ``t`` is a scalar or one step per batch row."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ShapeMismatch(f"x0 {x0.shape} vs noise {noise.shape}")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > sched.total_steps):
        raise InvalidTimesteps(f"t out of [0, {sched.total_steps}]")
    ab = _ab(sched, t)
    return _bcast(np.sqrt(ab), x0) * x0 + _bcast(np.sqrt(1.0 - ab), x0) * noise


def ddim_step(x_t, x0_hat, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM update from ``t`` to ``t_prev`` given a predicted clean sample."""
    if not 0 <= t_prev < t <= sched.total_steps:
        raise InvalidTimesteps(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t_prev]
    if not 1.0 - ab_t > 0:
        raise InvalidTimesteps(f"alpha_bar[{t}] leaves no noise to remove")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    eps_hat = (x_t - math.sqrt(ab_t) * x0_hat) / math.sqrt(1.0 - ab_t)
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def ddim_timesteps(T: int, ddim_steps: int) -> list[int]:
    """Denoiser-invocation timesteps ``round(k T / S)`` for ``k = S..1``."""
    if not 1 <= ddim_steps <= T:
        raise InvalidParams(f"ddim_steps must lie in [1, {T}]")
    return [int(round(k * T / ddim_steps)) for k in range(ddim_steps, 0, -1)]


DenoiseFn = Callable[[np.ndarray, np.ndarray, int, object], tuple[np.ndarray, np.ndarray]]


def initial_noise(shape, cfg: SamplerConfig):
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed) & (2**64 - 1)))
    x_a = rng.standard_normal(shape)
    x_b = x_a.copy() if cfg.shared_init_noise else rng.standard_normal(shape)
    return x_a, x_b


def sample_loop(
    denoise_fn: DenoiseFn,
    conditions,
    shape,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    width: int | None = None,
):
    """Run the reverse chain for a pair of persons from seeded Gaussian noise at ``t = T``.

    ``denoise_fn(x_a, x_b, t, conditions)`` returns the predicted clean pair.
    """
    shape = tuple(int(n) for n in shape)
    if len(shape) < 2 or (width is not None and shape[-1] != width):
        raise InvalidShape(f"shape {shape} does not end in the feature width {width}")
    steps = ddim_timesteps(sched.total_steps, cfg.ddim_steps)
    x_a, x_b = initial_noise(shape, cfg)
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        x0_a, x0_b = denoise_fn(x_a, x_b, t, conditions)
        x_a = ddim_step(x_a, x0_a, t, t_prev, sched)
        x_b = ddim_step(x_b, x0_b, t, t_prev, sched)
    return x_a, x_b
