"""Sampling-time blending of the interaction model with the single-person prior.

Each reverse step computes both models' clean-motion predictions and mixes
them per person as ``G_int + w(t) (G_prior - G_int)``, where ``w(t)`` comes
from a blend schedule evaluated at the absolute diffusion timestep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import ConditionTriple, DenoiserParams, denoise_pair, denoise_single
from .diffusion import NoiseSchedule, SamplerConfig, sample_loop
from .errors import IncompatibleModels, InvalidParams, InvalidTimestep, ShapeMismatch
from .guidance import GuidanceWeights, guided_x0

KINDS = ("constant", "linear", "exponential", "inverse_exponential")


@dataclass(frozen=True)
class BlendSchedule:
    kind: str = "exponential"
    lam: float = 0.00875

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise InvalidParams(f"unknown blend kind {self.kind!r}; expected one of {KINDS}")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise InvalidParams("lambda must be finite and >= 0")
        if kind == "constant" and self.lam > 1:
            raise InvalidParams("constant blend weight must lie in [0, 1]")


def blend_weight(sched: BlendSchedule, t: int, T: int) -> float:
    """Prior weight at diffusion step ``t``: constant ``λ``, linear ``t/T``,
    exponential ``exp(-λ (T - t))`` or inverse exponential ``1 - exp(-λ (T - t))``."""
    if T < 1 or not 0 <= t <= T:
        raise InvalidTimestep(f"need 0 <= t <= T with T >= 1, got t={t}, T={T}")
    if sched.kind == "constant":
        return float(sched.lam)
    if sched.kind == "linear":
        return t / T
    e = math.exp(-sched.lam * (T - t))
    return e if sched.kind == "exponential" else 1.0 - e


def composed_x0(interaction_out, prior_out_a, prior_out_b, w: float):
    """Per-person affine blend; ``w = 0`` and ``w = 1`` return an input unchanged."""
    g_a, g_b = interaction_out
    if np.shape(g_a) != np.shape(prior_out_a) or np.shape(g_b) != np.shape(prior_out_b):
        raise ShapeMismatch("interaction and prior outputs differ in shape")
    if not math.isfinite(w):
        raise InvalidParams("blend weight must be finite")
    if w == 0:
        return g_a, g_b
    if w == 1:
        return prior_out_a, prior_out_b
    return g_a + w * (prior_out_a - g_a), g_b + w * (prior_out_b - g_b)


def prior_x0(prior: DenoiserParams, x, t, label, scale: float = 1.0):
    """Prior prediction with standard classifier-free guidance of strength ``scale``."""
    cond = denoise_single(prior, x, t, label)
    if scale == 1:
        return cond
    uncond = denoise_single(prior, x, t, 0)
    return uncond + scale * (cond - uncond)


def _check_models(interaction: DenoiserParams, prior: DenoiserParams, sched: NoiseSchedule):
    if interaction.config.width != prior.config.width:
        raise IncompatibleModels(f"feature widths differ: {interaction.config.width} vs {prior.config.width}")
    for m in (interaction, prior):
        if m.config.diffusion_steps != sched.total_steps:
            raise IncompatibleModels(
                f"model trained for T={m.config.diffusion_steps}, schedule has T={sched.total_steps}"
            )
    if not interaction.config.has_cross or prior.config.has_cross:
        raise IncompatibleModels("expected an interaction model and an individual prior")
    if (interaction.stats is None) != (prior.stats is None) or (
        interaction.stats is not None and not interaction.stats.same_as(prior.stats)
    ):
        raise IncompatibleModels("models were trained with different feature statistics")


def _to_features(model: DenoiserParams, pair):
    """Sampling runs in the model's normalized space; map the result back."""
    return model.to_feature_space(pair[0]), model.to_feature_space(pair[1])


def sample_interaction(interaction: DenoiserParams, weights: GuidanceWeights, cond: ConditionTriple, shape, cfg: SamplerConfig, sched: NoiseSchedule):
    """Plain guided sampling with the interaction model alone."""
    fn = lambda xa, xb, t, c: guided_x0(interaction, xa, xb, t, c, weights)  # noqa: E731
    return _to_features(interaction, sample_loop(fn, cond, shape, cfg, sched, width=interaction.config.width))


def sample_prior_pair(prior: DenoiserParams, cond: ConditionTriple, shape, cfg: SamplerConfig, sched: NoiseSchedule, scale: float = 1.0):
    """Each person sampled independently by the prior, using the pair sampler's noise draws."""

    def fn(xa, xb, t, c):
        return prior_x0(prior, xa, t, c.individual_a, scale), prior_x0(prior, xb, t, c.individual_b, scale)

    return _to_features(prior, sample_loop(fn, cond, shape, cfg, sched, width=prior.config.width))


def dual_denoiser(
    interaction: DenoiserParams,
    weights: GuidanceWeights,
    prior: DenoiserParams,
    blend: BlendSchedule,
    T: int,
    prior_scale: float = 1.0,
    blend_point: str = "post_cfg",
):
    """Per-step denoise function for :func:`sample_loop` that blends both models."""
    if blend_point not in ("post_cfg", "pre_cfg"):
        raise InvalidParams(f"blend_point must be post_cfg or pre_cfg, got {blend_point!r}")

    def post(xa, xb, t, cond):
        w = blend_weight(blend, t, T)
        if w == 1:
            return prior_x0(prior, xa, t, cond.individual_a, prior_scale), prior_x0(prior, xb, t, cond.individual_b, prior_scale)
        g = guided_x0(interaction, xa, xb, t, cond, weights)
        if w == 0:
            return g
        pa = prior_x0(prior, xa, t, cond.individual_a, prior_scale)
        pb = prior_x0(prior, xb, t, cond.individual_b, prior_scale)
        return composed_x0(g, pa, pb, w)

    def pre(xa, xb, t, cond):
        w = blend_weight(blend, t, T)

        def blended(ya, yb, tt, c):
            g = denoise_pair(interaction, ya, yb, tt, c)
            if w == 0:
                return g
            return composed_x0(g, denoise_single(prior, ya, tt, c.individual_a), denoise_single(prior, yb, tt, c.individual_b), w)

        return guided_x0(blended, xa, xb, t, cond, weights)

    return post if blend_point == "post_cfg" else pre


def dual_sample_loop(
    interaction: DenoiserParams,
    weights: GuidanceWeights,
    prior: DenoiserParams,
    cond: ConditionTriple,
    blend: BlendSchedule,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    shape,
    prior_scale: float = 1.0,
    blend_point: str = "post_cfg",
):
    _check_models(interaction, prior, sched)
    fn = dual_denoiser(interaction, weights, prior, blend, sched.total_steps, prior_scale, blend_point)
    return _to_features(interaction, sample_loop(fn, cond, shape, cfg, sched, width=interaction.config.width))
