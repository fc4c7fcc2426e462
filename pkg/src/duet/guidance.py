"""Multi-weight classifier-free guidance over the joint, interaction-only and
individual-only condition patterns."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .denoiser import ConditionTriple, DenoiserParams, denoise_pair
from .errors import MissingCondition

PairDenoiser = Callable[[np.ndarray, np.ndarray, object, ConditionTriple], tuple]


@dataclass(frozen=True)
class GuidanceWeights:
    w_c: float = 3.0
    w_I: float = 3.0
    w_i: float = 1.0

    def __post_init__(self):
        if not all(np.isfinite([self.w_c, self.w_I, self.w_i])):
            raise ValueError("guidance weights must be finite")


def as_pair_denoiser(model) -> PairDenoiser:
    if isinstance(model, DenoiserParams):
        return lambda x_a, x_b, t, cond: denoise_pair(model, x_a, x_b, t, cond)
    return model


def _present(v) -> bool:
    return bool(np.all(np.asarray(v) != 0))


def guided_x0(model, x_a, x_b, t, cond: ConditionTriple, w: GuidanceWeights):
    """Guided clean-motion prediction for both persons.

    ``G(∅) + w_c (G(c) - G(∅)) + w_I (G(c_I) - G(∅)) + w_i (G(c_i) - G(∅))``;
    the denoiser is not called for a term whose weight is exactly zero.
    ``model`` is a :class:`DenoiserParams` or a callable
    ``(x_a, x_b, t, cond) -> (x0_a, x0_b)``.
    """
    has_int = _present(cond.interaction)
    has_ind = _present(cond.individual_a) and _present(cond.individual_b)
    if w.w_c != 0 and not (has_int and has_ind):
        raise MissingCondition("w_c is nonzero but the full condition is incomplete")
    if w.w_I != 0 and not has_int:
        raise MissingCondition("w_I is nonzero but the interaction label is ∅")
    if w.w_i != 0 and not has_ind:
        raise MissingCondition("w_i is nonzero but an individual label is ∅")

    G = as_pair_denoiser(model)
    u_a, u_b = G(x_a, x_b, t, cond.masked(interaction=False, individual=False))
    out_a, out_b = u_a, u_b
    terms = (
        (w.w_c, cond),
        (w.w_I, cond.masked(interaction=True, individual=False)),
        (w.w_i, cond.masked(interaction=False, individual=True)),
    )
    for weight, pattern in terms:
        if weight == 0:
            continue
        g_a, g_b = G(x_a, x_b, t, pattern)
        out_a = out_a + weight * (g_a - u_a)
        out_b = out_b + weight * (g_b - u_b)
    return out_a, out_b
