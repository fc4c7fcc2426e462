"""Finite-difference check of training-loss gradients on small two-layer models."""

from __future__ import annotations

import numpy as np

from duet.corpus import CorpusSpec, generate_sample, pair_tensors
from duet.denoiser import ConditionTriple, DenoiserConfig, FeatureStats, init_params
from duet.diffusion import build_cosine_schedule
from duet.losses import LossWeights
from duet.motion import default_skeleton
from duet.train import param_gradients

H = 1e-5
REL_TOL = 1e-4
# all kinematic terms active; the wide threshold keeps cross-person pairs in the mask
WEIGHTS = LossWeights(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 3.0)
SCHED = build_cosine_schedule(1000)
SKEL = default_skeleton()


def rel_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _batch(seed, variant):
    # mirror and step-in-place pairs always contain planted feet
    spec = CorpusSpec(sample_count=2, frames_per_sample=6, seed=seed)
    names = [("mirror", "wave-right", "step-in-place"), ("push-retreat", "step-in-place", "bow")]
    samples = [generate_sample(spec, k, labels=trip) for k, trip in enumerate(names)]
    xa, xb, ids = pair_tensors(samples)
    rng = np.random.default_rng(seed)
    t = rng.integers(1, 60, size=2)
    if variant == "interaction":
        return (xa, xb, ConditionTriple.from_array(ids)), t, (rng.standard_normal(xa.shape), rng.standard_normal(xb.shape))
    return (xa, ids[:, 1]), t, rng.standard_normal(xa.shape)


def check_config(seed: int, samples_per_config: int = 24, variant: str = "interaction", weights: LossWeights = WEIGHTS,
                 with_stats: bool = False):
    """Relative errors of analytic vs central-difference gradients for sampled entries.

    ``with_stats`` attaches random feature statistics so the normalized
    training path is differentiated too.

    Returns ``(errors, breakdown)``; every kinematic term must be non-zero in
    ``breakdown`` for the check to cover it.
    """
    rng = np.random.default_rng(seed)
    cfg = DenoiserConfig(layers=2, latent_dim=int(rng.choice([8, 12])), heads=2, variant=variant, width=SKEL.layout.width, n_labels=10)
    params = init_params(cfg, seed, scale=float(rng.uniform(0.5, 1.5)))
    if with_stats:
        params.stats = FeatureStats(0.1 * rng.standard_normal(cfg.width), float(rng.uniform(0.2, 1.0)))
    batch, t, noise = _batch(seed, variant)
    _, parts, grads = param_gradients(params, batch, t, noise, weights, SCHED, SKEL)

    def loss():
        return param_gradients(params, batch, t, noise, weights, SCHED, SKEL)[0]

    names = sorted(grads)
    errors = []
    for _ in range(samples_per_config):
        k = names[rng.integers(len(names))]
        arr = params.tensors[k]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        if k == "cond.E" and idx[0] == 0:
            continue  # the empty-label row is frozen by design
        old = arr[idx]
        arr[idx] = old + H
        up = loss()
        arr[idx] = old - H
        down = loss()
        arr[idx] = old
        errors.append(rel_error(grads[k][idx], (up - down) / (2 * H)))
    return np.array(errors), parts
