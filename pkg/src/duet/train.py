"""Gradient computation and the AdamW training loop for both model variants."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .denoiser import ConditionTriple, DenoiserParams, apply_condition_dropout, pair_forward, single_forward
from .diffusion import NoiseSchedule, q_sample
from .errors import DivergenceDetected, NonFiniteGradient
from .losses import LossWeights, total_loss
from .motion import Skeleton

log = logging.getLogger(__name__)

FROZEN = ("cond.E", 0)  # the ∅ embedding row never trains


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 300
    batch_size: int = 8
    max_lr: float = 2e-3
    warmup_epochs: int = 10
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 2e-5
    adam_eps: float = 1e-8
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)


def learning_rate(epoch: float, max_lr: float, warmup_epochs: int, total_epochs: int) -> float:
    """Linear warm-up to ``max_lr`` over ``warmup_epochs``, then cosine decay to 0 at ``total_epochs``."""
    if warmup_epochs > 0 and epoch <= warmup_epochs:
        return max_lr * epoch / warmup_epochs
    span = total_epochs - warmup_epochs
    if span <= 0:
        return max_lr
    frac = min(max((epoch - warmup_epochs) / span, 0.0), 1.0)
    return max_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def param_gradients(
    params: DenoiserParams,
    batch,
    t_draws,
    noise_draws,
    loss_weights: LossWeights,
    sched: NoiseSchedule,
    skeleton: Skeleton,
):
    """Exact gradient of the training loss for one batch.

    For the interaction variant ``batch`` is ``(x0_a, x0_b, ConditionTriple)``
    and ``noise_draws`` is ``(eps_a, eps_b)``; for the prior it is
    ``(x0, individual_ids)`` and a single noise array. Conditions are used as
    given (apply dropout beforehand).

    Motions are given in feature space. When the model carries feature
    statistics, diffusion runs on normalized motions and the prediction is
    mapped back before the loss, so every term is in feature units.

    Returns ``(loss, breakdown, grads)``.
    """
    cfg = params.config
    P = ag.parameters(params.tensors)
    t = np.asarray(t_draws)
    back = params.to_feature_space
    if cfg.has_cross:
        x0_a, x0_b, cond = batch
        eps_a, eps_b = noise_draws
        xa = q_sample(params.to_model_space(x0_a), t, eps_a, sched)
        xb = q_sample(params.to_model_space(x0_b), t, eps_b, sched)
        y = pair_forward(P, cfg, xa, xb, t, cond)
        n = xa.shape[0]
        loss, parts = total_loss((back(y[:n]), back(y[n:])), (x0_a, x0_b), None, skeleton, loss_weights, t, sched, "interaction")
    else:
        x0, ids = batch
        xt = q_sample(params.to_model_space(x0), t, noise_draws, sched)
        y = single_forward(P, cfg, xt, t, ids)
        loss, parts = total_loss(back(y), x0, None, skeleton, loss_weights, t, sched, "individual")
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceDetected(f"non-finite training loss {value}")
    loss.backward()
    grads = {}
    for k, tensor in P.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
        grads[k] = g
    grads[FROZEN[0]] = grads[FROZEN[0]].copy()
    grads[FROZEN[0]][FROZEN[1]] = 0.0
    return value, parts, grads


class AdamW:
    """Adam with decoupled weight decay, both scaled by the learning rate."""

    def __init__(self, params: DenoiserParams, betas=(0.9, 0.999), weight_decay=2e-5, eps=1e-8, state: dict | None = None):
        self.b1, self.b2 = betas
        self.wd = weight_decay
        self.eps = eps
        state = state or {}
        self.step_count = int(state.get("step", 0))
        self.m = {k: np.array(state["m"][k]) for k in params.tensors} if "m" in state else {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.array(state["v"][k]) for k in params.tensors} if "v" in state else {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: DenoiserParams, grads: dict, lr: float) -> None:
        self.step_count += 1
        c1 = 1 - self.b1**self.step_count
        c2 = 1 - self.b2**self.step_count
        for k, p in params.tensors.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps) + self.wd * p
            p -= lr * update
        params.tensors[FROZEN[0]][FROZEN[1]] = 0.0

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}


@dataclass
class EpochRecord:
    epoch: int
    l2: float
    total: float
    lr: float


def train(
    params: DenoiserParams,
    data,
    settings: TrainSettings,
    sched: NoiseSchedule,
    skeleton: Skeleton,
    optimizer_state: dict | None = None,
    start_epoch: int = 0,
    progress=None,
):
    """Train in place and return ``(params, history, optimizer_state)``.

    ``data`` is ``(x0_a, x0_b, cond_ids)`` with ``cond_ids`` of shape ``(N, 3)``
    for the interaction model, or ``(x0, individual_ids)`` for the prior.
    """
    cfg = params.config
    opt = AdamW(params, settings.betas, settings.weight_decay, settings.adam_eps, optimizer_state)
    n = data[0].shape[0]
    bs = min(settings.batch_size, n)
    steps = max(1, n // bs)
    T = sched.total_steps
    history: list[EpochRecord] = []
    for epoch in range(start_epoch, settings.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([int(settings.seed) & (2**64 - 1), 0x7A, epoch]))
        order = rng.permutation(n)
        l2_sum = tot_sum = 0.0
        lr = 0.0
        for s in range(steps):
            idx = np.sort(order[s * bs:(s + 1) * bs])
            t = rng.integers(1, T + 1, size=idx.size)
            lr = learning_rate(epoch + (s + 1) / steps, settings.max_lr, settings.warmup_epochs, settings.epochs)
            if cfg.has_cross:
                xa, xb, ids = data[0][idx], data[1][idx], data[2][idx]
                noise = (rng.standard_normal(xa.shape), rng.standard_normal(xb.shape))
                cond = apply_condition_dropout(ConditionTriple.from_array(ids), rng, cfg.condition_dropout_prob, idx.size)
                batch = (xa, xb, cond)
            else:
                x0, ids = data[0][idx], data[1][idx]
                noise = rng.standard_normal(x0.shape)
                keep = rng.random(idx.size) >= cfg.condition_dropout_prob
                batch = (x0, np.where(keep, ids, 0))
            loss, parts, grads = param_gradients(params, batch, t, noise, settings.loss_weights, sched, skeleton)
            opt.step(params, grads, lr)
            l2_sum += parts["l2"]
            tot_sum += loss
        rec = EpochRecord(epoch + 1, l2_sum / steps, tot_sum / steps, lr)
        history.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("epoch %d l2=%.5f total=%.5f lr=%.2e", rec.epoch, rec.l2, rec.total, lr)
    return params, history, opt.state()
