"""Training objective: L2 on predicted clean motion plus kinematic terms.

Every function accepts numpy arrays or autograd tensors shaped ``(B, F, D)``
(pairs are ``(a, b)`` tuples). With plain arrays the result is a float; with
tensors it is a differentiable scalar tensor.

Kinematic terms are computed per sample, weighted by the kinematic weight of
that sample's diffusion timestep, then averaged over the batch.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .diffusion import NoiseSchedule
from .errors import ShapeMismatch
from .motion import Skeleton

DIST_EPS = 1e-8
KINEMATIC_TERMS = ("vel", "foot", "bone", "dm", "ro")


@dataclass(frozen=True)
class LossWeights:
    w_l2: float = 1.0
    w_vel: float = 1.0
    w_foot: float = 1.0
    w_bone: float = 1.0
    w_dm: float = 1.0
    w_ro: float = 0.1
    dm_threshold_m: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {v}")

    def scaled(self, **factors) -> "LossWeights":
        d = asdict(self)
        for k, f in factors.items():
            d[k] *= f
        return LossWeights(**d)


def _any_tensor(args) -> bool:
    for a in args:
        if isinstance(a, Tensor):
            return True
        if isinstance(a, (tuple, list)) and _any_tensor(a):
            return True
    return False


def _public(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        out = fn(*args, **kwargs)
        if _any_tensor(args) or _any_tensor(kwargs.values()):
            return out
        return float(out.data)

    return wrapper


def _batch(x) -> Tensor:
    x = ag.as_tensor(x)
    return x if x.ndim == 3 else x.reshape((1,) + x.shape)


def _pair(p):
    if isinstance(p, (tuple, list)):
        return tuple(_batch(v) for v in p)
    return (_batch(p),)


def _positions(x: Tensor, skeleton: Skeleton) -> Tensor:
    b, f, d = x.shape
    if d != skeleton.layout.width:
        raise ShapeMismatch(f"feature width {d} does not match skeleton width {skeleton.layout.width}")
    return x[:, :, skeleton.layout.pos].reshape(b, f, skeleton.joint_count, 3)


def _norm(v: Tensor, axis=-1) -> Tensor:
    return ag.sqrt((v * v).sum(axis=axis) + DIST_EPS)


# --------------------------------------------------------------------------
# per-sample terms, each returning a (B,) tensor
# --------------------------------------------------------------------------

def _velocity_ps(pred_pos, gt_pos):
    terms = []
    for p, g in zip(pred_pos, gt_pos):
        dp = p[:, 1:] - p[:, :-1]
        dg = g.data[:, 1:] - g.data[:, :-1]
        terms.append(((dp - dg) ** 2).mean(axis=(1, 2, 3)))
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def _foot_ps(pred_pos, contacts, skeleton):
    feet = list(skeleton.foot_joint_ids)
    num, count = 0.0, 0.0
    for p, c in zip(pred_pos, contacts):
        v = p[:, 1:, feet] - p[:, :-1, feet]
        mask = np.asarray(c, dtype=np.float64)[:, 1:]
        num = num + ((v * v).sum(axis=-1) * mask).sum(axis=(1, 2))
        count = count + mask.sum(axis=(1, 2))
    return ag.as_tensor(num) * (1.0 / np.maximum(count, 1.0))


def _bone_ps(pred_pos, skeleton):
    ch, pa = skeleton.bone_children, skeleton.bone_parents
    tmpl = skeleton.template_bone_lengths
    terms = []
    for p in pred_pos:
        length = _norm(p[:, :, ch] - p[:, :, pa])
        terms.append(((length - tmpl) ** 2).mean(axis=(1, 2)))
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def _distance_map_ps(pred_pos, gt_pos, threshold):
    d_pred = ag.cross_distances(pred_pos[0], pred_pos[1], DIST_EPS)
    d_gt = ag.cross_distances(gt_pos[0].data, gt_pos[1].data, DIST_EPS).data
    mask = (d_gt < threshold).astype(np.float64)
    count = mask.sum(axis=(1, 2, 3))
    return (((d_pred - d_gt) ** 2) * mask).sum(axis=(1, 2, 3)) * (1.0 / np.maximum(count, 1.0))


def _facing_ids(skeleton: Skeleton):
    names = skeleton.joint_names
    try:
        return tuple(names.index(n) for n in ("left_hip", "right_hip", "left_shoulder", "right_shoulder"))
    except ValueError:
        return (1, 2, 16, 17)


def facing_direction(pos, skeleton: Skeleton):
    """Unit ground-plane forward vector ``(B, F, 2)`` as (x, z), from hips and shoulders."""
    lh, rh, ls, rs = _facing_ids(skeleton)
    across = (pos[:, :, lh] - pos[:, :, rh]) + (pos[:, :, ls] - pos[:, :, rs])
    fwd = ag.stack([-across[:, :, 2], across[:, :, 0]], axis=-1)
    return fwd / _norm(fwd)[:, :, None]


def relative_direction(pos_a, pos_b, skeleton: Skeleton):
    """Facing of ``b`` expressed in ``a``'s heading frame: ``(cos, sin)`` of the yaw difference."""
    fa, fb = facing_direction(pos_a, skeleton), facing_direction(pos_b, skeleton)
    c = (fa * fb).sum(axis=-1)
    s = fa[:, :, 0] * fb[:, :, 1] - fa[:, :, 1] * fb[:, :, 0]
    return ag.stack([c, s], axis=-1)


def _orientation_ps(pred_pos, gt_pos, skeleton):
    rp = relative_direction(pred_pos[0], pred_pos[1], skeleton)
    rg = relative_direction(ag.as_tensor(gt_pos[0].data), ag.as_tensor(gt_pos[1].data), skeleton).data
    return ((rp - rg) ** 2).sum(axis=-1).mean(axis=1)


# --------------------------------------------------------------------------
# public losses
# --------------------------------------------------------------------------

@_public
def l2_loss(pred, gt):
    """Mean squared error over every entry of every person."""
    pred, gt = _pair(pred), _pair(gt)
    if len(pred) != len(gt) or any(p.shape != g.shape for p, g in zip(pred, gt)):
        raise ShapeMismatch("prediction and target shapes differ")
    total = sum((((p - g.data) ** 2).sum() for p, g in zip(pred, gt)), Tensor(0.0))
    return total * (1.0 / sum(g.data.size for g in gt))


@_public
def velocity_loss(pred, gt, skeleton: Skeleton):
    pred, gt = _pair(pred), _pair(gt)
    return _velocity_ps([_positions(p, skeleton) for p in pred], [_positions(g, skeleton) for g in gt]).mean()


@_public
def foot_contact_loss(pred, gt_contacts, skeleton: Skeleton):
    """Mean squared foot-joint velocity over frames whose ground-truth contact flag is 1."""
    pred = _pair(pred)
    contacts = gt_contacts if isinstance(gt_contacts, (tuple, list)) else (gt_contacts,)
    contacts = [np.asarray(c, dtype=np.float64).reshape((-1,) + np.shape(c)[-2:]) for c in contacts]
    return _foot_ps([_positions(p, skeleton) for p in pred], contacts, skeleton).mean()


@_public
def bone_length_loss(pred, skeleton: Skeleton):
    return _bone_ps([_positions(p, skeleton) for p in _pair(pred)], skeleton).mean()


@_public
def joint_distance_map_loss(pred, gt, skeleton: Skeleton, threshold: float = 1.0):
    pred, gt = _pair(pred), _pair(gt)
    return _distance_map_ps([_positions(p, skeleton) for p in pred], [_positions(g, skeleton) for g in gt], threshold).mean()


@_public
def relative_orientation_loss(pred, gt, skeleton: Skeleton):
    pred, gt = _pair(pred), _pair(gt)
    return _orientation_ps([_positions(p, skeleton) for p in pred], [_positions(g, skeleton) for g in gt], skeleton).mean()


def kinematic_weight(t, sched: NoiseSchedule):
    """Kinematic terms are weighted by ``alpha_bar[t]``: full weight on clean samples."""
    return sched.alpha_bar[np.asarray(t)]


def total_loss(pred, gt, gt_contacts, skeleton: Skeleton, weights: LossWeights, t, sched: NoiseSchedule, variant: str = "interaction"):
    """Weighted objective and its per-term breakdown.

    Returns ``(total, breakdown)`` where ``total`` is a scalar tensor and
    ``breakdown`` maps term names to floats such that
    ``total == w_l2 * l2 + sum(w_k * breakdown[k])``. Kinematic entries already
    include the timestep weighting. The individual variant uses L2 only.
    """
    pred, gt = _pair(pred), _pair(gt)
    l2 = l2_loss(pred, gt)
    breakdown = {"l2": float(l2.data)}
    total = l2 * weights.w_l2
    if variant == "individual":
        return total, breakdown
    n = pred[0].shape[0]
    kw = np.broadcast_to(np.asarray(kinematic_weight(t, sched), dtype=np.float64), (n,))
    breakdown["kinematic_weight"] = float(kw.mean())
    if gt_contacts is None:
        lay = skeleton.layout
        gt_contacts = tuple(g.data[:, :, lay.contacts] for g in gt)
    pp = [_positions(p, skeleton) for p in pred]
    gp = [_positions(g, skeleton) for g in gt]
    contacts = [np.asarray(c, dtype=np.float64).reshape(n, -1, 4) for c in gt_contacts]
    per_sample = {
        "vel": lambda: _velocity_ps(pp, gp),
        "foot": lambda: _foot_ps(pp, contacts, skeleton),
        "bone": lambda: _bone_ps(pp, skeleton),
        "dm": lambda: _distance_map_ps(pp, gp, weights.dm_threshold_m),
        "ro": lambda: _orientation_ps(pp, gp, skeleton),
    }
    for name in KINEMATIC_TERMS:
        w = getattr(weights, f"w_{name}")
        if name in ("dm", "ro") and len(pred) < 2:
            continue
        term = (per_sample[name]() * kw).mean()
        breakdown[name] = float(term.data)
        if w:
            total = total + term * w
    return total, breakdown
