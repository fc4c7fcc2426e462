"""Siamese interaction denoiser and the single-person motion prior.

Both persons run through the same weights. For person ``a``:

* self-attention over ``a``'s frames, modulated (adaptive layer norm) by the
  timestep embedding plus ``a``'s individual-label embedding;
* cross-attention with queries from ``a`` and keys/values from the embedded
  noisy motion of ``b``, modulated by timestep plus interaction embedding;
* a feed-forward sublayer under the self-attention modulation.

Person ``b`` is the mirror image, which makes the model commutative. The
prior (``variant="individual"``) drops cross-attention and the interaction
slot. Outputs are predicted clean motions (x0 parameterization).
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import IncompatibleCheckpoint, InvalidParams, NonFiniteActivation, ShapeMismatch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    layers: int = 2
    latent_dim: int = 32
    heads: int = 2
    condition_dropout_prob: float = 0.10
    variant: str = "interaction"
    width: int = 268
    n_labels: int = 10
    ff_mult: int = 4
    diffusion_steps: int = 1000

    def __post_init__(self):
        if self.latent_dim % self.heads:
            raise InvalidParams("latent_dim must be divisible by heads")
        if self.latent_dim % 2:
            raise InvalidParams("latent_dim must be even for sinusoidal embeddings")
        if not 0 <= self.condition_dropout_prob < 1:
            raise InvalidParams("condition_dropout_prob must lie in [0, 1)")
        if self.variant not in ("interaction", "individual"):
            raise InvalidParams(f"unknown variant {self.variant!r}")

    @property
    def has_cross(self) -> bool:
        return self.variant == "interaction"


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature mean and one global scale.

    The model diffuses ``(x - mean) / scale``. Centring strips the large
    constant offsets (root height, identity rotations) that otherwise swamp
    the input projection; a single scale keeps the relative feature weighting
    of the raw L2 loss.
    """

    mean: np.ndarray
    scale: float

    @classmethod
    def fit(cls, *arrays) -> "FeatureStats":
        flat = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, np.shape(a)[-1]) for a in arrays])
        mean = flat.mean(axis=0)
        scale = float(np.sqrt(np.mean((flat - mean) ** 2)))
        if not scale > 0:
            raise InvalidParams("cannot fit feature statistics to constant data")
        return cls(mean, scale)

    def normalize(self, x):
        return (x - self.mean) / self.scale

    def denormalize(self, z):
        return z * self.scale + self.mean

    def same_as(self, other: "FeatureStats | None") -> bool:
        return other is not None and self.scale == other.scale and np.array_equal(self.mean, other.mean)


@dataclass
class DenoiserParams:
    config: DenoiserConfig
    tensors: dict[str, np.ndarray]
    stats: FeatureStats | None = None

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.stats)

    def to_model_space(self, x):
        return x if self.stats is None else self.stats.normalize(x)

    def to_feature_space(self, z):
        return z if self.stats is None else self.stats.denormalize(z)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def size(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


@dataclass(frozen=True)
class ConditionTriple:
    """Label ids for (interaction, individual a, individual b); 0 is ∅.

    Fields hold ints or per-batch integer arrays.
    """

    interaction: object = 0
    individual_a: object = 0
    individual_b: object = 0

    def swapped(self) -> "ConditionTriple":
        return ConditionTriple(self.interaction, self.individual_b, self.individual_a)

    def batched(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.broadcast_to(np.asarray(v, dtype=np.int64), (n,)) for v in
                     (self.interaction, self.individual_a, self.individual_b))

    def masked(self, interaction: bool = True, individual: bool = True) -> "ConditionTriple":
        """Keep only the chosen slots, replacing the rest with ∅."""
        zero = lambda v: np.zeros_like(np.asarray(v)) if np.ndim(v) else 0  # noqa: E731
        return ConditionTriple(
            self.interaction if interaction else zero(self.interaction),
            self.individual_a if individual else zero(self.individual_a),
            self.individual_b if individual else zero(self.individual_b),
        )

    @classmethod
    def from_array(cls, ids) -> "ConditionTriple":
        ids = np.asarray(ids, dtype=np.int64)
        return cls(ids[..., 0], ids[..., 1], ids[..., 2])


def init_params(config: DenoiserConfig, seed: int = 0, scale: float = 1.0) -> DenoiserParams:
    """Random initialization; ``scale`` multiplies every draw (tests use it to
    make modulation paths non-trivial)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0xD0]))
    L, D = config.latent_dim, config.width
    F = config.ff_mult * L

    def normal(*shape, std):
        return rng.standard_normal(shape) * std * scale

    p: dict[str, np.ndarray] = {
        "in.W": normal(D, L, std=1 / math.sqrt(D)),
        "in.b": np.zeros(L),
        "time.W": normal(L, L, std=1 / math.sqrt(L)),
        "time.b": np.zeros(L),
        "cond.E": normal(config.n_labels, L, std=1.0),
        "out.mod.W": normal(L, 2 * L, std=0.1 / math.sqrt(L)),
        "out.mod.b": np.zeros(2 * L),
        "out.W": normal(L, D, std=1 / math.sqrt(L)),
        "out.b": np.zeros(D),
    }
    p["cond.E"][0] = 0.0
    attn = ["self"] + (["cross"] if config.has_cross else [])
    for i in range(config.layers):
        pre = f"l{i}."
        p[pre + "mod_self.W"] = normal(L, 4 * L, std=0.1 / math.sqrt(L))
        p[pre + "mod_self.b"] = np.zeros(4 * L)
        if config.has_cross:
            p[pre + "mod_cross.W"] = normal(L, 2 * L, std=0.1 / math.sqrt(L))
            p[pre + "mod_cross.b"] = np.zeros(2 * L)
        for a in attn:
            for m in ("Wq", "Wk", "Wv", "Wo"):
                p[f"{pre}{a}.{m}"] = normal(L, L, std=1 / math.sqrt(L))
            p[f"{pre}{a}.bo"] = np.zeros(L)
        p[pre + "ff.W1"] = normal(L, F, std=1 / math.sqrt(L))
        p[pre + "ff.b1"] = np.zeros(F)
        p[pre + "ff.W2"] = normal(F, L, std=1 / math.sqrt(F))
        p[pre + "ff.b2"] = np.zeros(L)
    return DenoiserParams(config, p)


# --------------------------------------------------------------------------
# forward pass
# --------------------------------------------------------------------------

def sinusoidal(positions, dim: int) -> np.ndarray:
    """``[sin(p w_k), cos(p w_k)]`` with geometric frequencies, shape ``(..., dim)``."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(positions, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def _modulate(h, scale, shift):
    return ag.layer_norm(h) * (1.0 + scale) + shift


def _attention(q_in, kv_in, P, pre, heads):
    n, f, L = q_in.shape
    fk = kv_in.shape[1]
    dh = L // heads

    def split(x, frames):
        return x.reshape(n, frames, heads, dh).swapaxes(1, 2)

    q = split(q_in @ P[pre + ".Wq"], f)
    k = split(kv_in @ P[pre + ".Wk"], fk)
    v = split(kv_in @ P[pre + ".Wv"], fk)
    att = ag.softmax((q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh)), axis=-1)
    o = (att @ v).swapaxes(1, 2).reshape(n, f, L)
    return o @ P[pre + ".Wo"] + P[pre + ".bo"]


def _chunks(x, k, L):
    """Split ``(N, k*L)`` modulation output into ``k`` tensors of shape ``(N, 1, L)``."""
    return [x[:, None, i * L:(i + 1) * L] for i in range(k)]


def _forward(P, config: DenoiserConfig, x, other, t, ind_ids, int_ids):
    """Core network on a stacked batch. ``other`` is None for the prior."""
    L = config.latent_dim
    n, f, _ = x.shape
    pos = sinusoidal(np.arange(f), L)
    temb = Tensor(sinusoidal(t, L)) @ P["time.W"] + P["time.b"]
    c_self = temb + P["cond.E"][ind_ids]
    h = x @ P["in.W"] + P["in.b"] + pos
    if other is not None:
        mem = ag.layer_norm(other @ P["in.W"] + P["in.b"] + pos)
        c_cross = temb + P["cond.E"][int_ids]
    for i in range(config.layers):
        pre = f"l{i}."
        s1, b1, s3, b3 = _chunks(c_self @ P[pre + "mod_self.W"] + P[pre + "mod_self.b"], 4, L)
        a = _modulate(h, s1, b1)
        h = h + _attention(a, a, P, pre + "self", config.heads)
        if other is not None:
            s2, b2 = _chunks(c_cross @ P[pre + "mod_cross.W"] + P[pre + "mod_cross.b"], 2, L)
            h = h + _attention(_modulate(h, s2, b2), mem, P, pre + "cross", config.heads)
        a = _modulate(h, s3, b3)
        h = h + ag.silu(a @ P[pre + "ff.W1"] + P[pre + "ff.b1"]) @ P[pre + "ff.W2"] + P[pre + "ff.b2"]
    so, bo = _chunks(c_self @ P["out.mod.W"] + P["out.mod.b"], 2, L)
    return _modulate(h, so, bo) @ P["out.W"] + P["out.b"]


def _prep(x, width):
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != width:
        raise ShapeMismatch(f"expected (B, F, {width}) motion, got {x.shape}")
    return x, squeeze


def _timesteps(t, n):
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    if np.any(t < 0):
        raise InvalidParams("timesteps must be non-negative")
    return t


def _check(y):
    if not np.all(np.isfinite(y.data)):
        raise NonFiniteActivation("denoiser produced non-finite values")
    return y


def pair_forward(P, config: DenoiserConfig, x_a, x_b, t, cond: ConditionTriple) -> Tensor:
    """Differentiable forward; returns the stacked ``(2B, F, D)`` output [a; b].

    ``P`` maps parameter names to tensors (or arrays); ``x_a``/``x_b`` are
    ``(B, F, D)`` arrays.
    """
    n = x_a.shape[0]
    ci, ca, cb = cond.batched(n)
    x = np.concatenate([x_a, x_b])
    other = np.concatenate([x_b, x_a])
    tt = _timesteps(t, n)
    return _check(_forward(P, config, Tensor(x), Tensor(other), np.concatenate([tt, tt]),
                           np.concatenate([ca, cb]), np.concatenate([ci, ci])))


def single_forward(P, config: DenoiserConfig, x, t, cond) -> Tensor:
    n = x.shape[0]
    ids = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
    return _check(_forward(P, config, Tensor(x), None, _timesteps(t, n), ids, None))


def denoise_pair(params: DenoiserParams, x_a, x_b, t, cond: ConditionTriple):
    """Predicted clean motions ``(x0_a, x0_b)`` for a noisy pair."""
    cfg = params.config
    if not cfg.has_cross:
        raise InvalidParams("denoise_pair needs an interaction-variant model")
    xa, squeeze = _prep(x_a, cfg.width)
    xb, _ = _prep(x_b, cfg.width)
    if xa.shape != xb.shape:
        raise ShapeMismatch(f"{xa.shape} vs {xb.shape}")
    with ag.no_grad():
        y = pair_forward(params.tensors, cfg, xa, xb, t, cond).data
    n = xa.shape[0]
    ya, yb = y[:n], y[n:]
    return (ya[0], yb[0]) if squeeze else (ya, yb)


def denoise_single(params: DenoiserParams, x_t, t, cond=0):
    """Prior forward pass; ``cond`` is an individual label id (0 for ∅)."""
    cfg = params.config
    x, squeeze = _prep(x_t, cfg.width)
    with ag.no_grad():
        y = single_forward(params.tensors, cfg, x, t, cond).data
    return y[0] if squeeze else y


def apply_condition_dropout(cond: ConditionTriple, rng: np.random.Generator, p: float, n: int | None = None) -> ConditionTriple:
    """Independently replace each slot with ∅ with probability ``p``."""
    if p <= 0:
        return cond
    if n is None:
        n = max(np.size(cond.interaction), np.size(cond.individual_a), np.size(cond.individual_b))
    ci, ca, cb = cond.batched(n)
    drop = rng.random((3, n)) < p
    out = [np.where(d, 0, c) for d, c in zip(drop, (ci, ca, cb))]
    if all(np.ndim(v) == 0 for v in (cond.interaction, cond.individual_a, cond.individual_b)) and n == 1:
        return ConditionTriple(*(int(v[0]) for v in out))
    return ConditionTriple(*out)


# --------------------------------------------------------------------------
# checkpoints: a versioned .npz with a JSON metadata entry
# --------------------------------------------------------------------------

def save_checkpoint(path, params: DenoiserParams, optimizer_state: dict | None = None, epoch: int = 0, extra: dict | None = None) -> Path:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "epoch": int(epoch),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in params.tensors.items()}
    if params.stats is not None:
        meta["stats_scale"] = params.stats.scale
        arrays["stats/mean"] = params.stats.mean
    if optimizer_state:
        meta["optimizer"] = {k: v for k, v in optimizer_state.items() if not isinstance(v, dict)}
        for slot in ("m", "v"):
            for k, arr in optimizer_state.get(slot, {}).items():
                arrays[f"adam_{slot}/{k}"] = arr
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays}
    path = Path(path)
    # written entry by entry with a fixed timestamp so reruns are byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    return path


def load_checkpoint(path):
    """Returns ``(params, optimizer_state, meta)``."""
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            files = {k: z[k] for k in z.files if k != "__meta__"}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise IncompatibleCheckpoint(f"{path}: not a readable checkpoint ({exc})") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(f"{path}: checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
    config = DenoiserConfig(**meta["config"])
    tensors = {k.split("/", 1)[1]: v for k, v in files.items() if k.startswith("param/")}
    expected = set(init_params(replace(config), 0).tensors)
    if set(tensors) != expected:
        raise IncompatibleCheckpoint(f"{path}: parameter names do not match the stored config")
    opt = dict(meta.get("optimizer", {}))
    for slot in ("m", "v"):
        part = {k.split("/", 1)[1]: v for k, v in files.items() if k.startswith(f"adam_{slot}/")}
        if part:
            opt[slot] = part
    stats = None
    if "stats_scale" in meta:
        if "stats/mean" not in files or files["stats/mean"].shape != (config.width,):
            raise IncompatibleCheckpoint(f"{path}: feature statistics are missing or mis-shaped")
        stats = FeatureStats(files["stats/mean"], float(meta["stats_scale"]))
    return DenoiserParams(config, tensors, stats), opt, meta
