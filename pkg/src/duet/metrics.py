"""Evaluation metrics on motion embeddings.

Embeddings come from a fixed, training-free feature extractor
(:class:`DeskEmbedder`). EID is the 2-Wasserstein distance between the
embeddings of motions generated with the true individual labels and with
replaced ones, solved exactly as an assignment problem.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .denoiser import ConditionTriple
from .errors import SizeMismatch
from .motion import Skeleton, default_skeleton, yaw_matrix


# --------------------------------------------------------------------------
# embedder
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DeskEmbedder:
    """Hand-crafted pair statistics followed by a seeded orthogonal projection.

    ``recipe="root_relative"`` describes each person in their own heading frame
    and keeps only relative cross-person quantities, so it is invariant to
    moving or turning the pair as a whole. ``recipe="world"`` uses raw world
    coordinates. Person features are pooled as ``(f_a + f_b, |f_a - f_b|)``,
    which makes the embedding independent of person order.
    """

    output_dim: int = 64
    seed: int = 0
    recipe: str = "root_relative"
    skeleton: Skeleton = field(default_factory=default_skeleton)
    frame_rate: float = 10.0

    def __post_init__(self):
        if self.recipe not in ("root_relative", "world"):
            raise ValueError(f"unknown recipe {self.recipe!r}")

    @property
    def feature_dim(self) -> int:
        j = self.skeleton.joint_count
        return 2 * (4 * 3 * j + 3) + 5

    def projection(self) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed) & (2**64 - 1), 0xE3B]))
        q, r = np.linalg.qr(rng.standard_normal((self.feature_dim, self.output_dim)))
        q = q * np.sign(np.diag(r))
        return q * math.sqrt(self.feature_dim / self.output_dim)

    def _positions(self, x):
        lay = self.skeleton.layout
        return x[..., lay.pos].reshape(x.shape[:-1] + (self.skeleton.joint_count, 3))

    def _heading(self, pos):
        names = self.skeleton.joint_names
        try:
            lh, rh, ls, rs = (names.index(n) for n in ("left_hip", "right_hip", "left_shoulder", "right_shoulder"))
        except ValueError:
            lh, rh, ls, rs = 1, 2, 16, 17
        across = pos[..., lh, :] - pos[..., rh, :] + pos[..., ls, :] - pos[..., rs, :]
        return np.arctan2(-across[..., 2], across[..., 0])

    def _person(self, pos):
        fr = self.frame_rate
        if self.recipe == "root_relative":
            yaw = self._heading(pos)
            centred = pos.copy()
            centred[..., [0, 2]] -= pos[..., :1, [0, 2]]
            local = np.einsum("...ji,...kj->...ki", yaw_matrix(yaw), centred)
        else:
            local = pos
        vel = np.diff(local, axis=-3) * fr
        root = pos[..., 0, [0, 2]]
        path = np.linalg.norm(np.diff(root, axis=-2), axis=-1).sum(axis=-1)
        root_speed = np.linalg.norm(np.diff(root, axis=-2), axis=-1) * fr
        n = pos.shape[0]
        return np.concatenate([
            local.mean(axis=-3).reshape(n, -1),
            local.var(axis=-3).reshape(n, -1),
            vel.mean(axis=-3).reshape(n, -1),
            vel.var(axis=-3).reshape(n, -1),
            path[:, None],
            root_speed.mean(axis=-1)[:, None],
            root_speed.std(axis=-1)[:, None],
        ], axis=1)

    def features(self, x_a, x_b) -> np.ndarray:
        xa = np.asarray(x_a, dtype=np.float64)
        xb = np.asarray(x_b, dtype=np.float64)
        if xa.ndim == 2:
            xa, xb = xa[None], xb[None]
        pa, pb = self._positions(xa), self._positions(xb)
        fa, fb = self._person(pa), self._person(pb)
        ra, rb = pa[..., 0, [0, 2]], pb[..., 0, [0, 2]]
        root_d = np.linalg.norm(ra - rb, axis=-1)
        joint_d = kernels.cross_distances(pa, pb, 0.0)
        ha, hb = self._heading(pa), self._heading(pb)
        cross = np.stack([
            root_d.mean(axis=-1),
            root_d.std(axis=-1),
            root_d.min(axis=-1),
            joint_d.min(axis=(-1, -2)).mean(axis=-1),
            np.cos(ha - hb).mean(axis=-1),
        ], axis=1)
        return np.concatenate([fa + fb, np.abs(fa - fb), cross], axis=1)

    def embed(self, x_a, x_b) -> np.ndarray:
        """``(N, output_dim)`` embeddings for batched pairs ``(N, F, D)``."""
        return self.features(x_a, x_b) @ self.projection()

    __call__ = embed


def embed_motion(pair, embedder: DeskEmbedder) -> np.ndarray:
    """Embedding of a single ``(x_a, x_b)`` pair of ``(F, D)`` tensors."""
    return embedder.embed(pair[0], pair[1])[0]


# --------------------------------------------------------------------------
# distribution metrics
# --------------------------------------------------------------------------

def wasserstein2(set_a, set_b) -> tuple[float, np.ndarray]:
    """Exact W2 between two equal-size uniform point clouds and its optimal matching."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.shape != b.shape:
        raise SizeMismatch(f"point sets differ in shape: {a.shape} vs {b.shape}")
    cost = kernels.sq_dist_matrix(a, b)
    match = kernels.linear_assignment(cost)
    total = cost[np.arange(len(a)), match].mean()
    return math.sqrt(max(total, 0.0)), match


def eid(set_gt, set_rand) -> float:
    return wasserstein2(set_gt, set_rand)[0]


def _moments(x):
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def _psd_sqrt(m):
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def fid(set_a, set_b) -> float:
    """Fréchet distance between Gaussian fits of two embedding sets."""
    mu_a, cov_a = _moments(set_a)
    mu_b, cov_b = _moments(set_b)
    # tr (ra Σb ra)^{1/2} equals the nuclear norm of ra rb; singular values
    # avoid square-rooting tiny, noisy eigenvalues
    tr_sqrt = np.linalg.svd(_psd_sqrt(cov_a) @ _psd_sqrt(cov_b), compute_uv=False).sum()
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * tr_sqrt
    return float(max(value, 0.0))


def _random_pairs(n: int, count: int, rng):
    i = rng.integers(n, size=count)
    j = (i + rng.integers(1, n, size=count)) % n
    return i, j


def diversity(emb, d_pairs: int = 300, seed: int = 0, pairs=None) -> float:
    """Mean distance over ``d_pairs`` random pairs of distinct samples."""
    emb = np.asarray(emb, dtype=np.float64)
    if pairs is None:
        if len(emb) < 2:
            return 0.0
        i, j = _random_pairs(len(emb), d_pairs, np.random.default_rng(seed))
    else:
        i, j = (np.asarray(p) for p in zip(*pairs))
    return float(np.linalg.norm(emb[i] - emb[j], axis=1).mean())


def multimodality(per_condition_sets: Sequence, m: int = 10, seed: int = 0) -> float:
    """Per condition, mean distance over ``m`` random pairs of its samples; averaged over conditions."""
    rng = np.random.default_rng(seed)
    vals = []
    for s in per_condition_sets:
        s = np.asarray(s, dtype=np.float64)
        if len(s) < 2:
            continue
        i, j = _random_pairs(len(s), m, rng)
        vals.append(np.linalg.norm(s[i] - s[j], axis=1).mean())
    return float(np.mean(vals)) if vals else 0.0


def seeded_alignment(dim: int, seed: int = 0) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def r_precision_mm_dist(motion_emb, true_ids, condition_table, alignment=None, batch_size: int = 32):
    """Retrieval accuracy of conditions from motions, in batches of ``batch_size``.

    Within a batch each motion ranks the batch's conditions by distance;
    ties with the true condition do not count against it. Returns
    ``(top1, top2, top3, mm_dist)``.
    """
    emb = np.asarray(motion_emb, dtype=np.float64)
    ids = np.asarray(true_ids)
    table = np.asarray(condition_table, dtype=np.float64)
    if alignment is not None:
        emb = emb @ np.asarray(alignment)
    n_batches = max(1, len(emb) // batch_size)
    hits = np.zeros(3)
    count = 0
    dists = []
    for b in range(n_batches):
        sl = slice(b * batch_size, (b + 1) * batch_size)
        e, cands = emb[sl], table[ids[sl]]
        d = np.sqrt(kernels.sq_dist_matrix(e, cands))
        own = np.diag(d)
        rank = (d < own[:, None]).sum(axis=1)
        for k in range(3):
            hits[k] += np.sum(rank <= k)
        count += len(e)
        dists.append(own)
    top = hits / count
    return float(top[0]), float(top[1]), float(top[2]), float(np.concatenate(dists).mean())


# --------------------------------------------------------------------------
# EID protocol
# --------------------------------------------------------------------------

Generator = Callable[[ConditionTriple, int], tuple]


def _replace_individuals(triple, pool, rng):
    out = []
    for current in triple[1:]:
        options = [p for p in pool if p != current] or list(pool)
        out.append(int(rng.choice(options)))
    return (int(triple[0]), out[0], out[1])


def eid_protocol(
    generate: Generator,
    triples: Sequence[tuple[int, int, int]],
    individual_pool: Sequence[int],
    n: int = 32,
    seed: int = 0,
    compose_generate: Generator | None = None,
    replace_labels: bool | None = None,
    embed: Callable | None = None,
    gt_sets: Sequence[np.ndarray] | None = None,
):
    """EID averaged over condition triples.

    For each triple, ``n`` motions are generated with the true labels
    (``D_GT``) and ``n`` more form ``D_rand``:

    * without ``compose_generate``: the same generator with both individual
      labels replaced by other labels from ``individual_pool``;
    * with ``compose_generate``: the composed generator, with labels kept
      unless ``replace_labels`` is set.

    Both sets share the per-triple seed. ``generate(cond, seed)`` returns an
    ``(x_a, x_b)`` batch. Precomputed ``D_GT`` embeddings may be passed as
    ``gt_sets``. Returns ``(mean_eid, per_triple)``.
    """
    embed = embed or DeskEmbedder().embed
    if replace_labels is None:
        replace_labels = compose_generate is None
    rand_gen = compose_generate or generate
    values = []
    for k, triple in enumerate(triples):
        s = triple_seed(seed, k)
        rng = np.random.default_rng(s)
        swapped = _replace_individuals(triple, individual_pool, rng) if replace_labels else tuple(triple)
        gt = gt_sets[k] if gt_sets is not None else embed(*generate(batch_condition(triple, n), s))
        rand = embed(*rand_gen(batch_condition(swapped, n), s))
        values.append(eid(gt, rand))
    return float(np.mean(values)), values


def triple_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), k]).generate_state(1, np.uint64)[0])


def batch_condition(triple, n: int) -> ConditionTriple:
    return ConditionTriple(*(np.full(n, int(v)) for v in triple))


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

METRIC_NAMES = ("eid", "fid", "diversity", "multimodality", "r_precision_top1", "r_precision_top2", "r_precision_top3", "mm_dist")


@dataclass
class MetricReport:
    eid: float
    fid: float
    diversity: float
    multimodality: float
    r_precision_top1: float
    r_precision_top2: float
    r_precision_top3: float
    mm_dist: float
    counts: dict = field(default_factory=dict)
    half_widths: dict = field(default_factory=dict)

    @classmethod
    def from_runs(cls, runs: Sequence[dict], counts: dict) -> "MetricReport":
        """Mean over repeated runs with 95% normal-interval half-widths."""
        values, widths = {}, {}
        for name in METRIC_NAMES:
            xs = np.array([r[name] for r in runs], dtype=np.float64)
            values[name] = float(xs.mean())
            widths[name] = float(1.96 * xs.std(ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0
        return cls(**values, counts=dict(counts), half_widths=widths)

    def to_dict(self) -> dict:
        return asdict(self)
