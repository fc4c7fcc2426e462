import math

import numpy as np
import pytest

from duet.denoiser import (
    ConditionTriple,
    DenoiserConfig,
    DenoiserParams,
    FeatureStats,
    apply_condition_dropout,
    denoise_pair,
    denoise_single,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from duet.errors import IncompatibleCheckpoint, InvalidParams, ShapeMismatch

from conftest import tiny_config

# ---------------------------------------------------------------------------
# scalar reference implementation of the layer equations, written with plain
# Python floats and loops so it shares no code with the vectorized forward
# ---------------------------------------------------------------------------


def _vecmat(v, W):
    return [sum(v[i] * W[i][j] for i in range(len(v))) for j in range(len(W[0]))]


def _add(*vs):
    return [sum(x) for x in zip(*vs)]


def _ln(v, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) for x in v]


def _mod(v, scale, shift):
    return [n * (1 + s) + b for n, s, b in zip(_ln(v), scale, shift)]


def _sin_embed(p, dim):
    half = dim // 2
    w = [math.exp(-math.log(10000.0) * k / half) for k in range(half)]
    return [math.sin(p * wk) for wk in w] + [math.cos(p * wk) for wk in w]


def _attend(qs, kvs, P, pre, heads):
    L = len(qs[0])
    dh = L // heads
    Q = [_vecmat(q, P[pre + ".Wq"]) for q in qs]
    K = [_vecmat(k, P[pre + ".Wk"]) for k in kvs]
    V = [_vecmat(v, P[pre + ".Wv"]) for v in kvs]
    out = []
    for q in Q:
        o = [0.0] * L
        for h in range(heads):
            sl = range(h * dh, (h + 1) * dh)
            scores = [sum(q[i] * k[i] for i in sl) / math.sqrt(dh) for k in K]
            m = max(scores)
            e = [math.exp(s - m) for s in scores]
            z = sum(e)
            for i in sl:
                o[i] = sum(e[j] / z * V[j][i] for j in range(len(K)))
        out.append(_add(_vecmat(o, P[pre + ".Wo"]), P[pre + ".bo"]))
    return out


def scalar_forward(params, x, other, t, ind, inter):
    cfg = params.config
    P = {k: v.tolist() for k, v in params.tensors.items()}
    L = cfg.latent_dim
    F = len(x)
    temb = _add(_vecmat(_sin_embed(t, L), P["time.W"]), P["time.b"])
    c_self = _add(temb, P["cond.E"][ind])
    pos = [_sin_embed(f, L) for f in range(F)]
    h = [_add(_vecmat(x[f], P["in.W"]), P["in.b"], pos[f]) for f in range(F)]
    if other is not None:
        mem = [_ln(_add(_vecmat(other[f], P["in.W"]), P["in.b"], pos[f])) for f in range(F)]
        c_cross = _add(temb, P["cond.E"][inter])
    for i in range(cfg.layers):
        pre = f"l{i}."
        m = _add(_vecmat(c_self, P[pre + "mod_self.W"]), P[pre + "mod_self.b"])
        s1, b1, s3, b3 = (m[k * L:(k + 1) * L] for k in range(4))
        a = [_mod(v, s1, b1) for v in h]
        h = [_add(u, w) for u, w in zip(h, _attend(a, a, P, pre + "self", cfg.heads))]
        if other is not None:
            m2 = _add(_vecmat(c_cross, P[pre + "mod_cross.W"]), P[pre + "mod_cross.b"])
            s2, b2 = m2[:L], m2[L:]
            q = [_mod(v, s2, b2) for v in h]
            h = [_add(u, w) for u, w in zip(h, _attend(q, mem, P, pre + "cross", cfg.heads))]
        new = []
        for v in h:
            a = _mod(v, s3, b3)
            z = _add(_vecmat(a, P[pre + "ff.W1"]), P[pre + "ff.b1"])
            z = [u / (1 + math.exp(-u)) for u in z]
            new.append(_add(v, _vecmat(z, P[pre + "ff.W2"]), P[pre + "ff.b2"]))
        h = new
    mo = _add(_vecmat(c_self, P["out.mod.W"]), P["out.mod.b"])
    return [_add(_vecmat(_mod(v, mo[:L], mo[L:]), P["out.W"]), P["out.b"]) for v in h]


TOY = dict(layers=1, latent_dim=4, heads=2, width=28, n_labels=6)  # 2 joints: 3*2 + 3*2 + 6*2 + 4


class TestScalarOracle:
    def test_pair(self, rng):
        params = init_params(DenoiserConfig(**TOY), seed=2, scale=3.0)
        xa, xb = rng.standard_normal((2, 2, 28))
        ya, yb = denoise_pair(params, xa, xb, 417, ConditionTriple(1, 3, 5))
        ra = scalar_forward(params, xa.tolist(), xb.tolist(), 417, 3, 1)
        rb = scalar_forward(params, xb.tolist(), xa.tolist(), 417, 5, 1)
        assert np.abs(ya - np.array(ra)).max() < 1e-12
        assert np.abs(yb - np.array(rb)).max() < 1e-12

    def test_single(self, rng):
        params = init_params(DenoiserConfig(**TOY, variant="individual"), seed=3, scale=3.0)
        x = rng.standard_normal((2, 28))
        y = denoise_single(params, x, 88, 4)
        assert np.abs(y - np.array(scalar_forward(params, x.tolist(), None, 88, 4, 0))).max() < 1e-12


class TestStructure:
    def test_commutative(self, tiny_pair_model, rng):
        xa, xb = rng.standard_normal((2, 3, 5, 268))
        c = ConditionTriple(np.array([1, 2, 0]), np.array([5, 0, 9]), np.array([7, 6, 8]))
        ya, yb = denoise_pair(tiny_pair_model, xa, xb, 250, c)
        zb, za = denoise_pair(tiny_pair_model, xb, xa, 250, c.swapped())
        assert np.array_equal(ya, za) and np.array_equal(yb, zb)

    def test_zero_params_return_bias(self, rng):
        p = init_params(tiny_config(), seed=0)
        zero = {k: np.zeros_like(v) for k, v in p.tensors.items()}
        zero["out.b"] = rng.standard_normal(268)
        params = DenoiserParams(p.config, zero)
        ya, yb = denoise_pair(params, rng.standard_normal((4, 268)), rng.standard_normal((4, 268)), 10, ConditionTriple(1, 5, 6))
        assert np.array_equal(ya, np.broadcast_to(zero["out.b"], ya.shape))
        assert np.array_equal(yb, ya)

    def test_null_is_zero_row(self, tiny_prior, rng):
        tensors = {k: v.copy() for k, v in tiny_prior.tensors.items()}
        tensors["cond.E"][5] = 0.0
        params = DenoiserParams(tiny_prior.config, tensors)
        x = rng.standard_normal((4, 268))
        assert np.array_equal(denoise_single(params, x, 300, 5), denoise_single(params, x, 300, 0))

    def test_pure(self, tiny_prior, rng):
        x = rng.standard_normal((2, 4, 268))
        assert np.array_equal(denoise_single(tiny_prior, x, 9, 6), denoise_single(tiny_prior, x, 9, 6))

    def test_prior_has_no_cross_weights(self, tiny_prior, tiny_pair_model):
        assert not any("cross" in k for k in tiny_prior.tensors)
        assert any("cross" in k for k in tiny_pair_model.tensors)
        assert np.all(tiny_pair_model.tensors["cond.E"][0] == 0)

    def test_shape_mismatch(self, tiny_pair_model):
        with pytest.raises(ShapeMismatch):
            denoise_pair(tiny_pair_model, np.zeros((3, 268)), np.zeros((4, 268)), 5, ConditionTriple(1, 5, 5))
        with pytest.raises(ShapeMismatch):
            denoise_pair(tiny_pair_model, np.zeros((3, 10)), np.zeros((3, 10)), 5, ConditionTriple(1, 5, 5))

    def test_config_invariants(self):
        with pytest.raises(InvalidParams):
            DenoiserConfig(latent_dim=10, heads=3)
        with pytest.raises(InvalidParams):
            DenoiserConfig(condition_dropout_prob=1.0)

    def test_paper_scale_constructible(self):
        cfg = DenoiserConfig(layers=8, latent_dim=1024, heads=8)
        assert cfg.latent_dim // cfg.heads == 128


class TestDropout:
    def test_zero_probability(self, rng):
        c = ConditionTriple(np.array([1, 2]), np.array([5, 6]), np.array([7, 8]))
        out = apply_condition_dropout(c, rng, 0.0)
        assert out is c

    def test_probability_one(self, rng):
        out = apply_condition_dropout(ConditionTriple(np.array([1, 2]), np.array([5, 6]), np.array([7, 8])), rng, 1.0)
        for v in (out.interaction, out.individual_a, out.individual_b):
            assert np.all(v == 0)

    def test_frequencies(self):
        n = 100_000
        c = ConditionTriple(np.ones(n, int), np.full(n, 5), np.full(n, 6))
        out = apply_condition_dropout(c, np.random.default_rng(0), 0.1)
        slots = [out.interaction == 0, out.individual_a == 0, out.individual_b == 0]
        for s in slots:
            assert 0.094 <= s.mean() <= 0.106
        # independence: all four guidance patterns appear
        full = ~slots[0] & ~slots[1] & ~slots[2]
        inter_only = ~slots[0] & slots[1] & slots[2]
        indiv_only = slots[0] & ~slots[1] & ~slots[2]
        none = slots[0] & slots[1] & slots[2]
        assert all(m.any() for m in (full, inter_only, indiv_only, none))


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tiny_pair_model, tmp_path, rng):
        path = save_checkpoint(tmp_path / "m.npz", tiny_pair_model, {"step": 3, "m": tiny_pair_model.tensors, "v": tiny_pair_model.tensors}, 7)
        params, opt, meta = load_checkpoint(path)
        assert meta["epoch"] == 7 and opt["step"] == 3
        xa, xb = rng.standard_normal((2, 4, 268))
        c = ConditionTriple(2, 6, 9)
        a = denoise_pair(tiny_pair_model, xa, xb, 500, c)
        b = denoise_pair(params, xa, xb, 500, c)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()

    def test_bytes_stable(self, tiny_prior, tmp_path):
        a = save_checkpoint(tmp_path / "a.npz", tiny_prior, epoch=1).read_bytes()
        b = save_checkpoint(tmp_path / "b.npz", tiny_prior, epoch=1).read_bytes()
        assert a == b

    def test_garbage_rejected(self, tmp_path):
        (tmp_path / "x.npz").write_bytes(b"not a checkpoint")
        with pytest.raises(IncompatibleCheckpoint):
            load_checkpoint(tmp_path / "x.npz")

    def test_feature_stats_roundtrip(self, tiny_prior, tmp_path, rng):
        model = tiny_prior.copy()
        model.stats = FeatureStats(rng.standard_normal(model.config.width), 0.37)
        params, _, _ = load_checkpoint(save_checkpoint(tmp_path / "s.npz", model))
        assert params.stats.same_as(model.stats)
        assert load_checkpoint(save_checkpoint(tmp_path / "n.npz", tiny_prior))[0].stats is None


class TestFeatureStats:
    def test_fit_matches_direct_moments(self, rng):
        a = rng.standard_normal((3, 5, 4)) * [1, 2, 3, 4] + [5, 0, -1, 2]
        b = rng.standard_normal((2, 5, 4))
        st = FeatureStats.fit(a, b)
        flat = np.concatenate([a.reshape(-1, 4), b.reshape(-1, 4)])
        assert np.allclose(st.mean, flat.mean(0), atol=1e-12)
        assert st.scale == pytest.approx(math.sqrt(((flat - flat.mean(0)) ** 2).mean()), rel=1e-12)
        z = st.normalize(flat)
        assert np.allclose(z.mean(0), 0, atol=1e-12) and np.mean(z**2) == pytest.approx(1.0)
        assert np.allclose(st.denormalize(z), flat, atol=1e-12)

    def test_constant_data_rejected(self):
        with pytest.raises(InvalidParams):
            FeatureStats.fit(np.ones((4, 3)))
