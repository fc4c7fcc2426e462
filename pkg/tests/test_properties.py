"""Randomized invariants over generated inputs."""

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from duet import config as C
from duet.composition import BlendSchedule, blend_weight, composed_x0
from duet.denoiser import ConditionTriple, denoise_pair, init_params
from duet.diffusion import build_cosine_schedule, ddim_step, ddim_timesteps
from duet.errors import ConfigError
from duet.guidance import GuidanceWeights, guided_x0
from duet.metrics import eid, fid
from duet.motion import matrix_to_rot6d, relative_to_world, rot6d_to_matrix, root_trajectory, world_to_relative

from conftest import tiny_config

SETTINGS = settings(max_examples=40, deadline=None)
seeds = st.integers(0, 2**32 - 1)
SCHED = build_cosine_schedule(1000)
MODEL = init_params(tiny_config(width=28, n_labels=6), 3, scale=1.3)


@SETTINGS
@given(st.sampled_from(["constant", "linear", "exponential", "inverse_exponential"]), st.floats(0, 1), st.integers(0, 1000))
def test_blend_weight_in_unit_interval(kind, lam, t):
    w = blend_weight(BlendSchedule(kind, lam), t, 1000)
    assert 0.0 <= w <= 1.0


@SETTINGS
@given(st.floats(0, 0.05), st.integers(0, 1000))
def test_exponential_pair_complementary(lam, t):
    a = blend_weight(BlendSchedule("exponential", lam), t, 1000)
    b = blend_weight(BlendSchedule("inverse_exponential", lam), t, 1000)
    assert a + b == 1.0


@SETTINGS
@given(seeds, st.floats(0, 1))
def test_composition_stays_between_inputs(seed, w):
    rng = np.random.default_rng(seed)
    g = tuple(rng.standard_normal((2, 5)))
    pa, pb = rng.standard_normal((2, 5))
    out = composed_x0(g, pa, pb, w)
    lo, hi = np.minimum(g[0], pa), np.maximum(g[0], pa)
    assert np.all(out[0] >= lo - 1e-12) and np.all(out[0] <= hi + 1e-12)


@SETTINGS
@given(seeds, st.integers(1, 999))
def test_commutativity(seed, t):
    rng = np.random.default_rng(seed)
    xa, xb = rng.standard_normal((2, 2, 3, 28))
    ids = rng.integers(0, 6, size=(2, 3))
    cond = ConditionTriple(ids[:, 0], ids[:, 1], ids[:, 2])
    ya, yb = denoise_pair(MODEL, xa, xb, t, cond)
    sb, sa = denoise_pair(MODEL, xb, xa, t, cond.swapped())
    assert np.abs(ya - sa).max() <= 1e-12 and np.abs(yb - sb).max() <= 1e-12


@SETTINGS
@given(seeds, st.floats(-2, 5), st.floats(-2, 5), st.floats(-2, 5))
def test_guidance_is_commutative_too(seed, wc, wI, wi):
    rng = np.random.default_rng(seed)
    xa, xb = rng.standard_normal((2, 3, 28))
    cond = ConditionTriple(1, 3, 4)
    w = GuidanceWeights(wc, wI, wi)
    ya, yb = guided_x0(MODEL, xa, xb, 500, cond, w)
    sb, sa = guided_x0(MODEL, xb, xa, 500, cond.swapped(), w)
    scale = 1 + abs(wc) + abs(wI) + abs(wi)
    assert np.abs(ya - sa).max() <= 1e-12 * scale and np.abs(yb - sb).max() <= 1e-12 * scale


@SETTINGS
@given(seeds, st.integers(1, 1000))
def test_ddim_step_fixed_point(seed, steps):
    """A step whose x0 prediction is exact keeps the chain on the q(x_t | x0) ray."""
    rng = np.random.default_rng(seed)
    x0, eps = rng.standard_normal((2, 6))
    ts = ddim_timesteps(1000, steps)
    assert ts[0] == 1000 and ts[-1] >= 1 and all(a > b for a, b in zip(ts, ts[1:]))
    t, tp = ts[0], (ts[1] if len(ts) > 1 else 0)
    ab, abp = SCHED.alpha_bar[t], SCHED.alpha_bar[tp]
    xt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    out = ddim_step(xt, x0, t, tp, SCHED)
    assert np.allclose(out, np.sqrt(abp) * x0 + np.sqrt(1 - abp) * eps, atol=1e-9)


@SETTINGS
@given(seeds)
def test_rot6d_roundtrip(seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.linalg.det(q))
    r6 = matrix_to_rot6d(q)
    m = rot6d_to_matrix(r6)
    assert np.allclose(m, q, atol=1e-12)
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)


@SETTINGS
@given(seeds, st.integers(2, 12))
def test_world_relative_roundtrip(seed, frames):
    rng = np.random.default_rng(seed)
    local = rng.standard_normal((frames, 4, 3))
    lin = rng.standard_normal((frames, 2)) * 0.1
    yv = rng.standard_normal(frames) * 0.3
    world = relative_to_world(local, lin, yv)
    yaw, trans = root_trajectory(lin, yv)
    back, lin2, yv2 = world_to_relative(world, yaw, trans)
    assert np.allclose(back, local, atol=1e-12)
    assert np.allclose(lin2[:-1], lin[:-1], atol=1e-12) and np.allclose(yv2[:-1], yv[:-1], atol=1e-12)


@SETTINGS
@given(seeds, st.integers(2, 7))
def test_w2_symmetric_and_bounded_by_identity_matching(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, n, 3))
    d = eid(a, b)
    assert d == pytest.approx(eid(b, a), abs=1e-12)
    assert d <= np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))) + 1e-12


@SETTINGS
@given(seeds)
def test_fid_translation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 40, 3))
    v = rng.standard_normal(3)
    assert fid(a + v, b + v) == pytest.approx(fid(a, b), rel=1e-7, abs=1e-9)


@SETTINGS
@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12))
def test_config_rejects_unknown_keys(key):
    assume(key not in C.defaults()["sampler"])
    with pytest.raises(ConfigError):
        C.merge(C.defaults(), {"sampler": {key: 1}})
