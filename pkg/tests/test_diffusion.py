import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t1diff import numerics as nx
from t1diff.codec import PatchCodec, PatchCodecConfig
from t1diff.diffusion import (cfg_combine, ddpm_step, diffuse, diffuse_exact, first_channels_mask,
                              forward_diffuse_views, guidance_mask, make_schedule, sample_field,
                              training_loss)
from t1diff.field import FieldSpec


class ZeroNet:
    """Stand-in score net that always predicts eps = 0."""

    def __init__(self):
        self.params = {"in.w": nx.Tensor(np.zeros((1, 1)))}
        self.calls = 0

    def __call__(self, tokens, coords, t, cond, drop=None):
        self.calls += 1
        return nx.Tensor(np.zeros_like(tokens))


# -- schedule -----------------------------------------------------------------

def test_schedule_single_step():
    s = make_schedule(1, 0.5, 0.5)
    assert s.alpha_bar[1] == 0.5 and s.alpha_bar[0] == 1.0


def test_schedule_1000_terminal_value():
    s = make_schedule(1000, 1e-4, 0.02)
    assert math.isclose(s.alpha_bar[1000], 4.0358297653756835e-05, rel_tol=1e-9)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 400), lo=st.floats(1e-5, 0.1), span=st.floats(0, 0.5))
def test_schedule_properties(T, lo, span):
    hi = min(lo + span, 0.9)
    s = make_schedule(T, lo, hi)
    ab = s.alpha_bar
    assert np.all(ab > 0) and np.all(ab <= 1)
    assert np.all(np.diff(ab) < 0)
    assert np.allclose(np.sqrt(ab) ** 2 + np.sqrt(1 - ab) ** 2, 1.0, atol=1e-12, rtol=0)


def test_schedule_rejects_bad_input():
    for args in [(0,), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)]:
        with pytest.raises(ValueError):
            make_schedule(*args)


# -- forward process ------------------------------------------------------------

def test_forward_t0_is_identity(rng):
    s = make_schedule(10)
    y0 = rng.standard_normal((3, 4, 5))
    assert np.array_equal(forward_diffuse_views(y0, 0, s, rng).noisy, y0)


def test_forward_tiny_alpha_bar_gives_shared_noise(rng):
    y0 = rng.standard_normal((3, 4, 5))
    eps = rng.standard_normal((4, 5))
    yt = diffuse(y0, eps[None], 0.0)
    assert np.array_equal(yt[0], eps) and np.array_equal(yt[1], yt[2])


def test_forward_direct_value():
    assert math.isclose(float(diffuse(np.array(1.0), np.array(0.5), 0.25)), 0.9330, abs_tol=1e-4)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), t=st.integers(1, 200), n=st.integers(1, 8))
def test_cross_view_residual_identical(seed, t, n):
    s = make_schedule(200, 5e-4, 0.1)
    r = np.random.default_rng(seed)
    b = forward_diffuse_views(r.uniform(-1, 1, (n, 6, 5)), t, s, r)
    rec = b.recovered_noise(s)
    assert all(rec[v].tobytes() == b.noise.tobytes() for v in range(n))


def test_exact_forward_close_to_formula(rng):
    y0, eps = rng.uniform(-1, 1, (3, 4, 5)), rng.standard_normal((4, 5))
    noisy, noise = diffuse_exact(y0, eps[None], 0.3)
    assert np.max(np.abs(noise[0] - eps)) < 1e-10
    assert np.max(np.abs(noisy - diffuse(y0, eps[None], 0.3))) < 1e-10


def test_forward_rejects_bad_shape(rng):
    with pytest.raises(ValueError):
        forward_diffuse_views(np.zeros((4, 5)), 1, make_schedule(10), rng)


# -- loss -----------------------------------------------------------------------

def test_loss_zero_on_exact_noise(rng):
    eps = rng.standard_normal((16, 12))
    pred = nx.Tensor(np.broadcast_to(eps, (3, 16, 12)).copy())
    assert float(training_loss(pred, eps).data) == 0.0


def test_loss_zero_prediction_is_unit(rng):
    eps = rng.standard_normal((64, 128))
    loss = float(training_loss(nx.Tensor(np.zeros((2, 64, 128))), eps).data)
    assert abs(loss - 1.0) < 0.05


def test_loss_half_when_one_view_perfect(rng):
    eps = rng.standard_normal((8, 6))
    pred = np.stack([eps, np.zeros_like(eps)])
    loss = float(training_loss(nx.Tensor(pred), eps).data)
    assert math.isclose(loss, 0.5 * np.mean(eps ** 2), rel_tol=1e-12)


# -- reverse step -----------------------------------------------------------------

def test_ddpm_t1_inverts(rng):
    s = make_schedule(1, 0.3, 0.3)
    y0, eps = rng.standard_normal(10), rng.standard_normal(10)
    y1 = diffuse(y0, eps, s.alpha_bar[1])
    assert np.allclose(ddpm_step(y1, eps, 1, s, rng), y0, atol=1e-14)


def test_ddpm_zero_beta_limit(rng):
    s = make_schedule(5, 1e-12, 1e-12)
    y = rng.standard_normal(7)
    assert np.allclose(ddpm_step(y, np.zeros(7), 3, s, None, z=np.zeros(7)), y, atol=1e-9)


@pytest.mark.parametrize("T", [10, 50])
def test_reverse_oracle_reconstructs(T, rng):
    s = make_schedule(T, 1e-4, min(0.5, 0.02 * 1000 / T))
    y0 = rng.standard_normal((4, 16, 12))
    y = rng.standard_normal(y0.shape)
    for t in range(T, 0, -1):
        ab = s.alpha_bar[t]
        eps = (y - np.sqrt(ab) * y0) / np.sqrt(1 - ab)
        y = ddpm_step(y, eps, t, s, None, z=np.zeros_like(y))
    assert np.max(np.abs(y - y0)) < 1e-6


# -- guidance ----------------------------------------------------------------------

def test_cfg_examples(rng):
    c, u = rng.standard_normal((3, 8)), rng.standard_normal((3, 8))
    assert np.array_equal(cfg_combine(c, u, 1.0), c)
    out = cfg_combine(np.ones(4), np.zeros(4), 8.5, first_channels_mask(3, 4))
    assert np.array_equal(out, [8.5, 8.5, 8.5, 1.0])
    assert np.array_equal(cfg_combine(c, u, 8.5, np.zeros(8, bool)), c)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), s=st.floats(0, 20), k=st.integers(0, 8))
def test_cfg_unmasked_channels_bitwise(seed, s, k):
    r = np.random.default_rng(seed)
    c, u = r.standard_normal((5, 8)), r.standard_normal((5, 8))
    out = cfg_combine(c, u, s, first_channels_mask(k, 8))
    assert out[:, k:].tobytes() == c[:, k:].tobytes()


def test_cfg_errors():
    with pytest.raises(ValueError):
        cfg_combine(np.ones(3), np.ones(3), -1.0)
    with pytest.raises(ValueError):
        cfg_combine(np.ones(3), np.ones(3), 2.0, np.ones(4, bool))
    with pytest.raises(ValueError):
        cfg_combine(np.ones(3), np.ones(4), 2.0)


def test_guidance_mask_modes():
    codec = PatchCodec(PatchCodecConfig(patch=4))
    m, patch_space = guidance_mask("pixel", codec, 48)
    assert patch_space and m.all()
    m, patch_space = guidance_mask("token3", codec, 48)
    assert not patch_space and m.sum() == 3 and m[:3].all()
    with pytest.raises(ValueError):
        guidance_mask("bogus", codec, 48)


# -- sampling ----------------------------------------------------------------------

SPEC = FieldSpec(metric_dim=3, height=8, width=8, num_views=4)
CODEC = PatchCodec(PatchCodecConfig(patch=4))


def test_zero_net_marginal_mean():
    s = make_schedule(20, 1e-3, 0.05)
    var = 1.0
    for t in range(20, 0, -1):
        var = var / s.alpha[t] + (s.beta[t] if t > 1 else 0.0)
    means = []
    for seed in range(64):
        y = sample_field(ZeroNet(), np.zeros((4, 8)), SPEC, 2, s, 8.5, np.random.default_rng(seed),
                         CODEC, clip_denoised=False, return_tokens=True)
        means.append(y.mean())
    se = math.sqrt(var / (64 * y.size))
    assert abs(np.mean(means)) < 3 * se
    assert abs(np.var(y) / var - 1) < 0.2


def test_sampling_shapes_and_determinism():
    s = make_schedule(5)
    a = sample_field(ZeroNet(), np.zeros((4, 8)), SPEC, 4, s, 8.5, np.random.default_rng(7), CODEC)
    b = sample_field(ZeroNet(), np.zeros((4, 8)), SPEC, 4, s, 8.5, np.random.default_rng(7), CODEC)
    assert len(a) == 4 and all(v.pixels.shape == (8, 8, 3) for v in a)
    assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a, b))
    assert [v.view_coord for v in a] == [(0.125,), (0.375,), (0.625,), (0.875,)]


def test_sampling_batches_cond_and_uncond():
    net = ZeroNet()
    s = make_schedule(6)
    sample_field(net, np.zeros((2, 4, 8)), SPEC, 3, s, 8.5, np.random.default_rng(0), CODEC)
    assert net.calls == 6


def test_shared_init_noise_flag():
    s = make_schedule(1, 0.5, 0.5)
    y = sample_field(ZeroNet(), np.zeros((4, 8)), SPEC, 3, s, 1.0, np.random.default_rng(0), CODEC,
                     shared_init_noise=True, clip_denoised=False, return_tokens=True)
    assert np.array_equal(y[0], y[1]) and np.array_equal(y[1], y[2])


def test_clipped_sampling_stays_in_range():
    s = make_schedule(10)
    views = sample_field(ZeroNet(), np.zeros((4, 8)), SPEC, 2, s, 8.5, np.random.default_rng(1), CODEC)
    # the final step returns the clipped clean estimate exactly
    assert all(np.abs(v.pixels).max() <= 1 + 1e-9 for v in views)
