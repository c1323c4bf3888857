import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from s2a.errors import EmptyTaps, ShapeMismatch, UnknownConditioningMode
from s2a.model import (
    Discriminator,
    Generator,
    LaplacianChannelAttention,
    NetConfig,
    ResidualDenseBlock,
    build_networks,
    spatial_attention_v1,
    spatial_attention_v2,
    spatial_attention_v3,
)

TINY = NetConfig(K=1, C=16, rdb_layers=2, rdb_growth=4, encoder_width=8, decoder_width=8, mlp_hidden=8)


def _double(module):
    return module.double()


def test_rdb_shape_preserved():
    block = ResidualDenseBlock(8, layers=2, growth=4)
    for m, n in ((4, 4), (7, 5)):
        assert block(torch.rand(2, 8, m, n)).shape == (2, 8, m, n)
    with pytest.raises(ShapeMismatch):
        block(torch.rand(1, 6, 4, 4))


def test_rdb_zero_weights_is_identity():
    block = ResidualDenseBlock(8, layers=2, growth=4)
    for p in block.parameters():
        torch.nn.init.zeros_(p)
    x = torch.rand(1, 8, 5, 5)
    assert torch.equal(block(x), x)


def test_rdb_matches_layerwise_oracle():
    torch.manual_seed(0)
    block = _double(ResidualDenseBlock(8, layers=2, growth=4))
    for p in block.parameters():
        torch.nn.init.normal_(p, std=0.3)
    x = torch.rand(1, 8, 4, 4, dtype=torch.float64)
    expected = oracles.rdb(x[0].numpy(), oracles.params(block), layers=2)
    np.testing.assert_allclose(block(x)[0].detach().numpy(), expected, atol=1e-6)


def test_channel_attention_range_and_shape():
    ca = LaplacianChannelAttention(32)
    coeff = ca.coefficients(torch.randn(3, 32, 6, 6) * 5)
    assert coeff.shape == (3, 32, 1, 1)
    assert torch.all(coeff > 0) and torch.all(coeff < 1)


def test_channel_attention_zero_input_is_half():
    ca = LaplacianChannelAttention(16)
    for conv in list(ca.pyramid) + [ca.merge]:
        torch.nn.init.zeros_(conv.bias)
    coeff = ca.coefficients(torch.zeros(1, 16, 4, 4))
    assert torch.allclose(coeff, torch.full_like(coeff, 0.5))


def test_channel_attention_matches_oracle():
    torch.manual_seed(1)
    ca = _double(LaplacianChannelAttention(32))
    x = torch.randn(1, 32, 5, 5, dtype=torch.float64)
    expected = oracles.channel_attention(x[0].numpy(), oracles.params(ca), (3, 5, 7))
    np.testing.assert_allclose(ca.coefficients(x)[0, :, 0, 0].detach().numpy(), expected, atol=1e-6)


def test_channel_attention_shape_errors():
    with pytest.raises(ShapeMismatch):
        LaplacianChannelAttention(20)
    with pytest.raises(ShapeMismatch):
        LaplacianChannelAttention(16).coefficients(torch.rand(1, 8, 2, 2))


def test_unit_gate_is_identity():
    x = torch.rand(2, 16, 3, 3)
    assert torch.equal(x * torch.ones(2, 16, 1, 1), x)


def test_generator_shapes_and_determinism():
    gen, _ = build_networks(TINY, seed=4)
    z, a = torch.rand(2, 3, 12, 10), torch.rand(2, 12, 10)
    out = gen(z, a)
    assert out.shape == (2, 1, 12, 10)
    gen2, _ = build_networks(TINY, seed=4)
    assert torch.equal(gen2(z, a), out)


def test_generator_multiply_unit_attention():
    gen, _ = build_networks(TINY, conditioning="multiply", seed=2)
    z = torch.rand(1, 3, 8, 8)
    out = gen(z, torch.ones(1, 8, 8))
    raw, _ = gen.backbone(z)
    assert torch.equal(out, raw)


def test_generator_errors():
    with pytest.raises(UnknownConditioningMode):
        Generator(TINY, conditioning="add")
    gen = Generator(TINY)
    with pytest.raises(ShapeMismatch):
        gen(torch.rand(1, 3, 8, 8), torch.rand(1, 6, 8))


def test_discriminator_default_taps_and_score():
    disc = Discriminator(NetConfig())
    score, taps = disc(torch.rand(2, 1, 8, 8))
    assert score.shape == (2,) and torch.all(torch.isfinite(score))
    assert len(taps) == NetConfig().K + 2 == 8
    assert all(t.shape[-2:] == (8, 8) for t in taps)


def test_discriminator_score_matches_composition():
    _, disc = build_networks(TINY, seed=5)
    disc = disc.double()
    x = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    score, taps = disc(x)
    p = oracles.params(disc.mlp)
    h = taps[-1][0].detach().numpy().mean(axis=(1, 2))
    for i in (0, 2):
        h = p[f"{i}.weight"] @ h + p[f"{i}.bias"]
        h = np.where(h > 0, h, 0.2 * h)
    expected = p["4.weight"] @ h + p["4.bias"]
    np.testing.assert_allclose(score.detach().numpy(), expected, atol=1e-6)


def test_backbone_preserves_dims_at_every_tap():
    gen, disc = build_networks(TINY)
    _, taps = gen.backbone(torch.rand(1, 4, 9, 13))
    assert all(t.shape[-2:] == (9, 13) for t in taps)
    _, taps = disc(torch.rand(1, 1, 9, 13))
    assert len(taps) == TINY.K + 2
    assert all(t.shape[-2:] == (9, 13) for t in taps)


# --- spatial attention -----------------------------------------------------------

def _taps(rng, n=3, c=2, m=4):
    return [torch.from_numpy(rng.standard_normal((1, c, m, m))) for _ in range(n)]


def test_v3_argmax_single_tap():
    t = torch.zeros(1, 2, 4, 4, dtype=torch.float64)
    t[0, 1, 2, 3] = -5.0
    t[0, 0, 0, 0] = 1.0
    a = spatial_attention_v3([t])
    assert a[0, 2, 3] == 1.0 and a.argmax() == 2 * 4 + 3


def test_v3_constant_taps_give_zeros():
    taps = [torch.full((1, 3, 4, 4), 2.0), torch.full((1, 2, 4, 4), -1.0)]
    assert torch.equal(spatial_attention_v3(taps), torch.zeros(1, 4, 4))


def test_v1_zero_and_saturation():
    zero = [torch.zeros(1, 2, 4, 4)]
    assert torch.allclose(spatial_attention_v1(zero), torch.full((1, 4, 4), 0.5))
    big = [torch.rand(1, 8, 4, 4) * 100 + 1]
    assert torch.all(spatial_attention_v1(big) > 0.99)


def test_v2_closed_form():
    taps = [torch.zeros(1, 2, 4, 4) for _ in range(6)]
    np.testing.assert_allclose(spatial_attention_v2(taps).numpy(), 1 / (1 + np.exp(-3.0)), atol=1e-6)
    assert abs(1 / (1 + np.exp(-3.0)) - 0.9526) < 1e-4


@pytest.mark.parametrize(
    "fn, oracle",
    [
        (spatial_attention_v1, oracles.attention_v1),
        (spatial_attention_v2, oracles.attention_v2),
        (spatial_attention_v3, oracles.attention_v3),
    ],
)
def test_attention_matches_formula(fn, oracle):
    rng = np.random.default_rng(9)
    taps = [t * 0.3 for t in _taps(rng)]
    expected = oracle([t[0].numpy() for t in taps])
    np.testing.assert_allclose(fn(taps)[0].numpy(), expected, atol=1e-6)


@pytest.mark.parametrize("fn", [spatial_attention_v1, spatial_attention_v2, spatial_attention_v3])
def test_empty_taps(fn):
    with pytest.raises(EmptyTaps):
        fn([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 5))
def test_attention_channel_permutation_invariance(seed, n_taps, channels):
    rng = np.random.default_rng(seed)
    taps = _taps(rng, n_taps, channels)
    perm = [t[:, torch.from_numpy(rng.permutation(channels))] for t in taps]
    for fn in (spatial_attention_v1, spatial_attention_v2, spatial_attention_v3):
        torch.testing.assert_close(fn(perm), fn(taps), rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2), st.floats(0.01, 100))
def test_v3_scale_invariance_and_range(seed, which, scale):
    rng = np.random.default_rng(seed)
    taps = _taps(rng)
    scaled = list(taps)
    scaled[which] = taps[which] * scale
    a = spatial_attention_v3(taps)
    torch.testing.assert_close(spatial_attention_v3(scaled), a, rtol=0, atol=1e-9)
    assert a.min() == 0.0 and a.max() == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_v1_v2_open_interval(seed):
    taps = [t * 0.1 for t in _taps(np.random.default_rng(seed))]
    for fn in (spatial_attention_v1, spatial_attention_v2):
        a = fn(taps)
        assert torch.all(a > 0) and torch.all(a < 1)


def test_reported_architecture_defaults():
    cfg = NetConfig()
    assert (cfg.K, cfg.C, cfg.dilations, cfg.channel_attention_reduction) == (6, 128, (3, 5, 7), 16)
    gen, disc = build_networks(cfg)
    assert len(gen.backbone.blocks) == 6 and gen.backbone.skip.kernel_size == (1, 1)
    linears = [m for m in disc.mlp if isinstance(m, torch.nn.Linear)]
    assert len(linears) == 3 and isinstance(disc.mlp[-1], torch.nn.Linear)
