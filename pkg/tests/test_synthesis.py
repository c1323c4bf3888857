import numpy as np
import pytest
import torch

from s2a.data import simulate_coarse, synth_scene, upsample
from s2a.errors import ShapeMismatch, UncoveredPixels, UnknownBand
from s2a.model import NetConfig, build_networks
from s2a.raster import MultiBandRaster
from s2a.synthesis import (
    TilePlan,
    attention_source_select,
    feather_weights,
    model_callables,
    mosaic,
    plan_tiles,
    synthesize_scene,
)


def _identity_generate(z, a):
    # echo the green band, ignoring attention
    return z[:, 0]


def _flat_attend(x):
    return np.zeros_like(x)


def test_plan_examples():
    assert plan_tiles(64, 64).origins == ((0, 0),)
    plan = plan_tiles(100, 64)
    assert [r for r, _ in plan.origins] == [0, 16, 32, 36]
    assert len(plan_tiles(256, 256).origins) == 13 * 13


def test_feather_weights_shape_and_peak():
    w = feather_weights(64)
    assert w.shape == (64, 64)
    np.testing.assert_allclose(w, w.T)
    np.testing.assert_allclose(w, w[::-1, ::-1])
    assert w.max() < 1 and w.min() > 0
    g = np.exp(-((np.arange(64) - 31.5) ** 2) / (2 * 16.0**2))
    np.testing.assert_allclose(w, np.outer(g, g), atol=1e-15)


def test_single_tile_is_exact():
    plane = np.random.default_rng(0).random((64, 64))
    np.testing.assert_allclose(mosaic([plane], plan_tiles(64, 64)), plane, rtol=0, atol=1e-15)


def test_identity_stub_reconstructs_scene():
    src, _ = synth_scene(3, 256, 256)
    out = synthesize_scene(_identity_generate, _flat_attend, src, MultiBandRaster(src.data[:1], ("A",)))
    assert out.labels == ("SWIR",)
    assert np.max(np.abs(out.data[0] - src.band("G"))) <= 1e-6


def test_weights_normalize_to_one():
    plan = plan_tiles(256, 256)
    ones = [np.ones((64, 64))] * len(plan.origins)
    out, den = mosaic(ones, plan, return_weight=True)
    assert np.max(np.abs(out - 1.0)) <= 1e-9
    # per-pixel normalized weights sum to one
    w = feather_weights(64)
    total = np.zeros((256, 256))
    for r, c in plan.origins:
        total[r : r + 64, c : c + 64] += w / den[r : r + 64, c : c + 64]
    assert np.max(np.abs(total - 1.0)) <= 1e-9


def test_mosaic_accumulation_oracle():
    rng = np.random.default_rng(1)
    plan = plan_tiles(80, 96, patch=64, stride=16)
    tiles = [rng.random((64, 64)) for _ in plan.origins]
    w = feather_weights(64)
    expected = np.zeros((80, 96))
    for i in range(80):
        for j in range(96):
            num = den = 0.0
            for (r, c), t in zip(plan.origins, tiles):
                if r <= i < r + 64 and c <= j < c + 64:
                    num += w[i - r, j - c] * t[i - r, j - c]
                    den += w[i - r, j - c]
            expected[i, j] = num / den
    np.testing.assert_allclose(mosaic(tiles, plan), expected, atol=1e-12)


def test_uncovered_pixels():
    plan = TilePlan(64, 128, 64, 16, ((0, 0),))
    with pytest.raises(UncoveredPixels):
        mosaic([np.ones((64, 64))], plan)


def test_attention_source_modes():
    src, tgt = synth_scene(2, 128, 128)
    scene = MultiBandRaster(np.concatenate([src.data, tgt.data]), src.labels + tgt.labels)
    sub = attention_source_select(scene, "substitute", band="NIR")
    np.testing.assert_array_equal(sub.data[0], scene.band("NIR"))
    sim = attention_source_select(scene, "coarse_swir")
    np.testing.assert_allclose(sim.data[0], simulate_coarse(scene.band("SWIR"), 4), atol=1e-7)
    coarse = MultiBandRaster(np.random.default_rng(0).random((1, 32, 32)).astype(np.float32), ("SWIR",))
    ext = attention_source_select(scene, "coarse_swir", coarse=coarse)
    np.testing.assert_allclose(ext.data[0], upsample(coarse.data[0], 4), atol=1e-6)
    with pytest.raises(UnknownBand):
        attention_source_select(scene, "substitute", band="BLUE")
    with pytest.raises(ShapeMismatch):
        attention_source_select(scene, "coarse_swir", coarse=MultiBandRaster(np.zeros((1, 30, 30), np.float32), ("SWIR",)))


def test_model_callables_shapes():
    cfg = NetConfig(K=1, C=16, rdb_layers=1, rdb_growth=4, encoder_width=8, decoder_width=8, mlp_hidden=8)
    gen, disc = build_networks(cfg)
    generate, attend = model_callables(gen, disc)
    src, tgt = synth_scene(4, 96, 96)
    out = synthesize_scene(generate, attend, src, tgt, batch_size=3, clip=True)
    assert out.data.shape == (1, 96, 96)
    assert out.data.min() >= 0 and out.data.max() <= 1
    assert torch.is_grad_enabled()
