"""Full-scene inference: overlapping tiles blended with Gaussian feather weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .data import SOURCE_BANDS, simulate_coarse, upsample, window_offsets
from .errors import ShapeMismatch, UncoveredPixels, UnknownBand
from .model import Discriminator, Generator, spatial_attention
from .raster import MultiBandRaster


@dataclass(frozen=True)
class TilePlan:
    height: int
    width: int
    patch: int
    stride: int
    origins: tuple[tuple[int, int], ...]


def plan_tiles(m: int, n: int, patch: int = 64, stride: int = 16) -> TilePlan:
    rows = window_offsets(m, patch, stride)
    cols = window_offsets(n, patch, stride)
    return TilePlan(m, n, patch, stride, tuple((r, c) for r in rows for c in cols))


def feather_weights(patch: int = 64, sigma: float | None = None) -> np.ndarray:
    """Separable Gaussian centred on the patch, peak 1, sigma = patch / 4 by default."""
    sigma = patch / 4 if sigma is None else sigma
    centre = (patch - 1) / 2
    g = np.exp(-((np.arange(patch) - centre) ** 2) / (2 * sigma**2))
    return np.outer(g, g)


def mosaic(tiles, plan: TilePlan, weights: np.ndarray | None = None, return_weight: bool = False):
    """Blend ``tiles`` (one (p, p) array per plan origin) into an (M, N) plane."""
    weights = feather_weights(plan.patch) if weights is None else weights
    num = np.zeros((plan.height, plan.width))
    den = np.zeros((plan.height, plan.width))
    p = plan.patch
    for (r, c), tile in zip(plan.origins, tiles, strict=True):
        num[r : r + p, c : c + p] += weights * tile
        den[r : r + p, c : c + p] += weights
    if not np.all(den > 0):
        raise UncoveredPixels(f"{int(np.count_nonzero(den <= 0))} pixels not covered by the plan")
    out = num / den
    return (out, den) if return_weight else out


def model_callables(generator: Generator, discriminator: Discriminator, variant: str = "v3"):
    """Wrap trained networks as numpy ``(generate, attend)`` functions."""

    @torch.no_grad()
    def attend(patches: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32)).unsqueeze(1)
        _, taps = discriminator(x)
        return spatial_attention(taps, variant).numpy()

    @torch.no_grad()
    def generate(z: np.ndarray, a: np.ndarray) -> np.ndarray:
        zt = torch.from_numpy(np.ascontiguousarray(z, dtype=np.float32))
        at = torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
        return generator(zt, at)[:, 0].numpy()

    return generate, attend


def synthesize_scene(
    generate: Callable[[np.ndarray, np.ndarray], np.ndarray],
    attend: Callable[[np.ndarray], np.ndarray],
    source: MultiBandRaster,
    attention_source: MultiBandRaster,
    plan: TilePlan | None = None,
    batch_size: int = 16,
    sigma: float | None = None,
    clip: bool = False,
) -> MultiBandRaster:
    """Tile the scene, run ``attend`` then ``generate`` per tile and feather-blend.

    ``generate(z, a)`` maps (B, 3, p, p) and (B, p, p) arrays to (B, p, p);
    ``attend(x)`` maps (B, p, p) to (B, p, p). See :func:`model_callables`.
    The blend is left unclamped unless ``clip`` is set; exports and metrics clamp.
    """
    z_full = source.select(SOURCE_BANDS).data
    a_src = attention_source.data[0]
    m, n = source.height, source.width
    if a_src.shape != (m, n):
        raise ShapeMismatch(f"attention source {a_src.shape} vs scene {(m, n)}")
    plan = plan or plan_tiles(m, n)
    if (plan.height, plan.width) != (m, n):
        raise ShapeMismatch("tile plan was made for a different scene size")
    p = plan.patch
    tiles = []
    for i in range(0, len(plan.origins), batch_size):
        chunk = plan.origins[i : i + batch_size]
        z = np.stack([z_full[:, r : r + p, c : c + p] for r, c in chunk])
        att_in = np.stack([a_src[r : r + p, c : c + p] for r, c in chunk])
        out = np.asarray(generate(z, attend(att_in)), dtype=np.float64)
        tiles.extend(out.reshape(len(chunk), p, p))
    out = mosaic(tiles, plan, feather_weights(p, sigma))
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return MultiBandRaster(out[None].astype(np.float32), ("SWIR",))


def attention_source_select(
    scene: MultiBandRaster,
    mode: str = "coarse_swir",
    band: str | None = None,
    coarse: MultiBandRaster | None = None,
    factor: int = 4,
) -> MultiBandRaster:
    """Pick the plane the critic sees to produce attention.

    ``coarse_swir`` upsamples ``coarse`` to scene resolution, or simulates it
    from the scene's own SWIR band when ``coarse`` is None. ``substitute``
    returns the named high-resolution band unchanged.
    """
    if mode == "substitute":
        if band is None:
            raise UnknownBand("substitute mode needs a band name")
        return MultiBandRaster(scene.band(band)[None], (band,))
    if mode != "coarse_swir":
        raise ValueError(f"unknown attention source mode {mode!r}")
    if coarse is not None:
        f = scene.height // coarse.height
        if coarse.height * f != scene.height or coarse.width * f != scene.width:
            raise ShapeMismatch(f"coarse {coarse.data.shape[1:]} does not divide scene {(scene.height, scene.width)}")
        plane = upsample(coarse.data[0], f)
    else:
        plane = simulate_coarse(scene.band("SWIR"), factor)
    return MultiBandRaster(plane[None].astype(np.float32), ("SWIR_UP",))
