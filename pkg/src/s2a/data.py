"""Paired crop extraction, coarse-band simulation and the synthetic scene generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    BadDims,
    BadFractions,
    CropLargerThanScene,
    DimensionMismatch,
    NonDivisibleDims,
    NonFiniteInput,
)
from .raster import MultiBandRaster

SOURCE_BANDS = ("G", "R", "NIR")
TARGET_BAND = "SWIR"


@dataclass(frozen=True, eq=False)
class PairedCrop:
    z: np.ndarray  # (3, S, S) in G, R, NIR order
    y: np.ndarray  # (1, S, S)
    y_tilde: np.ndarray  # (1, S, S)
    scene: str = ""
    row: int = 0
    col: int = 0


@dataclass(eq=False)
class CropDataset:
    crops: list[PairedCrop]
    split: str = "train"
    seed: int = 0

    def __len__(self):
        return len(self.crops)

    def __getitem__(self, i):
        return self.crops[i]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(z, y, y_tilde)`` arrays of shape (n, C, S, S)."""
        z = np.stack([c.z for c in self.crops]).astype(np.float32)
        y = np.stack([c.y for c in self.crops]).astype(np.float32)
        yt = np.stack([c.y_tilde for c in self.crops]).astype(np.float32)
        return z, y, yt


def window_offsets(length: int, size: int, stride: int) -> list[int]:
    """Origins stepping by ``stride`` with a final origin clamped to ``length - size``."""
    if size > length:
        raise CropLargerThanScene(f"window {size} exceeds extent {length}")
    if stride < 1:
        raise ValueError("stride must be positive")
    offsets = list(range(0, length - size + 1, stride))
    if offsets[-1] != length - size:
        offsets.append(length - size)
    return offsets


def downsample(plane, f: int) -> np.ndarray:
    """Area-average pooling over f x f blocks."""
    p = np.asarray(plane, dtype=np.float64)
    m, n = p.shape
    if m % f or n % f:
        raise NonDivisibleDims(f"{m}x{n} not divisible by {f}")
    return p.reshape(m // f, f, n // f, f).mean(axis=(1, 3))


def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    w = np.zeros_like(x)
    near = x <= 1
    far = (x > 1) & (x < 2)
    w[near] = (a + 2) * x[near] ** 3 - (a + 3) * x[near] ** 2 + 1
    w[far] = a * x[far] ** 3 - 5 * a * x[far] ** 2 + 8 * a * x[far] - 4 * a
    return w


def _bicubic_matrix(n_in: int, f: int) -> np.ndarray:
    n_out = n_in * f
    u = (np.arange(n_out) + 0.5) / f - 0.5
    k = np.floor(u).astype(int)
    t = u - k
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in (-1, 0, 1, 2):
        idx = np.clip(k + tap, 0, n_in - 1)
        np.add.at(mat, (rows, idx), _cubic_kernel(t - tap))
    return mat


def upsample(plane, f: int) -> np.ndarray:
    """Separable Catmull-Rom bicubic upsampling with replicated edges."""
    p = np.asarray(plane, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NonFiniteInput("upsample needs finite input")
    if f == 1:
        return p.copy()
    ry = _bicubic_matrix(p.shape[0], f)
    rx = _bicubic_matrix(p.shape[1], f)
    return ry @ p @ rx.T


def simulate_coarse(plane, f: int) -> np.ndarray:
    """Upsampled coarse band: ``upsample(downsample(plane, f), f)``."""
    return upsample(downsample(plane, f), f)


def extract_paired_crops(
    source: MultiBandRaster,
    target: MultiBandRaster,
    coarse: MultiBandRaster | None = None,
    size: int = 64,
    stride: int = 16,
    factor: int = 4,
    scene: str = "",
) -> CropDataset:
    z_full = source.select(SOURCE_BANDS).data
    y_full = target.band(TARGET_BAND) if TARGET_BAND in target.labels else target.data[0]
    m, n = source.height, source.width
    if y_full.shape != (m, n):
        raise DimensionMismatch(f"target {y_full.shape} vs source {(m, n)}")
    yt_full = None
    if coarse is not None:
        cm, cn = coarse.height, coarse.width
        if m % cm or n % cn or m // cm != n // cn:
            raise DimensionMismatch(f"coarse {(cm, cn)} is not an integer reduction of {(m, n)}")
        yt_full = upsample(coarse.data[0], m // cm).astype(np.float32)

    crops = []
    for r in window_offsets(m, size, stride):
        for c in window_offsets(n, size, stride):
            y = y_full[r : r + size, c : c + size]
            if yt_full is None:
                yt = simulate_coarse(y, factor).astype(np.float32)
            else:
                yt = yt_full[r : r + size, c : c + size]
            crops.append(
                PairedCrop(
                    z=np.ascontiguousarray(z_full[:, r : r + size, c : c + size]),
                    y=np.ascontiguousarray(y[None]),
                    y_tilde=np.ascontiguousarray(yt[None]),
                    scene=scene,
                    row=r,
                    col=c,
                )
            )
    return CropDataset(crops)


def split_dataset(crops: Sequence, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle deterministically and cut into train/val/test.

    Split sizes are ``floor(n * fraction)``; leftover items go round-robin to the
    splits in order, skipping any split whose fraction is zero.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions {fractions} must be three nonnegative values summing to 1")
    items = list(crops.crops if isinstance(crops, CropDataset) else crops)
    n = len(items)
    sizes = [math.floor(n * f + 1e-9) for f in fractions]
    open_splits = [k for k, f in enumerate(fractions) if f > 0]
    i = 0
    while sum(sizes) < n:
        sizes[open_splits[i % len(open_splits)]] += 1
        i += 1
    order = np.random.default_rng(seed).permutation(n)
    out = []
    start = 0
    for tag, size in zip(("train", "val", "test"), sizes):
        out.append(CropDataset([items[j] for j in order[start : start + size]], tag, seed))
        start += size
    return tuple(out)


# --- synthetic scenes -------------------------------------------------------

SWIR_WEIGHTS = (0.10, 0.35, 0.55)
WATER_DROP = 0.5
BRIGHT_GAIN = 0.2


def swir_from_source(z: np.ndarray, water: np.ndarray, bright: np.ndarray) -> np.ndarray:
    """Target SWIR of the synthetic generator: clipped band mix, then 3x3 box blur."""
    g, r, nir = (np.asarray(b, dtype=np.float64) for b in z)
    raw = (
        SWIR_WEIGHTS[0] * g
        + SWIR_WEIGHTS[1] * r
        + SWIR_WEIGHTS[2] * nir
        - WATER_DROP * water
        + BRIGHT_GAIN * bright
    )
    blurred = ndimage.uniform_filter(np.clip(raw, 0.0, 1.0), size=3, mode="nearest")
    # the filter can leave -1e-16 residue on all-zero neighbourhoods
    return np.clip(blurred, 0.0, 1.0)


def _smooth_field(rng, m, n, n_waves=4, max_freq=3.0):
    yy, xx = np.meshgrid(np.arange(m) / m, np.arange(n) / n, indexing="ij")
    out = np.zeros((m, n))
    for _ in range(n_waves):
        fy, fx = rng.uniform(-max_freq, max_freq, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase) / n_waves
    return out


def _disk(m, n, cy, cx, radius):
    yy, xx = np.ogrid[:m, :n]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def _rect(m, n, r0, c0, h, w):
    mask = np.zeros((m, n), dtype=bool)
    mask[max(r0, 0) : r0 + h, max(c0, 0) : c0 + w] = True
    return mask


def synth_scene(seed: int, m: int = 256, n: int = 256, factor: int = 4, return_masks: bool = False):
    """Deterministic synthetic (G, R, NIR) source and SWIR target.

    Land is a smooth mix of soil and vegetation with fine texture and thin
    road lines; water bodies have high green and near-zero NIR/SWIR; bright
    "cloud" blobs are high in every band.
    """
    if m < 64 or n < 64 or m % factor or n % factor:
        raise BadDims(f"scene {m}x{n} must be >= 64 and divisible by {factor}")
    rng = np.random.default_rng(seed)

    veg = np.clip(0.5 + 0.6 * _smooth_field(rng, m, n), 0.0, 1.0)
    texture = ndimage.gaussian_filter(rng.standard_normal((m, n)), 1.0)
    texture /= texture.std() + 1e-12
    brightness = 0.5 + 0.3 * _smooth_field(rng, m, n, max_freq=2.0)

    g = 0.08 + 0.05 * brightness + 0.03 * veg + 0.015 * texture
    r = 0.10 + 0.20 * brightness * (1.0 - 0.6 * veg) + 0.03 * texture
    nir = 0.25 + 0.15 * brightness + 0.30 * veg + 0.04 * texture

    roads = np.zeros((m, n), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        if rng.random() < 0.5:
            row = rng.integers(0, m)
            roads[row : row + rng.integers(1, 3), :] = True
        else:
            col = rng.integers(0, n)
            roads[:, col : col + rng.integers(1, 3)] = True
    g = np.where(roads, 0.22, g)
    r = np.where(roads, 0.30, r)
    nir = np.where(roads, 0.32, nir)

    water = np.zeros((m, n), dtype=bool)
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.integers(m // 8, m - m // 8), rng.integers(n // 8, n - n // 8)
        if rng.random() < 0.6:
            water |= _disk(m, n, cy, cx, rng.integers(m // 16, max(m // 16 + 1, m // 6)))
        else:
            water |= _rect(m, n, cy - 8, cx - 8, rng.integers(8, m // 4), rng.integers(8, n // 4))
    wtex = 0.01 * texture
    g = np.where(water, 0.40 + 0.5 * wtex, g)
    r = np.where(water, 0.22 + wtex, r)
    nir = np.where(water, 0.05 + wtex, nir)

    bright = np.zeros((m, n), dtype=bool)
    for _ in range(rng.integers(0, 3)):
        bright |= _disk(m, n, rng.integers(0, m), rng.integers(0, n), rng.integers(4, 12))
    bright &= ~water
    g = np.where(bright, 0.82, g)
    r = np.where(bright, 0.85, r)
    nir = np.where(bright, 0.88, nir)

    z = np.clip(np.stack([g, r, nir]), 0.0, 1.0)
    y = swir_from_source(z, water.astype(np.float64), bright.astype(np.float64))

    source = MultiBandRaster(z.astype(np.float32), SOURCE_BANDS)
    target = MultiBandRaster(y[None].astype(np.float32), (TARGET_BAND,))
    if return_masks:
        return source, target, water, bright
    return source, target


# --- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    scene: str
    row: int
    col: int


def write_manifest(entries: Sequence[ManifestEntry], path, header: dict | None = None) -> None:
    lines = ["# s2a crop manifest: scene<TAB>row<TAB>col"]
    for k, v in (header or {}).items():
        lines.append(f"# {k} = {v}")
    lines += [f"{e.scene}\t{e.row}\t{e.col}" for e in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[list[ManifestEntry], dict]:
    entries, header = [], {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].split("=", 1)
                header[k.strip()] = v.strip()
            continue
        scene, row, col = line.split("\t")
        entries.append(ManifestEntry(scene, int(row), int(col)))
    return entries, header
