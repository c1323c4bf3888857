"""Raster data model, the MBR container, normalization and PNG export.

MBR layout (little-endian)::

    b"MBR1" | u32 B | u32 M | u32 N | u32 L | L bytes of UTF-8 labels joined by "\\n"
            | B*M*N float32, plane-major then row-major
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    IoFailure,
    MagicMismatch,
    NonFiniteInput,
    ShapeMismatch,
    TruncatedPayload,
    UnknownBand,
    UnsupportedVersion,
)

MBR_MAGIC = b"MBR1"
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True, eq=False)
class MultiBandRaster:
    """B planes of M x N float32 values with one label per plane."""

    data: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[0] < 1:
            raise ShapeMismatch(f"raster data must be (B, M, N), got {data.shape}")
        labels = tuple(str(lab) for lab in self.labels)
        if len(labels) != data.shape[0]:
            raise ShapeMismatch(f"{len(labels)} labels for {data.shape[0]} bands")
        if not np.all(np.isfinite(data)):
            raise NonFiniteInput("raster contains NaN or Inf")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownBand(f"band {label!r} not in {self.labels}") from None

    def band(self, label: str) -> np.ndarray:
        return self.data[self.index(label)]

    def select(self, labels: Sequence[str]) -> "MultiBandRaster":
        return MultiBandRaster(self.data[[self.index(lab) for lab in labels]], tuple(labels))

    def equals(self, other: "MultiBandRaster") -> bool:
        """Bit-exact comparison of labels and payload."""
        return (
            self.labels == other.labels
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeMismatch(f"mask must be 2-D, got {v.shape}")
        if v.dtype != bool:
            if not np.all((v == 0) | (v == 1)):
                raise ValueError("mask values must be 0 or 1")
            v = v.astype(bool)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def stack(planes: Sequence[np.ndarray], labels: Sequence[str]) -> MultiBandRaster:
    return MultiBandRaster(np.stack([np.asarray(p, dtype=np.float32) for p in planes]), tuple(labels))


def write_mbr(raster: MultiBandRaster, path) -> None:
    label_block = "\n".join(raster.labels).encode("utf-8")
    header = _HEADER.pack(MBR_MAGIC, raster.bands, raster.height, raster.width, len(label_block))
    payload = raster.data.astype("<f4", copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(label_block)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_mbr(path) -> MultiBandRaster:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_mbr(blob)


def decode_mbr(blob: bytes) -> MultiBandRaster:
    if len(blob) < 4 or blob[:3] != MBR_MAGIC[:3]:
        raise MagicMismatch("not an MBR file")
    if blob[:4] != MBR_MAGIC:
        raise UnsupportedVersion(f"MBR version {blob[3:4]!r} not supported")
    if len(blob) < _HEADER.size:
        raise TruncatedPayload("header truncated")
    _, b, m, n, nlab = _HEADER.unpack_from(blob)
    offset = _HEADER.size
    if len(blob) < offset + nlab:
        raise TruncatedPayload("label block truncated")
    labels_text = blob[offset : offset + nlab].decode("utf-8")
    offset += nlab
    need = 4 * b * m * n
    if len(blob) - offset < need:
        raise TruncatedPayload(f"declared {b}x{m}x{n} floats, file holds {(len(blob) - offset) // 4}")
    data = np.frombuffer(blob, dtype="<f4", count=b * m * n, offset=offset).reshape(b, m, n)
    labels = tuple(labels_text.split("\n")) if b > 0 else ()
    return MultiBandRaster(data.astype(np.float32), labels)


def normalize_unit(plane) -> np.ndarray:
    """Min-subtract, max-divide to [0, 1]; a constant plane maps to zeros."""
    v = np.asarray(plane, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("normalize_unit needs finite input")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    # guard against 1 ulp overshoot
    return np.clip(out, 0.0, 1.0)


def radiometric_scale(raster: MultiBandRaster, mode: str = "minmax", bitdepth: int = 8) -> MultiBandRaster:
    """Scale a raster to [0, 1].

    ``mode="bitdepth"`` divides by ``2**bitdepth - 1`` and clamps; ``mode="minmax"``
    normalizes jointly over all bands of the scene.
    """
    data = raster.data.astype(np.float64)
    if mode == "bitdepth":
        out = np.clip(data / (2.0**bitdepth - 1.0), 0.0, 1.0)
    elif mode == "minmax":
        out = normalize_unit(data)
    else:
        raise ValueError(f"unknown scaling mode {mode!r}")
    return MultiBandRaster(out.astype(np.float32), raster.labels)


def _percentile_stretch(plane: np.ndarray, lo_pct=2.0, hi_pct=98.0) -> np.ndarray:
    lo, hi = np.percentile(plane, [lo_pct, hi_pct])
    if hi <= lo:
        return np.zeros_like(plane, dtype=np.float64)
    return np.clip((plane - lo) / (hi - lo), 0.0, 1.0)


def to_uint8(raster: MultiBandRaster, band_combo: Sequence[str], stretch: str = "none") -> np.ndarray:
    if len(band_combo) not in (1, 3):
        raise ValueError("band_combo needs 1 or 3 labels")
    planes = []
    for label in band_combo:
        p = raster.band(label).astype(np.float64)
        if stretch == "percentile":
            p = _percentile_stretch(p)
        elif stretch == "none":
            p = np.clip(p, 0.0, 1.0)
        else:
            raise ValueError(f"unknown stretch {stretch!r}")
        planes.append(np.floor(p * 255.0 + 0.5).astype(np.uint8))
    if len(planes) == 1:
        return planes[0]
    return np.stack(planes, axis=-1)


def export_png(raster: MultiBandRaster, band_combo: Sequence[str], path, stretch: str = "none") -> None:
    from PIL import Image

    img = to_uint8(raster, band_combo, stretch)
    try:
        Image.fromarray(img).save(os.fspath(path), format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
