import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from s2a.errors import MagicMismatch, NonFiniteInput, TruncatedPayload, UnknownBand, UnsupportedVersion
from s2a.raster import (
    MultiBandRaster,
    decode_mbr,
    export_png,
    normalize_unit,
    radiometric_scale,
    read_mbr,
    write_mbr,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, width=32)


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    r = MultiBandRaster(rng.standard_normal((3, 5, 7)).astype(np.float32), ("G", "R", "NIR"))
    write_mbr(r, tmp_path / "a.mbr")
    back = read_mbr(tmp_path / "a.mbr")
    assert back.equals(r)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_roundtrip_property(tmp_path_factory, data):
    labels = tuple(f"B{i}" for i in range(data.shape[0]))
    r = MultiBandRaster(data, labels)
    path = tmp_path_factory.mktemp("mbr") / "x.mbr"
    write_mbr(r, path)
    assert read_mbr(path).equals(r)


def test_zero_pixel_payload(tmp_path):
    write_mbr(MultiBandRaster(np.zeros((1, 1, 1), np.float32), ("SWIR",)), tmp_path / "z.mbr")
    blob = (tmp_path / "z.mbr").read_bytes()
    assert blob[-4:] == b"\x00\x00\x00\x00"


def test_label_block_layout(tmp_path):
    write_mbr(MultiBandRaster(np.zeros((2, 1, 1), np.float32), ("G", "R")), tmp_path / "l.mbr")
    blob = (tmp_path / "l.mbr").read_bytes()
    assert blob[:4] == b"MBR1"
    b, m, n, nlab = struct.unpack_from("<IIII", blob, 4)
    assert (b, m, n, nlab) == (2, 1, 1, 3)
    assert blob[20:23] == b"G\nR"


def test_magic_mismatch():
    with pytest.raises(MagicMismatch):
        decode_mbr(b"PNG\x89" + b"\x00" * 32)


def test_unsupported_version():
    with pytest.raises(UnsupportedVersion):
        decode_mbr(b"MBR2" + b"\x00" * 32)


def test_truncated_payload():
    labels = b"G\nR\nN"
    blob = b"MBR1" + struct.pack("<IIII", 3, 2, 2, len(labels)) + labels + np.zeros(10, "<f4").tobytes()
    with pytest.raises(TruncatedPayload):
        decode_mbr(blob)


def test_nonfinite_raster_rejected():
    with pytest.raises(NonFiniteInput):
        MultiBandRaster(np.array([[[np.nan]]], np.float32), ("G",))


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_unit(np.array([1.0, 3.0, 5.0])), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(normalize_unit(np.full((3, 3), 7.2)), np.zeros((3, 3)))


def test_normalize_matches_recomputation():
    v = np.random.default_rng(0).random((4, 4)) * 9 - 2
    lo, hi = v.min(), v.max()
    expected = np.array([[(x - lo) / (hi - lo) for x in row] for row in v])
    np.testing.assert_allclose(normalize_unit(v), expected, atol=1e-12)


def test_normalize_nonfinite():
    with pytest.raises(NonFiniteInput):
        normalize_unit(np.array([0.0, np.inf]))


@given(arrays(np.float64, (5, 5), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_normalize_range_and_extremes(v):
    out = normalize_unit(v)
    assert out.min() >= 0 and out.max() <= 1
    if v.max() > v.min():
        assert out.min() == 0.0 and out.max() == 1.0


@given(
    arrays(np.float64, (4, 4), elements=st.floats(-100, 100, allow_nan=False)),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_normalize_affine_invariance(v, a, b):
    if v.max() - v.min() < 1e-3:
        return
    np.testing.assert_allclose(normalize_unit(a * v + b), normalize_unit(v), atol=1e-9)


def test_radiometric_bitdepth():
    r = MultiBandRaster(np.array([[[255.0, 0.0]]], np.float32), ("G",))
    assert radiometric_scale(r, "bitdepth", 8).data[0, 0, 0] == 1.0
    r10 = MultiBandRaster(np.array([[[0.0, 5000.0]]], np.float32), ("G",))
    out = radiometric_scale(r10, "bitdepth", 10).data
    assert out[0, 0, 0] == 0.0 and out[0, 0, 1] == 1.0


def test_radiometric_joint_minmax():
    r = MultiBandRaster(np.array([[[0.0, 2.0]], [[1.0, 3.0]]], np.float32), ("A", "B"))
    out = radiometric_scale(r, "minmax").data
    np.testing.assert_allclose(out, np.array([[[0, 2 / 3]], [[1 / 3, 1]]]), atol=1e-7)


def test_png_gray_128(tmp_path):
    r = MultiBandRaster(np.full((1, 4, 4), 0.5, np.float32), ("SWIR",))
    export_png(r, ("SWIR",), tmp_path / "g.png")
    img = np.asarray(Image.open(tmp_path / "g.png"))
    assert img.dtype == np.uint8 and np.all(img == 128)


def test_png_unknown_band(tmp_path):
    r = MultiBandRaster(np.zeros((3, 4, 4), np.float32), ("NIR", "R", "G"))
    with pytest.raises(UnknownBand):
        export_png(r, ("SWIR", "NIR", "R"), tmp_path / "x.png")


def test_png_percentile_stretch_ramp(tmp_path):
    ramp = np.linspace(0.2, 0.7, 100, dtype=np.float32).reshape(1, 10, 10)
    r = MultiBandRaster(ramp, ("SWIR",))
    export_png(r, ("SWIR",), tmp_path / "r.png", stretch="percentile")
    img = np.asarray(Image.open(tmp_path / "r.png"))
    lo, hi = np.percentile(ramp, [2, 98])
    # oracle: everything at or below the 2nd percentile is black, at or above the 98th white
    assert img.min() == 0 and img.max() == 255
    assert np.all(img[ramp[0] <= lo] == 0) and np.all(img[ramp[0] >= hi] == 255)
