"""Image quality metrics, MNDWI water masks and the metric report.

All metrics accumulate in float64 on the stored radiometric scale (reflectance
in [0, 1] for data produced by this package).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AllPixelsDegenerate, ShapeMismatch, ZeroMeanSignal
from .raster import BinaryMask, MultiBandRaster

INF_SENTINEL = math.inf


def _pair(pred, gt):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def mse(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean((p - g) ** 2))


def rmse(pred, gt) -> float:
    return math.sqrt(mse(pred, gt))


def psnr(pred, gt, peak: float = 1.0) -> float:
    err = mse(pred, gt)
    if err == 0:
        return INF_SENTINEL
    return 10.0 * math.log10(peak**2 / err)


def sre(pred, gt) -> float:
    """Signal-to-reconstruction error in dB, using the mean signal power."""
    p, g = _pair(pred, gt)
    mu = float(np.mean(g))
    if mu == 0:
        raise ZeroMeanSignal("ground truth has zero mean")
    err = float(np.mean((p - g) ** 2))
    if err == 0:
        return INF_SENTINEL
    return 10.0 * math.log10(mu**2 / err)


def ssim(pred, gt, peak: float = 1.0, window: int = 8) -> float:
    """Mean SSIM over all 8x8 uniform windows, in percent.

    Window statistics use population (biased) variances. Stacked inputs of
    shape (..., M, N) are averaged over every window of every plane.
    """
    p, g = _pair(pred, gt)
    if p.shape[-1] < window or p.shape[-2] < window:
        raise ShapeMismatch(f"image {p.shape} smaller than the {window}x{window} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wp = sliding_window_view(p, (window, window), axis=(-2, -1))
    wg = sliding_window_view(g, (window, window), axis=(-2, -1))
    axes = (-2, -1)
    mu_p = wp.mean(axis=axes)
    mu_g = wg.mean(axis=axes)
    var_p = ((wp - mu_p[..., None, None]) ** 2).mean(axis=axes)
    var_g = ((wg - mu_g[..., None, None]) ** 2).mean(axis=axes)
    cov = ((wp - mu_p[..., None, None]) * (wg - mu_g[..., None, None])).mean(axis=axes)
    num = (2 * mu_p * mu_g + c1) * (2 * cov + c2)
    den = (mu_p**2 + mu_g**2 + c1) * (var_p + var_g + c2)
    return float(np.mean(num / den) * 100.0)


def sam(pred_stack, gt_stack, with_skipped: bool = False):
    """Mean spectral angle in degrees between per-pixel band vectors.

    Stacks are (B, M, N). Pixels where either vector has zero norm are
    skipped; ``with_skipped=True`` also returns how many were.
    """
    p, g = _pair(pred_stack, gt_stack)
    if p.ndim == 2:
        p, g = p[None], g[None]
    p = p.reshape(p.shape[0], -1)
    g = g.reshape(g.shape[0], -1)
    np_ = np.sqrt(np.sum(p * p, axis=0))
    ng = np.sqrt(np.sum(g * g, axis=0))
    ok = (np_ > 0) & (ng > 0)
    skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        raise AllPixelsDegenerate("every pixel has a zero-norm spectral vector")
    # Kahan's half-angle form: exact zero for parallel vectors, no arccos cancellation
    u = p[:, ok] * ng[ok]
    v = g[:, ok] * np_[ok]
    angles = 2 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0))
    angle = float(np.degrees(np.mean(angles)))
    return (angle, skipped) if with_skipped else angle


def mndwi(g_plane, swir_plane) -> np.ndarray:
    """(G - SWIR) / (G + SWIR); pixels with G + SWIR == 0 are 0."""
    g, s = _pair(g_plane, swir_plane)
    den = g + s
    out = np.zeros_like(den)
    np.divide(g - s, den, out=out, where=den != 0)
    return out


def threshold_mask(plane, t: float = 0.0) -> BinaryMask:
    return BinaryMask(np.asarray(plane) > t)


def iou(a, b) -> float:
    """Intersection over union; two empty masks give 1."""
    av = a.values if isinstance(a, BinaryMask) else np.asarray(a, dtype=bool)
    bv = b.values if isinstance(b, BinaryMask) else np.asarray(b, dtype=bool)
    if av.shape != bv.shape:
        raise ShapeMismatch(f"masks {av.shape} vs {bv.shape}")
    union = np.count_nonzero(av | bv)
    if union == 0:
        return 1.0
    return np.count_nonzero(av & bv) / union


@dataclass
class MetricReport:
    rmse: float
    psnr_db: float
    sre_db: float
    ssim_percent: float
    sam_deg: float | None = None
    iou: float | None = None
    scale: str = "reflectance [0,1]"
    sam_skipped: int = 0
    per_crop: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and math.isinf(v):
                d[k] = "inf" if v > 0 else "-inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


COLUMNS = ("RMSE", "SSIM(%)", "SRE(dB)", "PSNR(dB)", "SAM(deg)", "IoU")


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.4f}"


def format_table(rows: dict[str, MetricReport]) -> str:
    """Aligned text table with Table-1 column order plus IoU."""
    header = ("Method",) + COLUMNS
    body = [
        (name, _fmt(r.rmse), _fmt(r.ssim_percent), _fmt(r.sre_db), _fmt(r.psnr_db), _fmt(r.sam_deg), _fmt(r.iou))
        for name, r in rows.items()
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines)


def _swir(r: MultiBandRaster) -> np.ndarray:
    return r.band("SWIR") if "SWIR" in r.labels else r.data[0]


def evaluate_report(
    pred: MultiBandRaster,
    gt: MultiBandRaster,
    shared: MultiBandRaster | None = None,
    bands_for_sam: Sequence[str] = ("NIR", "R", "G"),
    mndwi_threshold: float = 0.0,
    peak: float = 1.0,
    clip: bool = True,
) -> MetricReport:
    """Compare a synthesized SWIR band with the true one.

    ``shared`` supplies the true concurrent bands; when absent they are taken
    from ``gt`` if present there. SAM stacks (SWIR, *bands_for_sam*) per pixel
    and MNDWI-IoU thresholds masks built from predicted and true SWIR with
    the true G band. Either is reported as ``None`` when bands are missing.
    """
    p = _swir(pred).astype(np.float64)
    g = _swir(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    if clip:
        p = np.clip(p, 0.0, 1.0)
    ref = shared if shared is not None else gt
    report = MetricReport(
        rmse=rmse(p, g),
        psnr_db=psnr(p, g, peak),
        sre_db=sre(p, g),
        ssim_percent=ssim(p, g, peak),
    )
    if all(b in ref.labels for b in bands_for_sam):
        others = [ref.band(b).astype(np.float64) for b in bands_for_sam]
        if others and others[0].shape != p.shape:
            raise ShapeMismatch("shared bands do not match the SWIR planes")
        report.sam_deg, report.sam_skipped = sam(np.stack([p] + others), np.stack([g] + others), with_skipped=True)
    if "G" in ref.labels:
        green = ref.band("G")
        mask_pred = threshold_mask(mndwi(green, p), mndwi_threshold)
        mask_true = threshold_mask(mndwi(green, g), mndwi_threshold)
        report.iou = iou(mask_pred, mask_true)
    return report
