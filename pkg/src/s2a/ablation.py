"""Attention-variant x conditioning-mode sweep on a reduced step budget."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import CropDataset, split_dataset
from .evaluation import MetricReport, format_table, psnr, rmse, sre, ssim
from .model import ATTENTION_VARIANTS, CONDITIONING_MODES, spatial_attention
from .raster import MultiBandRaster, export_png
from .training import TensorData, predict, train

log = logging.getLogger(__name__)


@dataclass
class AblationResult:
    rows: dict[str, MetricReport]
    table: str
    checks: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows": {k: v.to_dict() for k, v in self.rows.items()},
            "checks": self.checks,
        }


def _crop_metrics(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    p = np.clip(pred, 0.0, 1.0)
    return MetricReport(rmse=rmse(p, gt), psnr_db=psnr(p, gt), sre_db=sre(p, gt), ssim_percent=ssim(p, gt))


def _save_attention_pngs(state, crop_y: torch.Tensor, out: Path, tag: str):
    with torch.no_grad():
        _, taps = state.discriminator(crop_y)
    variant = state.config.attention_variant
    maps = {
        "encoder": spatial_attention(taps[:1], variant)[0].numpy(),
        "final": spatial_attention(taps, variant)[0].numpy(),
    }
    for name, m in maps.items():
        export_png(MultiBandRaster(m[None], ("A",)), ("A",), out / f"attention_{tag}_{name}.png")


def run_ablation(run, crops: CropDataset, out_dir: Path, steps: int = 300, max_val: int = 128) -> AblationResult:
    """Train every (variant, conditioning) pair from the same seed and compare on validation crops."""
    out_dir.mkdir(parents=True, exist_ok=True)
    d = run.data
    tr, va, _ = split_dataset(crops, (d.train_fraction, d.val_fraction, d.test_fraction), d.split_seed)
    va = CropDataset(va.crops[:max_val], "val")
    val_t = TensorData(va)
    train_t = TensorData(tr)
    gt = val_t.y.double().numpy()
    rows: dict[str, MetricReport] = {}
    for variant in ATTENTION_VARIANTS:
        for mode in CONDITIONING_MODES:
            tag = f"{variant}-{mode}"
            cfg = replace(run.train, steps=steps, attention_variant=variant, conditioning=mode, eval_every=max(steps, 1))
            state, _ = train(cfg, train_t, None)
            pred = predict(state, val_t.z, val_t.yt).double().numpy()
            rows[tag] = _crop_metrics(pred, gt)
            _save_attention_pngs(state, val_t.y[:1], out_dir, tag)
            export_png(
                MultiBandRaster(np.clip(pred[0], 0, 1).astype(np.float32), ("SWIR",)),
                ("SWIR",),
                out_dir / f"prediction_{tag}.png",
                stretch="percentile",
            )
            log.info("%s: SRE %.2f dB, SSIM %.2f%%", tag, rows[tag].sre_db, rows[tag].ssim_percent)

    checks = []
    for variant in ATTENTION_VARIANTS:
        c, m = rows[f"{variant}-concat"].sre_db, rows[f"{variant}-multiply"].sre_db
        verdict = "as expected" if c >= m else "NOT as expected"
        checks.append(f"{variant}: concat SRE {c:.2f} dB vs multiply {m:.2f} dB -> {verdict}")
    table = format_table(rows)
    (out_dir / "ablation.txt").write_text(table + "\n\n" + "\n".join(checks) + "\n", encoding="utf-8")
    result = AblationResult(rows, table, checks)
    (out_dir / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")
    return result
