"""Datagen, desk-scale training and held-out evaluation against the bicubic baseline.

    python scripts/run_end_to_end.py --out runs/e2e --steps 2000
"""

import argparse
import json
from pathlib import Path

import numpy as np

from s2a.cli import run
from s2a.data import upsample
from s2a.evaluation import evaluate_report, format_table
from s2a.raster import MultiBandRaster, read_mbr, write_mbr


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/e2e")
    ap.add_argument("--scenes", type=int, default=8)
    ap.add_argument("--heldout", type=int, default=2)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    out = Path(args.out)
    data, held, train_dir = out / "data", out / "heldout", out / "train"
    steps = [
        ["datagen", "--out", str(data), "--scenes", str(args.scenes), "--seed", str(args.seed)],
        ["datagen", "--out", str(held), "--scenes", str(args.heldout), "--seed", str(args.seed + 1)],
        ["train", "--data", str(data), "--out", str(train_dir), "--desk", "--steps", str(args.steps),
         "--set", f"train.batch_size={args.batch}", "--set", "train.eval_every=250",
         "--set", "data.train_fraction=0.9", "--set", "data.val_fraction=0.1", "--set", "data.test_fraction=0.0"],
    ]
    for argv in steps:
        if run(argv) != 0:
            raise SystemExit(f"step failed: {' '.join(argv)}")

    rows = {}
    for i in range(args.heldout):
        stem = held / f"scene_{i:03d}"
        pred_path = out / f"pred_{i:03d}.mbr"
        code = run(["synthesize", "--checkpoint", str(train_dir / "best.s2ac"), "--source", f"{stem}_source.mbr",
                    "--coarse", f"{stem}_coarse.mbr", "--out", str(pred_path), "--png", str(out / f"pred_{i:03d}.png")])
        if code != 0:
            raise SystemExit("synthesis failed")
        src, tgt = read_mbr(f"{stem}_source.mbr"), read_mbr(f"{stem}_target.mbr")
        bicubic = np.clip(upsample(read_mbr(f"{stem}_coarse.mbr").data[0], 4), 0, 1)[None].astype(np.float32)
        write_mbr(MultiBandRaster(bicubic, ("SWIR",)), out / f"bicubic_{i:03d}.mbr")
        rows[f"scene{i} model"] = evaluate_report(read_mbr(pred_path), tgt, src)
        rows[f"scene{i} bicubic"] = evaluate_report(MultiBandRaster(bicubic, ("SWIR",)), tgt, src)
    table = format_table(rows)
    print(table)
    (out / "heldout.txt").write_text(table + "\n", encoding="utf-8")
    (out / "heldout.json").write_text(json.dumps({k: v.to_dict() for k, v in rows.items()}, indent=2), encoding="utf-8")


if __name__ == "__main__":
    main()
