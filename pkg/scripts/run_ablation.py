"""Attention variant x conditioning sweep on a small synthetic dataset.

    python scripts/run_ablation.py --out runs/ablation --steps 300
"""

import argparse
from pathlib import Path

from s2a.cli import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--scenes", type=int, default=2)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=13)
    args = ap.parse_args()
    out = Path(args.out)
    if run(["datagen", "--out", str(out / "data"), "--scenes", str(args.scenes), "--seed", str(args.seed)]) != 0:
        raise SystemExit("datagen failed")
    raise SystemExit(run(["ablate", "--data", str(out / "data"), "--out", str(out / "results"), "--desk",
                          "--steps", str(args.steps)]))


if __name__ == "__main__":
    main()
