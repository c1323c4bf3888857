"""Command-line entry point: ``s2a <subcommand> ...``.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import S2AError
from .raster import MultiBandRaster, export_png, read_mbr, write_mbr

log = logging.getLogger("s2a")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parse_sets(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_run_config(args) -> cfgmod.RunConfig:
    base = cfgmod.RunConfig(train=cfgmod.desk_config()) if getattr(args, "desk", False) else None
    try:
        return cfgmod.load(args.config, _parse_sets(args.set), base=base)
    except cfgmod.ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _emit(args, record: dict, text: str | None = None):
    if args.json:
        print(json.dumps(record), flush=True)
    elif text is not None:
        print(text, flush=True)


# --- datagen -----------------------------------------------------------------

def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_datagen(args) -> int:
    from .data import ManifestEntry, downsample, synth_scene, window_offsets, write_manifest

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.scenes):
        source, target, water, _ = synth_scene(scene_seed(args.seed, i), args.size, args.size, args.factor, return_masks=True)
        stem = f"scene_{i:03d}"
        write_mbr(source, out / f"{stem}_source.mbr")
        write_mbr(target, out / f"{stem}_target.mbr")
        coarse = downsample(target.data[0], args.factor).astype(np.float32)
        write_mbr(MultiBandRaster(coarse[None], ("SWIR",)), out / f"{stem}_coarse.mbr")
        write_mbr(MultiBandRaster(water[None].astype(np.float32), ("WATER",)), out / f"{stem}_water.mbr")
        for r in window_offsets(args.size, args.crop, args.stride):
            for c in window_offsets(args.size, args.crop, args.stride):
                entries.append(ManifestEntry(stem, r, c))
        _emit(args, {"event": "scene", "index": i, "stem": stem}, f"wrote {stem}")
    header = {"seed": args.seed, "scenes": args.scenes, "size": args.size, "factor": args.factor, "crop": args.crop, "stride": args.stride}
    write_manifest(entries, out / "manifest.txt", header)
    _emit(args, {"event": "manifest", "crops": len(entries)}, f"{len(entries)} crops listed in {out / 'manifest.txt'}")
    return 0


# --- train -----------------------------------------------------------------

def load_crops(data_dir: Path, crop: int, factor: int):
    """Crops listed in ``manifest.txt``, with simulated coarse bands."""
    from .data import CropDataset, PairedCrop, SOURCE_BANDS, read_manifest, simulate_coarse

    entries, _ = read_manifest(data_dir / "manifest.txt")
    cache = {}
    crops = []
    for e in entries:
        if e.scene not in cache:
            src = read_mbr(data_dir / f"{e.scene}_source.mbr").select(SOURCE_BANDS).data
            tgt = read_mbr(data_dir / f"{e.scene}_target.mbr").data[0]
            cache[e.scene] = (src, tgt)
        src, tgt = cache[e.scene]
        y = tgt[e.row : e.row + crop, e.col : e.col + crop]
        crops.append(
            PairedCrop(
                z=np.ascontiguousarray(src[:, e.row : e.row + crop, e.col : e.col + crop]),
                y=np.ascontiguousarray(y[None]),
                y_tilde=simulate_coarse(y, factor).astype(np.float32)[None],
                scene=e.scene,
                row=e.row,
                col=e.col,
            )
        )
    return CropDataset(crops)


def cmd_train(args) -> int:
    from .data import split_dataset
    from .training import load_checkpoint, train

    run = _load_run_config(args)
    if args.steps is not None:
        run = replace(run, train=replace(run.train, steps=args.steps))
    d = run.data
    crops = load_crops(Path(args.data), d.crop_size, d.factor)
    tr, va, _ = split_dataset(crops, (d.train_fraction, d.val_fraction, d.test_fraction), d.split_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfgmod.dump(run), encoding="utf-8")
    state = load_checkpoint(args.resume, expected_net=run.train.net) if args.resume else None

    def progress(st, report):
        if st.step % max(1, args.log_every) == 0:
            _emit(args, asdict(report), f"step {st.step:6d}  critic {report.critic_total:+.4f}  gen {report.generator_total:+.4f}  pixel {report.pixel:.6f}  |grad| {report.grad_norm:.3f}")

    state, history = train(run.train, tr, va if len(va) else None, out_dir=out, state=state, callback=progress)
    _emit(args, {"event": "done", "step": state.step, "best": state.best}, f"finished at step {state.step}; best {state.best}")
    return 0


# --- synthesize ------------------------------------------------------------

def _parse_attention_from(value: str):
    if value == "coarse":
        return "coarse_swir", None
    if value.startswith("band:") and len(value) > 5:
        return "substitute", value[5:]
    raise UsageError(f"--attention-from must be 'coarse' or 'band:<NAME>', got {value!r}")


def cmd_synthesize(args) -> int:
    from .synthesis import attention_source_select, model_callables, plan_tiles, synthesize_scene
    from .training import load_checkpoint

    mode, band = _parse_attention_from(args.attention_from)
    state = load_checkpoint(args.checkpoint)
    source = read_mbr(args.source)
    if mode == "coarse_swir":
        if args.coarse is None:
            raise UsageError("--attention-from coarse needs --coarse")
        att = attention_source_select(source, mode, coarse=read_mbr(args.coarse))
    else:
        att = attention_source_select(source, mode, band=band)
    plan = plan_tiles(source.height, source.width, args.patch, args.stride)
    generate, attend = model_callables(state.generator, state.discriminator, state.config.attention_variant)
    pred = synthesize_scene(generate, attend, source, att, plan, clip=True)
    write_mbr(pred, args.out)
    if args.png:
        composite = MultiBandRaster(
            np.stack([pred.data[0], source.band("NIR"), source.band("R")]), ("SWIR", "NIR", "R")
        )
        export_png(composite, ("SWIR", "NIR", "R"), args.png, stretch="percentile")
    _emit(args, {"event": "synthesized", "out": str(args.out), "tiles": len(plan.origins)}, f"wrote {args.out} ({len(plan.origins)} tiles)")
    return 0


# --- evaluate / mndwi --------------------------------------------------------

def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_report, format_table

    pred = read_mbr(args.pred)
    gt = read_mbr(args.gt)
    shared = read_mbr(args.source) if args.source else None
    report = evaluate_report(pred, gt, shared, mndwi_threshold=args.threshold, peak=args.peak)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    _emit(args, report.to_dict(), format_table({args.name: report}) + f"\n(scale: {report.scale})")
    return 0


def cmd_mndwi(args) -> int:
    from .evaluation import iou, mndwi, threshold_mask

    green_src = read_mbr(args.green_from)
    swir = read_mbr(args.swir)
    green = green_src.band("G")
    swir_plane = swir.band("SWIR") if "SWIR" in swir.labels else swir.data[0]
    index = mndwi(green, swir_plane)
    mask = threshold_mask(index, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mbr(MultiBandRaster(index[None].astype(np.float32), ("MNDWI",)), out / "mndwi.mbr")
    mask_r = MultiBandRaster(mask.values[None].astype(np.float32), ("WATER",))
    write_mbr(mask_r, out / "mask.mbr")
    export_png(mask_r, ("WATER",), out / "mask.png")
    record = {"event": "mndwi", "water_fraction": float(mask.values.mean())}
    if args.ref_swir:
        ref = read_mbr(args.ref_swir)
        ref_plane = ref.band("SWIR") if "SWIR" in ref.labels else ref.data[0]
        record["iou"] = iou(mask, threshold_mask(mndwi(green, ref_plane), args.threshold))
    text = "\n".join(f"{k}: {v}" for k, v in record.items() if k != "event")
    _emit(args, record, text)
    return 0


# --- ablate ------------------------------------------------------------------

def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    run = _load_run_config(args)
    d = run.data
    crops = load_crops(Path(args.data), d.crop_size, d.factor)
    result = run_ablation(run, crops, Path(args.out), steps=args.steps, max_val=args.max_val)
    _emit(args, {"event": "ablation", **result.to_dict()}, result.table + "\n" + "\n".join(result.checks))
    return 0


# --- export --------------------------------------------------------------------

def cmd_export(args) -> int:
    raster = read_mbr(args.input)
    export_png(raster, tuple(b.strip() for b in args.bands.split(",")), args.out, stretch=args.stretch)
    _emit(args, {"event": "export", "out": str(args.out)}, f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit JSON lines instead of tables")
    common.add_argument("--threads", type=int, default=None, help="cap worker threads (env S2A_THREADS)")

    cfg_opts = _Parser(add_help=False)
    cfg_opts.add_argument("--config", help="key = value config file with dotted keys")
    cfg_opts.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    cfg_opts.add_argument("--desk", action="store_true", help="start from the single-CPU desk network")

    p = _Parser(prog="s2a", description="Spatio-spectral attention WGAN for SWIR band synthesis.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("datagen", parents=[common], help="write synthetic scenes and a crop manifest")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scenes", type=int, default=8)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--factor", type=int, default=4)
    s.add_argument("--crop", type=int, default=64)
    s.add_argument("--stride", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_datagen)

    s = sub.add_parser("train", parents=[common, cfg_opts], help="pretrain and adversarially train")
    s.add_argument("--data", required=True, help="datagen output directory")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=None, help="adversarial step budget (train.steps)")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--log-every", type=int, default=50)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synthesize", parents=[common], help="tiled scene inference")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--source", required=True, help="MBR with G, R, NIR")
    s.add_argument("--attention-from", default="coarse", help="'coarse' or 'band:<NAME>'")
    s.add_argument("--coarse", help="coarse SWIR MBR (for --attention-from coarse)")
    s.add_argument("--patch", type=int, default=64)
    s.add_argument("--stride", type=int, default=16)
    s.add_argument("--out", required=True)
    s.add_argument("--png", help="also write a SWIR/NIR/R false-colour PNG")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("evaluate", parents=[common], help="metric report against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--source", help="true G/R/NIR bands, if not inside --gt")
    s.add_argument("--threshold", type=float, default=0.0, help="MNDWI water threshold")
    s.add_argument("--peak", type=float, default=1.0)
    s.add_argument("--name", default="prediction")
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("mndwi", parents=[common], help="water index, mask and IoU")
    s.add_argument("--green-from", required=True, help="MBR holding the G band")
    s.add_argument("--swir", required=True)
    s.add_argument("--ref-swir", help="reference SWIR for IoU")
    s.add_argument("--threshold", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mndwi)

    s = sub.add_parser("ablate", parents=[common, cfg_opts], help="attention variant x conditioning sweep")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--max-val", type=int, default=128, help="validation crops per run")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("export", parents=[common], help="MBR to 8-bit PNG")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--bands", default="SWIR,NIR,R", help="1 or 3 comma-separated labels")
    s.add_argument("--stretch", choices=("none", "percentile"), default="none")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return 1
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    threads = args.threads or (int(os.environ["S2A_THREADS"]) if os.environ.get("S2A_THREADS") else None)
    if threads:
        import torch

        torch.set_num_threads(threads)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"s2a {args.command}: {exc}", file=sys.stderr)
        return 1
    except (S2AError, OSError, ValueError) as exc:
        print(f"s2a {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
