"""Command line: ``dropnerf {synth,mask,train,render,eval,ablate}``.

Exit codes: 0 success, 2 configuration/validation error, 3 I/O error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as io
from . import pipeline
from .config import RunConfig, load_config, to_dict
from .errors import ConfigError, DatasetIOError, NumericalError
from .masks import MaskConfig
from .synth import generate_dataset

log = logging.getLogger("dropnerf")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--seed", type=int, help="override the configuration seed")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def _mask_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=float)
    p.add_argument("--dilate", type=int, help="dilation radius in pixels")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--enhance", dest="enhance", action="store_true", default=None)
    g.add_argument("--no-enhance", dest="enhance", action="store_false")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-rays", type=int)
    p.add_argument("--samples", type=int, help="samples per ray")
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--log-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropnerf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic waterdrop dataset")
    p.add_argument("out_dir", type=Path)
    _common(p)

    p = sub.add_parser("mask", help="threshold attention maps into predicted masks")
    p.add_argument("dataset", type=Path)
    _common(p)
    _mask_flags(p)

    p = sub.add_parser("train", help="fit a radiance field to the degraded images")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, required=True, help="run directory for checkpoint and loss log")
    p.add_argument("--no-mask", action="store_true", help="train on every pixel (unmasked baseline)")
    _common(p)
    _train_flags(p)

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("poses", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--samples", type=int)
    _common(p)

    p = sub.add_parser("eval", help="score renders against clean images")
    p.add_argument("rendered", type=Path)
    p.add_argument("clean", type=Path)
    p.add_argument("--truth", type=Path, help="directory of true_%%04d.pgm drop masks")
    p.add_argument("--out", type=Path, help="metrics CSV (default: <rendered>/metrics.csv)")
    _common(p)

    p = sub.add_parser("ablate", help="train with and without mask enhancement and compare")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _common(p)
    _mask_flags(p)
    _train_flags(p)
    return parser


# configuration ------------------------------------------------------------------------

def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg = cfg.seeded()
    mask_over = {
        k: v
        for k, v in (
            ("threshold", getattr(args, "threshold", None)),
            ("dilation_radius", getattr(args, "dilate", None)),
            ("enhancement", getattr(args, "enhance", None)),
        )
        if v is not None
    }
    train_over = {
        k: v
        for k, v in (
            ("iterations", getattr(args, "iterations", None)),
            ("batch_rays", getattr(args, "batch_rays", None)),
            ("samples_per_ray", getattr(args, "samples", None)),
            ("lr_start", getattr(args, "lr_start", None)),
            ("lr_end", getattr(args, "lr_end", None)),
            ("log_every", getattr(args, "log_every", None)),
        )
        if v is not None
    }
    try:
        return dataclasses.replace(
            cfg,
            mask=dataclasses.replace(cfg.mask, **mask_over),
            train=dataclasses.replace(cfg.train, **train_over),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and (not path.is_dir() or any(path.iterdir())) and not force:
        raise ConfigError(f"{path} exists and is not empty (use --force to overwrite)")


def _progress(it: int, lr: float, loss: float) -> None:
    print(f"iter {it:7d}  lr {lr:.3e}  loss {loss:.6f}", flush=True)


# commands -------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    _refuse_existing(args.out_dir, args.force)
    drops = cfg.drops.resolve(cfg.camera)
    generate_dataset(cfg.scene, drops, cfg.detector, cfg.camera, args.out_dir,
                     manifest={"seed": cfg.seed, "config": to_dict(cfg)})
    print(f"wrote {cfg.camera.n_views} views to {args.out_dir}")
    return 0


def cmd_mask(args) -> int:
    cfg = resolve_config(args)
    n = io.frame_count(args.dataset)
    for i in range(n):
        if not (args.dataset / io.ATTENTION.format(i)).is_file():
            raise DatasetIOError(f"attention map for frame {i} missing: {args.dataset / io.ATTENTION.format(i)}")
    if (args.dataset / io.PRED_MASK.format(0)).exists() and not args.force:
        raise ConfigError(f"{args.dataset}/masks already holds predicted masks (use --force)")
    ds = io.load_dataset(args.dataset, need=("attention",))
    pred = pipeline.predict_masks(ds.attention, cfg.mask)
    report = pipeline.coverage_report(pred, ds.true_masks)
    pipeline.write_mask_outputs(args.dataset, pred, report)
    for row in report:
        extra = f"  iou {row['iou']:.3f}" if "iou" in row else ""
        print(f"frame {row['frame']:4d}  coverage {row['coverage']:.3f}{extra}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    need = () if args.no_mask else ("pred_masks",)
    if not args.no_mask and not (args.dataset / io.PRED_MASK.format(0)).exists():
        raise DatasetIOError(f"{args.dataset}: no predicted masks; run `dropnerf mask` first or pass --no-mask")
    ds = io.load_dataset(args.dataset, need=need)
    _refuse_existing(args.out, args.force)
    masks = None if args.no_mask else ds.pred_masks
    result = pipeline.fit(ds, masks, cfg.train, cfg.model, _progress)
    ckpt = pipeline.save_run(args.out, result, cfg.train, cfg.model, masked=masks is not None)
    print(f"wrote {ckpt}")
    return 0


def cmd_render(args) -> int:
    if not args.checkpoint.is_file():
        raise DatasetIOError(f"checkpoint not found: {args.checkpoint}")
    io.read_poses(args.poses)
    _refuse_existing(args.out_dir, args.force)
    paths = pipeline.render_checkpoint(args.checkpoint, args.poses, args.out_dir, args.samples)
    print(f"wrote {len(paths)} renders to {args.out_dir}")
    return 0


def cmd_eval(args) -> int:
    rendered = pipeline.load_rendered(args.rendered)
    n = rendered.shape[0]
    clean = np.stack([io.read_ppm(args.clean / Path(io.CLEAN.format(i)).name) for i in range(n)])
    truth = None
    if args.truth is not None:
        truth = np.stack([io.read_mask(args.truth / Path(io.TRUE_MASK.format(i)).name) for i in range(n)])
    out = args.out or args.rendered / "metrics.csv"
    if out.exists() and not args.force:
        raise ConfigError(f"{out} exists (use --force)")
    scores = pipeline.score_views(rendered, clean, truth)
    pipeline.write_scores(out, scores)
    agg = pipeline.summarize(scores)
    mp = "" if agg["masked_psnr"] is None else f"  masked PSNR {agg['masked_psnr']:.3f}"
    print(f"mean PSNR {agg['psnr']:.3f}  SSIM {agg['ssim']:.4f}{mp}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    ds = io.load_dataset(args.dataset, need=("attention", "clean"))
    _refuse_existing(args.out, args.force)
    rows = []
    for label, enhance in (("no enhancement", False), ("full", True)):
        mcfg = dataclasses.replace(cfg.mask, enhancement=enhance)
        masks = pipeline.predict_masks(ds.attention, mcfg)
        print(f"[{label}] mask coverage {masks.mean():.3f}", flush=True)
        result = pipeline.fit(ds, masks, cfg.train, cfg.model, _progress)
        run_dir = args.out / ("with_enhancement" if enhance else "without_enhancement")
        pipeline.save_run(run_dir, result, cfg.train, cfg.model, masked=True)
        renders = pipeline.render_all(result.state.params, cfg.model, ds.intrinsics, ds.poses, ds.t_near,
                                      ds.t_far, cfg.train.samples_per_ray, cfg.train.background)
        for i, img in enumerate(renders):
            io.write_ppm(run_dir / io.RENDER.format(i), img)
        scores = pipeline.score_views(renders, ds.clean, ds.true_masks)
        pipeline.write_scores(run_dir / "metrics.csv", scores)
        rows.append((label, pipeline.summarize(scores)))
    table = ["method,psnr,ssim,lpips"]
    for label, agg in rows:
        table.append(f"{label},{agg['psnr']:.4f},{agg['ssim']:.4f},unsupported")
    (args.out / "ablation.csv").write_text("\n".join(table) + "\n")
    print("\n".join(table))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "mask": cmd_mask,
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
