"""End-to-end steps shared by the command line and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import dataset as io
from .camera import Intrinsics, Pose
from .dataset import Dataset
from .errors import ConfigError, DatasetIOError
from .field import FieldConfig, load_checkpoint, save_checkpoint
from .masks import MaskConfig, enhance_masks, mask_stats
from .metrics import masked_psnr, psnr, ssim
from .render import render_view
from .trainer import TrainConfig, TrainResult, build_ray_dataset, train, write_history

log = logging.getLogger(__name__)


def predict_masks(attention: np.ndarray, cfg: MaskConfig) -> np.ndarray:
    return np.stack(enhance_masks(list(attention), cfg))


def coverage_report(pred: np.ndarray, truth: Optional[np.ndarray]) -> list[dict]:
    rows = []
    for i in range(pred.shape[0]):
        row = {"frame": i, "coverage": float(pred[i].mean())}
        if truth is not None:
            s = mask_stats(pred[i], truth[i])
            row.update(iou=s.iou, missed=s.missed)
        rows.append(row)
    return rows


def write_mask_outputs(root: Path, pred: np.ndarray, report: list[dict]) -> None:
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(pred.shape[0]):
        io.write_mask(root / io.PRED_MASK.format(i), pred[i])
    keys = list(report[0])
    with open(root / "masks" / "report.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in report:
            fh.write(",".join(_fmt(row[k]) for k in keys) + "\n")


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def fit(
    ds: Dataset,
    masks: Optional[np.ndarray],
    train_cfg: TrainConfig,
    field_cfg: FieldConfig,
    progress: Optional[Callable] = None,
    checkpoint_dir=None,
) -> TrainResult:
    """Train on the degraded images, skipping pixels where ``masks`` is 1."""
    rays = build_ray_dataset(ds.degraded, masks, ds.intrinsics, ds.poses)
    log.info("training on %d rays (%d frames)", len(rays), ds.n_frames)
    return train(rays, train_cfg, field_cfg, ds.t_near, ds.t_far, progress, checkpoint_dir)


def save_run(out: Path, result: TrainResult, train_cfg: TrainConfig, field_cfg: FieldConfig, masked: bool) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "final.ckpt"
    extra = {"train": asdict(train_cfg), "masked": masked}
    save_checkpoint(ckpt, result.state.params, field_cfg, train_cfg.seed, result.state.iteration, extra)
    write_history(out / "loss.csv", result.history)
    return ckpt


def render_all(params, field_cfg: FieldConfig, intr: Intrinsics, poses: Sequence[Pose], t_near: float,
               t_far: float, n_samples: int, background) -> np.ndarray:
    return np.stack([render_view(params, field_cfg, intr, p, t_near, t_far, n_samples, background) for p in poses])


def render_checkpoint(ckpt, poses_file, out_dir: Path, n_samples: Optional[int] = None) -> list[Path]:
    params, field_cfg, header = load_checkpoint(ckpt)
    intr, poses, t_near, t_far = io.read_poses(poses_file)
    tcfg = header.get("extra", {}).get("train", {})
    n = n_samples or tcfg.get("samples_per_ray", 64)
    background = tuple(tcfg.get("background", (1.0, 1.0, 1.0)))
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, pose in enumerate(poses):
        img = render_view(params, field_cfg, intr, pose, t_near, t_far, n, background)
        path = out_dir / io.RENDER.format(i)
        io.write_ppm(path, img)
        paths.append(path)
    return paths


@dataclass
class ViewScores:
    view: int
    psnr: float
    ssim: float
    masked_psnr: Optional[float]


def score_views(rendered: np.ndarray, clean: np.ndarray, truth: Optional[np.ndarray] = None) -> list[ViewScores]:
    """Metrics per view; images are compared after 8-bit quantization."""
    out = []
    for i in range(rendered.shape[0]):
        a = io.dequantize(io.quantize(rendered[i]))
        b = io.dequantize(io.quantize(clean[i]))
        mp = None
        if truth is not None and truth[i].any():
            mp = masked_psnr(a, b, truth[i])
        out.append(ViewScores(i, psnr(a, b), ssim(a, b), mp))
    return out


def summarize(scores: Sequence[ViewScores]) -> dict:
    mp = [s.masked_psnr for s in scores if s.masked_psnr is not None]
    return {
        "psnr": float(np.mean([s.psnr for s in scores])),
        "ssim": float(np.mean([s.ssim for s in scores])),
        "masked_psnr": float(np.mean(mp)) if mp else None,
    }


def write_scores(path: Path, scores: Sequence[ViewScores]) -> None:
    agg = summarize(scores)
    with open(path, "w") as fh:
        fh.write("view,psnr,ssim,masked_psnr\n")
        for s in scores:
            mp = "" if s.masked_psnr is None else f"{s.masked_psnr:.6f}"
            fh.write(f"{s.view},{s.psnr:.6f},{s.ssim:.6f},{mp}\n")
        mp = "" if agg["masked_psnr"] is None else f"{agg['masked_psnr']:.6f}"
        fh.write(f"mean,{agg['psnr']:.6f},{agg['ssim']:.6f},{mp}\n")


def load_rendered(rendered_dir: Path, n: Optional[int] = None) -> np.ndarray:
    files = sorted(rendered_dir.glob("render_*.ppm"))
    if not files:
        raise DatasetIOError(f"no render_*.ppm files in {rendered_dir}")
    if n is not None and len(files) != n:
        raise ConfigError(f"{rendered_dir}: expected {n} renders, found {len(files)}")
    return np.stack([io.read_ppm(f) for f in files])
