"""Masked photometric training of the radiance field with Adam.

Masked pixels never enter the ray set, which is equivalent to multiplying
their residuals by zero: the loss is the mean squared color error over the
unmasked rays of each batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamVector, Var
from .camera import Intrinsics, Pose, image_rays
from .errors import ConfigError, NumericalError
from .field import FieldConfig, init_params, save_checkpoint
from .render import ray_rng, render_rays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 512
    lr_start: float = 5e-3
    lr_end: float = 5e-4
    samples_per_ray: int = 64
    jitter: bool = True
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 1000
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        if not (0 < self.lr_end <= self.lr_start):
            raise ValueError("learning rates must satisfy 0 < lr_end <= lr_start")
        if self.samples_per_ray < 1:
            raise ValueError("samples_per_ray must be >= 1")


@dataclass
class RayDataset:
    origins: np.ndarray  # (M, 3)
    dirs: np.ndarray  # (M, 3)
    targets: np.ndarray  # (M, 3)
    frames: np.ndarray  # (M,) frame index
    pixels: np.ndarray  # (M,) row-major pixel index within the frame

    def __len__(self) -> int:
        return self.targets.shape[0]


def build_ray_dataset(
    images: np.ndarray, masks: Optional[np.ndarray], intr: Intrinsics, poses: Sequence[Pose]
) -> RayDataset:
    """One entry per unmasked pixel; targets are the (degraded) input colors.

    ``masks=None`` keeps every pixel (the unmasked baseline).
    """
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape[:3]
    if len(poses) != n:
        raise ConfigError(f"{n} images but {len(poses)} poses")
    if masks is not None:
        masks = np.asarray(masks)
        if masks.shape != (n, h, w):
            raise ConfigError(f"mask stack {masks.shape} does not match images {(n, h, w)}")
        if masks.all():
            coverage = ", ".join(f"{i}: {masks[i].mean():.0%}" for i in range(n))
            raise ConfigError(f"every pixel is masked; per-frame coverage {coverage}")
    parts = ([], [], [], [], [])
    for i, pose in enumerate(poses):
        o, d = image_rays(intr, pose)
        keep = np.ones(h * w, dtype=bool) if masks is None else masks[i].ravel() == 0
        idx = np.flatnonzero(keep)
        parts[0].append(o.reshape(-1, 3)[idx])
        parts[1].append(d.reshape(-1, 3)[idx])
        parts[2].append(images[i].reshape(-1, 3)[idx])
        parts[3].append(np.full(idx.size, i, dtype=np.int64))
        parts[4].append(idx)
    return RayDataset(*(np.concatenate(p) for p in parts))


def loss_mse(rendered, targets) -> Var:
    """Mean over rays of the squared RGB distance."""
    rendered = ad.as_var(rendered)
    targets = np.asarray(targets, dtype=np.float64)
    if rendered.shape != targets.shape or rendered.shape[0] < 1:
        raise ValueError("rendered and target batches must match and be non-empty")
    return ad.squared_norm(rendered - targets) / float(rendered.shape[0])


def lr_schedule(cfg: TrainConfig, iteration: int) -> float:
    if not (0 <= iteration <= cfg.iterations):
        raise ValueError("iteration out of range")
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (iteration / cfg.iterations)


@dataclass
class TrainState:
    params: ParamVector
    m: np.ndarray
    v: np.ndarray
    iteration: int = 0

    @classmethod
    def fresh(cls, params: ParamVector) -> "TrainState":
        return cls(params, np.zeros_like(params.values), np.zeros_like(params.values), 0)


def _offending_slice(grad: ParamVector) -> str:
    for name, (lo, hi) in grad.offsets().items():
        if not np.all(np.isfinite(grad.values[lo:hi])):
            return name
    return "?"


def adam_step(state: TrainState, grad: ParamVector, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> TrainState:
    g = grad.values
    if g.shape != state.params.values.shape:
        raise ValueError("gradient layout does not match the parameters")
    if not np.all(np.isfinite(g)):
        raise NumericalError(
            f"non-finite gradient at iteration {state.iteration} in slice {_offending_slice(grad)!r}"
        )
    t = state.iteration + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    values = state.params.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return TrainState(state.params.with_values(values), m, v, t)


def batch_loss(params, field_cfg: FieldConfig, rays: RayDataset, idx: np.ndarray, cfg: TrainConfig,
               t_near: float, t_far: float, iteration: int) -> Var:
    rngs = [ray_rng(cfg.seed, iteration, k) for k in idx] if cfg.jitter else None
    out = render_rays(
        params, field_cfg, rays.origins[idx], rays.dirs[idx], t_near, t_far,
        cfg.samples_per_ray, cfg.jitter, rngs, cfg.background,
    )
    return loss_mse(out.color, rays.targets[idx])


class BatchSampler:
    """Epoch-shuffled batches without replacement.

    A batch that runs past the end of an epoch is completed from the next
    epoch's permutation. Batches never exceed the dataset size.
    """

    def __init__(self, size: int, batch: int, seed: int):
        self.size = size
        self.batch = min(batch, size)
        self.seed = seed
        self.epoch = 0
        self._perm = self._permutation(0)
        self._pos = 0

    def _permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, 1, epoch]).permutation(self.size)

    def next(self) -> np.ndarray:
        take = []
        need = self.batch
        while need:
            chunk = self._perm[self._pos : self._pos + need]
            take.append(chunk)
            self._pos += chunk.size
            need -= chunk.size
            if self._pos == self.size:
                self.epoch += 1
                self._perm = self._permutation(self.epoch)
                self._pos = 0
        return np.concatenate(take)


@dataclass
class TrainResult:
    state: TrainState
    history: list[tuple[int, float, float]] = field(default_factory=list)


def train(
    rays: RayDataset,
    cfg: TrainConfig,
    field_cfg: FieldConfig,
    t_near: float,
    t_far: float,
    progress: Optional[Callable[[int, float, float], None]] = None,
    checkpoint_dir=None,
) -> TrainResult:
    """Run ``cfg.iterations`` Adam steps; fully deterministic in ``cfg.seed``."""
    if len(rays) == 0:
        raise ConfigError("the ray dataset is empty")
    state = TrainState.fresh(init_params(field_cfg, cfg.seed))
    sampler = BatchSampler(len(rays), cfg.batch_rays, cfg.seed)
    history = []
    for it in range(cfg.iterations):
        lr = lr_schedule(cfg, it)
        idx = sampler.next()
        tp = state.params.traced()
        loss = batch_loss(tp, field_cfg, rays, idx, cfg, t_near, t_far, it)
        loss_value = float(loss.value)
        if not np.isfinite(loss_value):
            raise NumericalError(f"non-finite loss at iteration {it}")
        grad = ad.backward(loss, tp)
        state = adam_step(state, grad, lr, cfg.beta1, cfg.beta2, cfg.eps)
        history.append((it, lr, loss_value))
        if progress is not None and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            progress(it, lr, loss_value)
        if checkpoint_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"ckpt_{it + 1:06d}.bin", state.params, field_cfg, cfg.seed, it + 1)
    return TrainResult(state, history)


def write_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,lr,loss\n")
        for it, lr, loss in history:
            fh.write(f"{it},{lr!r},{loss!r}\n")
