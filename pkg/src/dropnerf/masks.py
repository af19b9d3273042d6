"""Attention maps to binary waterdrop masks.

Masks use 1 for drop-covered pixels (excluded from training) and 0 for
clean pixels. Attention maps are float arrays in [0, 1] of shape (H, W).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class MaskConfig:
    threshold: float = 0.3
    dilation_radius: int = 2
    enhancement: bool = True

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.dilation_radius < 0:
            raise ValueError("dilation radius must be >= 0")


def binarize(attention: np.ndarray, threshold: float) -> np.ndarray:
    """1 where attention >= threshold. Ties are masked."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie strictly between 0 and 1")
    return (np.asarray(attention) >= threshold).astype(np.uint8)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Grow a mask by a (2r+1)-square structuring element."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=np.uint8)
    if radius == 0:
        return mask.copy()
    # edge replication never adds pixels under a max filter, so this is the clamped definition
    return ndimage.maximum_filter(mask, size=2 * radius + 1, mode="nearest")


def mean_attention(maps: Sequence[np.ndarray]) -> np.ndarray:
    if len(maps) == 0:
        raise ValueError("need at least one attention map")
    shape = np.shape(maps[0])
    if any(np.shape(m) != shape for m in maps):
        raise ValueError("attention maps differ in size")
    return np.mean(np.stack([np.asarray(m, dtype=np.float64) for m in maps]), axis=0)


def enhance_masks(maps: Sequence[np.ndarray], cfg: MaskConfig) -> list[np.ndarray]:
    """Per-frame masks, optionally OR-ed with the mask of the mean attention map.

    Dilation happens once per frame, after the OR.
    """
    if len(maps) == 0:
        raise ValueError("need at least one attention map")
    shared = binarize(mean_attention(maps), cfg.threshold) if cfg.enhancement else None
    out = []
    for a in maps:
        m = binarize(a, cfg.threshold)
        if shared is not None:
            m = m | shared
        out.append(dilate(m, cfg.dilation_radius))
    return out


@dataclass(frozen=True)
class MaskStats:
    coverage: float
    iou: float
    missed: int


def mask_stats(mask: np.ndarray, truth: np.ndarray) -> MaskStats:
    """Coverage of ``mask``, its IoU with ``truth`` and the number of truth pixels it misses."""
    mask = np.asarray(mask).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if mask.shape != truth.shape:
        raise ValueError("mask and truth differ in size")
    union = np.count_nonzero(mask | truth)
    inter = np.count_nonzero(mask & truth)
    iou = 1.0 if union == 0 else inter / union
    return MaskStats(float(mask.mean()), float(iou), int(np.count_nonzero(truth & ~mask)))
