"""Dataset directory layout and image/pose file formats.

::

    <root>/
      poses.json                 intrinsics, near/far bounds, camera-to-world 4x4 per frame
      manifest.json              seed, config echo, frame count
      images/clean_%04d.ppm      binary PPM (P6), 8-bit
      images/degraded_%04d.ppm
      attention/att_%04d.pgm     binary PGM (P5), 8-bit, attention * 255
      masks/true_%04d.pgm        0 / 255
      masks/pred_%04d.pgm        written by the ``mask`` command

Images are float arrays in [0, 1] in memory and 8-bit on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .camera import Intrinsics, Pose
from .errors import ConfigError, DatasetIOError

POSES_FILE = "poses.json"
MANIFEST_FILE = "manifest.json"
CLEAN = "images/clean_{:04d}.ppm"
DEGRADED = "images/degraded_{:04d}.ppm"
ATTENTION = "attention/att_{:04d}.pgm"
TRUE_MASK = "masks/true_{:04d}.pgm"
PRED_MASK = "masks/pred_{:04d}.pgm"
RENDER = "render_{:04d}.ppm"


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0


def write_ppm(path, img: np.ndarray) -> None:
    Image.fromarray(quantize(img)).save(path, format="PPM")


def write_pgm(path, img: np.ndarray) -> None:
    Image.fromarray(quantize(img)).save(path, format="PPM")


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path, format="PPM")


def _read(path, mode: str) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            if im.mode != mode:
                raise DatasetIOError(f"{path}: expected {mode} image, found {im.mode}")
            return np.asarray(im)
    except OSError as exc:
        if isinstance(exc, DatasetIOError):
            raise
        raise DatasetIOError(f"{path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    return dequantize(_read(path, "RGB"))


def read_pgm(path) -> np.ndarray:
    return dequantize(_read(path, "L"))


def read_mask(path) -> np.ndarray:
    return (_read(path, "L") >= 128).astype(np.uint8)


# poses -------------------------------------------------------------------------------

def write_poses(path, intr: Intrinsics, poses: list[Pose], t_near: float, t_far: float) -> None:
    doc = {
        "convention": "camera_to_world",
        "matrix_order": "row_major",
        "camera_axes": "x_right_y_up_looking_down_negative_z",
        "intrinsics": intr.to_dict(),
        "near": float(t_near),
        "far": float(t_far),
        "frames": [{"index": i, "transform": [float(x) for x in p.matrix().ravel()]} for i, p in enumerate(poses)],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_poses(path) -> tuple[Intrinsics, list[Pose], float, float]:
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError(f"missing pose file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("convention") != "camera_to_world" or doc.get("matrix_order") != "row_major":
        raise ConfigError(f"{path}: poses must be declared camera_to_world and row_major")
    try:
        intr = Intrinsics(**doc["intrinsics"])
        poses = [Pose.from_matrix(f["transform"]) for f in doc["frames"]]
        t_near, t_far = float(doc["near"]), float(doc["far"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed pose file ({exc})") from exc
    if not (0 <= t_near < t_far):
        raise ConfigError(f"{path}: need 0 <= near < far")
    return intr, poses, t_near, t_far


# datasets ----------------------------------------------------------------------------

@dataclass
class Dataset:
    intrinsics: Intrinsics
    poses: list[Pose]
    t_near: float
    t_far: float
    degraded: np.ndarray  # (n, H, W, 3)
    clean: Optional[np.ndarray] = None
    attention: Optional[np.ndarray] = None  # (n, H, W)
    true_masks: Optional[np.ndarray] = None
    pred_masks: Optional[np.ndarray] = None
    manifest: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.poses)


def frame_count(root) -> int:
    root = Path(root)
    _, poses, _, _ = read_poses(root / POSES_FILE)
    return len(poses)


def _stack(root: Path, pattern: str, n: int, reader) -> np.ndarray:
    return np.stack([reader(root / pattern.format(i)) for i in range(n)])


def _optional(root: Path, pattern: str, n: int, reader) -> Optional[np.ndarray]:
    if not (root / pattern.format(0)).parent.is_dir() or not (root / pattern.format(0)).exists():
        return None
    return _stack(root, pattern, n, reader)


def load_dataset(root, need: tuple[str, ...] = ()) -> Dataset:
    """Load a dataset directory. ``need`` lists parts that must be present
    (any of "clean", "attention", "true_masks", "pred_masks")."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetIOError(f"dataset directory not found: {root}")
    intr, poses, t_near, t_far = read_poses(root / POSES_FILE)
    n = len(poses)
    degraded = _stack(root, DEGRADED, n, read_ppm)
    parts = {
        "clean": (CLEAN, read_ppm),
        "attention": (ATTENTION, read_pgm),
        "true_masks": (TRUE_MASK, read_mask),
        "pred_masks": (PRED_MASK, read_mask),
    }
    loaded = {}
    for name, (pattern, reader) in parts.items():
        loaded[name] = _stack(root, pattern, n, reader) if name in need else _optional(root, pattern, n, reader)
    manifest = {}
    if (root / MANIFEST_FILE).is_file():
        manifest = json.loads((root / MANIFEST_FILE).read_text())
    ds = Dataset(intr, poses, t_near, t_far, degraded, manifest=manifest, **loaded)
    if degraded.shape[1:3] != (intr.height, intr.width):
        raise ConfigError(f"{root}: image size does not match the intrinsics")
    return ds
