"""Synthetic multi-view scenes with adhesive waterdrops.

The clean scene is ray traced in closed form (spheres over a checkered
ground tile, Lambert shading). Drops are ellipses that either stay at fixed
pixel positions (``lens_fixed``) or sit on a world-space glass plane and are
projected into each view (``scene_fixed``). Inside a drop the image is mixed
with a point-reflected, half-scaled copy of the neighbourhood plus a
brightness offset; outside a drop the image is untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .camera import Intrinsics, Pose, image_rays, look_at, project


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, float, float]

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        _check_color(self.color)


@dataclass(frozen=True)
class GroundPlane:
    height: float = -0.8
    color_a: tuple[float, float, float] = (0.9, 0.9, 0.85)
    color_b: tuple[float, float, float] = (0.25, 0.3, 0.35)
    period: float = 0.5
    extent: Optional[float] = 1.3  # half-size of the square tile; None for an infinite plane

    def __post_init__(self):
        _check_color(self.color_a)
        _check_color(self.color_b)
        if self.period <= 0:
            raise ValueError("checker period must be positive")


def _check_color(c):
    if len(c) != 3 or any(not (0.0 <= x <= 1.0) for x in c):
        raise ValueError(f"color {c} must be three values in [0, 1]")


def _default_spheres() -> tuple[Sphere, ...]:
    return (
        Sphere((0.0, -0.15, 0.0), 0.65, (0.85, 0.3, 0.2)),
        Sphere((0.85, -0.5, 0.55), 0.3, (0.2, 0.6, 0.85)),
        Sphere((-0.8, -0.45, -0.5), 0.35, (0.3, 0.8, 0.35)),
        Sphere((-0.45, -0.6, 0.85), 0.2, (0.95, 0.85, 0.2)),
    )


@dataclass(frozen=True)
class SceneSpec:
    spheres: tuple[Sphere, ...] = field(default_factory=_default_spheres)
    ground: Optional[GroundPlane] = field(default_factory=GroundPlane)
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    light_direction: tuple[float, float, float] = (0.4, 0.8, 0.45)
    ambient: float = 0.35

    def __post_init__(self):
        _check_color(self.background)
        if not (0.0 <= self.ambient <= 1.0):
            raise ValueError("ambient must lie in [0, 1]")
        if np.linalg.norm(self.light_direction) == 0:
            raise ValueError("light direction must be non-zero")

    @property
    def light(self) -> np.ndarray:
        l = np.asarray(self.light_direction, dtype=np.float64)
        return l / np.linalg.norm(l)


def trace(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Shade rays (..., 3): nearest sphere or ground hit, background on a miss."""
    shape = origins.shape[:-1]
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    n = o.shape[0]
    best_t = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.tile(np.asarray(scene.background, dtype=np.float64), (n, 1))
    eps = 1e-9

    for s in scene.spheres:
        c = np.asarray(s.center, dtype=np.float64)
        oc = o - c
        b = np.einsum("ij,ij->i", oc, d)
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - s.radius**2)
        root = np.sqrt(np.maximum(disc, 0.0))
        t = np.where(-b - root > eps, -b - root, -b + root)
        hit = (disc >= 0) & (t > eps) & (t < best_t)
        best_t[hit] = t[hit]
        p = o[hit] + t[hit, None] * d[hit]
        normal[hit] = (p - c) / s.radius
        albedo[hit] = s.color

    g = scene.ground
    if g is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (g.height - o[:, 1]) / d[:, 1]
        p = o + np.nan_to_num(t, nan=0.0, posinf=0.0, neginf=0.0)[:, None] * d
        hit = np.isfinite(t) & (t > eps) & (t < best_t)
        if g.extent is not None:
            hit &= (np.abs(p[:, 0]) <= g.extent) & (np.abs(p[:, 2]) <= g.extent)
        best_t[hit] = t[hit]
        checker = (np.floor(p[:, 0] / g.period) + np.floor(p[:, 2] / g.period)).astype(np.int64) % 2
        tile = np.where(checker[:, None] == 0, np.asarray(g.color_a), np.asarray(g.color_b))
        normal[hit] = (0.0, 1.0, 0.0)
        albedo[hit] = tile[hit]

    hit_any = np.isfinite(best_t)
    lambert = np.maximum(0.0, normal @ scene.light)
    shade = scene.ambient + (1.0 - scene.ambient) * lambert
    out = np.where(hit_any[:, None], albedo * shade[:, None], albedo)
    return out.reshape(shape + (3,))


def render_clean(scene: SceneSpec, intr: Intrinsics, pose: Pose) -> np.ndarray:
    o, d = image_rays(intr, pose)
    return np.clip(trace(scene, o, d), 0.0, 1.0)


# waterdrops ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Drop:
    center: tuple[float, float]  # pixels (lens_fixed) or glass-plane coordinates (scene_fixed)
    radii: tuple[float, float]
    distortion: float = 0.8
    brightness: float = 0.25

    def __post_init__(self):
        if min(self.radii) <= 0:
            raise ValueError("drop radii must be positive")
        if not (0.0 <= self.distortion <= 1.0):
            raise ValueError("distortion strength must lie in [0, 1]")


@dataclass(frozen=True)
class GlassPlane:
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    distance: float = 2.2

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(helper, n)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return n, e1, e2


@dataclass(frozen=True)
class DropSpec:
    mode: str = "lens_fixed"
    drops: tuple[Drop, ...] = ()
    glass: Optional[GlassPlane] = None

    def __post_init__(self):
        if self.mode not in ("lens_fixed", "scene_fixed"):
            raise ValueError("drop mode must be 'lens_fixed' or 'scene_fixed'")
        if self.mode == "scene_fixed" and self.glass is None:
            object.__setattr__(self, "glass", GlassPlane())


def random_drops(
    count: int,
    seed: int,
    span: tuple[float, float],
    radius_range: tuple[float, float],
    distortion: float = 0.8,
    brightness_range: tuple[float, float] = (0.2, 0.35),
    origin: tuple[float, float] = (0.0, 0.0),
    max_aspect: float = 1.4,
) -> tuple[Drop, ...]:
    """Drops with centers uniform over ``origin + [0, span)``.

    Brightness offsets alternate in sign so drops both lighten and darken.
    """
    rng = np.random.default_rng([int(seed), 7919])
    drops = []
    for k in range(count):
        cx = origin[0] + rng.uniform(0, span[0])
        cy = origin[1] + rng.uniform(0, span[1])
        r = rng.uniform(*radius_range)
        aspect = rng.uniform(1.0, max_aspect)
        radii = (r * aspect, r / aspect) if rng.random() < 0.5 else (r / aspect, r * aspect)
        shift = rng.uniform(*brightness_range) * (1 if k % 2 == 0 else -1)
        drops.append(Drop((float(cx), float(cy)), (float(radii[0]), float(radii[1])), distortion, float(shift)))
    return tuple(drops)


def drop_footprints(drops: DropSpec, intr: Intrinsics, pose: Pose) -> list[tuple[Drop, np.ndarray, np.ndarray]]:
    """Pixel-space (center, radii) of every drop visible in this view."""
    out = []
    if drops.mode == "lens_fixed":
        for d in drops.drops:
            out.append((d, np.asarray(d.center, dtype=np.float64), np.asarray(d.radii, dtype=np.float64)))
        return out
    n, e1, e2 = drops.glass.basis()
    # only cameras on the far side of the glass look through it
    if float(n @ pose.translation) <= drops.glass.distance:
        return out
    for d in drops.drops:
        world = n * drops.glass.distance + d.center[0] * e1 + d.center[1] * e2
        pix, depth = project(intr, pose, world[None])
        if depth[0] <= 1e-6:
            continue
        radii = np.asarray(d.radii) * np.array([intr.fx, intr.fy]) / depth[0]
        out.append((d, pix[0], radii))
    return out


def apply_drops(clean: np.ndarray, drops: DropSpec, intr: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Degrade a clean view. Returns (degraded image, truth mask)."""
    h, w = clean.shape[:2]
    v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    px, py = u + 0.5, v + 0.5
    out = clean.copy()
    truth = np.zeros((h, w), dtype=np.uint8)
    for d, c, r in drop_footprints(drops, intr, pose):
        inside = ((px - c[0]) / r[0]) ** 2 + ((py - c[1]) / r[1]) ** 2 <= 1.0
        if not inside.any():
            continue
        # reflect through the drop center and halve the offset
        sx = np.clip(np.floor(c[0] - 0.5 * (px[inside] - c[0])).astype(np.int64), 0, w - 1)
        sy = np.clip(np.floor(c[1] - 0.5 * (py[inside] - c[1])).astype(np.int64), 0, h - 1)
        s = d.distortion
        mixed = (1.0 - s) * clean[inside] + s * clean[sy, sx] + d.brightness
        out[inside] = np.clip(mixed, 0.0, 1.0)
        truth[inside] = 1
    return out, truth


# detector simulation ------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorSpec:
    blur_radius: int = 1
    noise_amplitude: float = 0.05
    p_miss: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_miss < 1.0):
            raise ValueError("p_miss must lie in [0, 1)")
        if not (0.0 <= self.noise_amplitude <= 0.2):
            raise ValueError("noise_amplitude must lie in [0, 0.2]")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")


def box_blur(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.astype(np.float64)
    size = 2 * radius + 1
    counts = ndimage.correlate(mask.astype(np.int64), np.ones((size, size), dtype=np.int64), mode="nearest")
    return counts / float(size * size)


def simulate_attention(truth: np.ndarray, det: DetectorSpec, frame_index: int) -> np.ndarray:
    """Soft attention map emulating a drop detector that sometimes misses whole drops."""
    truth = np.asarray(truth).astype(bool)
    labels, n_drops = ndimage.label(truth, structure=np.ones((3, 3)))
    kept = np.zeros(truth.shape, dtype=bool)
    for k in range(1, n_drops + 1):
        miss = np.random.default_rng([det.seed, frame_index, k]).random() < det.p_miss
        if not miss:
            kept |= labels == k
    att = box_blur(kept, det.blur_radius)
    if det.noise_amplitude > 0:
        noise_rng = np.random.default_rng([det.seed, frame_index, 0])
        att = att + noise_rng.uniform(-det.noise_amplitude, det.noise_amplitude, size=att.shape)
    return np.clip(att, 0.0, 1.0)


# datasets -------------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraRing:
    n_views: int = 20
    radius: float = 4.0
    elevation: float = 30.0
    arc: float = 360.0  # degrees of azimuth covered; 360 closes the ring
    width: int = 64
    height: int = 64
    fov: float = 40.0
    near: float = 2.0
    far: float = 6.0

    def __post_init__(self):
        if self.n_views < 2:
            raise ValueError("a camera ring needs at least 2 views")
        if not (0 < self.arc <= 360):
            raise ValueError("arc must lie in (0, 360]")
        if not (0 <= self.near < self.far):
            raise ValueError("need 0 <= near < far")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_fov(self.width, self.height, self.fov)

    def poses(self) -> list[Pose]:
        elev = np.radians(self.elevation)
        if self.arc == 360:
            az = np.radians(360.0) * np.arange(self.n_views) / self.n_views
        else:
            az = np.radians(self.arc) * (np.arange(self.n_views) / (self.n_views - 1) - 0.5)
        out = []
        for a in az:
            eye = self.radius * np.array([np.cos(elev) * np.sin(a), np.sin(elev), np.cos(elev) * np.cos(a)])
            out.append(look_at(eye, (0.0, 0.0, 0.0)))
        return out


def render_frames(scene: SceneSpec, drops: DropSpec, det: DetectorSpec, ring: CameraRing):
    """Clean, degraded, attention and truth stacks for every ring view (floats, unquantized)."""
    intr = ring.intrinsics()
    poses = ring.poses()
    clean, degraded, attention, truth = [], [], [], []
    for i, pose in enumerate(poses):
        c = render_clean(scene, intr, pose)
        d, t = apply_drops(c, drops, intr, pose)
        clean.append(c)
        degraded.append(d)
        truth.append(t)
        attention.append(simulate_attention(t, det, i))
    return intr, poses, np.stack(clean), np.stack(degraded), np.stack(attention), np.stack(truth)


def generate_dataset(scene: SceneSpec, drops: DropSpec, det: DetectorSpec, ring: CameraRing, out_dir,
                     manifest: Optional[dict] = None) -> Path:
    """Write a full dataset tree (see :mod:`dropnerf.dataset` for the layout)."""
    from . import dataset as io

    out = Path(out_dir)
    intr, poses, clean, degraded, attention, truth = render_frames(scene, drops, det, ring)
    for sub in ("images", "attention", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i in range(len(poses)):
        io.write_ppm(out / io.CLEAN.format(i), clean[i])
        io.write_ppm(out / io.DEGRADED.format(i), degraded[i])
        io.write_pgm(out / io.ATTENTION.format(i), attention[i])
        io.write_mask(out / io.TRUE_MASK.format(i), truth[i])
    io.write_poses(out / io.POSES_FILE, intr, poses, ring.near, ring.far)
    doc = {"frames": len(poses), "seed": det.seed, "truth_coverage": float(truth.mean())}
    doc.update(manifest or {})
    (out / io.MANIFEST_FILE).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return out
