"""Pinhole camera model.

Convention: right-handed camera frame, the camera looks down -z, +x is image
right and +y is image up (so image rows grow along -y). Pixel (u, v) has its
center at (u + 0.5, v + 0.5). Poses are camera-to-world.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "Intrinsics":
        f = 0.5 * width / np.tan(0.5 * np.radians(fov_x_deg))
        return cls(width, height, f, f, width / 2.0, height / 2.0)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
        }


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("ray bounds must satisfy 0 <= t_near < t_far")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")


def camera_directions(intr: Intrinsics, u, v) -> np.ndarray:
    """Unit camera-frame directions through pixel centers (u, v)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.stack(
        [(u + 0.5 - intr.cx) / intr.fx, -(v + 0.5 - intr.cy) / intr.fy, -np.ones_like(u)],
        axis=-1,
    )
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_to_ray(intr: Intrinsics, pose: Pose, u: int, v: int, t_near: float, t_far: float) -> Ray:
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    d = pose.rotation @ camera_directions(intr, u, v)
    d = d / np.linalg.norm(d)
    return Ray(pose.translation.copy(), d, float(t_near), float(t_far))


def image_rays(intr: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for every pixel, shaped (H, W, 3), row-major."""
    v, u = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    d = camera_directions(intr, u, v) @ pose.rotation.T
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return o, d


def project(intr: Intrinsics, pose: Pose, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates (x right, y down) and camera depth of world points."""
    pc = pose.world_to_camera(points)
    depth = -pc[..., 2]
    x = intr.cx + intr.fx * pc[..., 0] / depth
    y = intr.cy - intr.fy * pc[..., 1] / depth
    return np.stack([x, y], axis=-1), depth


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    if np.linalg.norm(forward) < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9 * max(np.linalg.norm(up), 1.0):
        raise ValueError("up vector is parallel to the viewing direction")
    right = right / np.linalg.norm(right)
    true_up = np.cross(right, forward)
    rotation = np.stack([right, true_up, -forward], axis=1)
    return Pose(rotation, eye)

