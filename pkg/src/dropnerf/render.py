"""Stratified ray sampling and alpha compositing of the radiance field."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .camera import Intrinsics, Pose, Ray, image_rays
from .field import FieldConfig, field_eval

WHITE = (1.0, 1.0, 1.0)


@dataclass
class RaySamples:
    t_values: np.ndarray
    positions: np.ndarray
    deltas: np.ndarray


@dataclass
class RenderOutput:
    color: Var
    weights: Var
    final_transmittance: Var
    depth: Var


def ray_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one ray, keyed by (seed, *key)."""
    return np.random.default_rng([int(seed), *(int(k) for k in key)])


def sample_depths(
    t_near: float,
    t_far: float,
    n_rays: int,
    n_samples: int,
    jitter: bool = False,
    rngs: Optional[Sequence[np.random.Generator]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Depths (n_rays, N) and spacings for N equal bins on [t_near, t_far].

    Without jitter each sample sits at its bin center; with jitter it is
    uniform inside its bin, drawn from that ray's own generator.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample per ray")
    width = (t_far - t_near) / n_samples
    lower = t_near + width * np.arange(n_samples)
    if jitter:
        if rngs is None or len(rngs) != n_rays:
            raise ValueError("jittered sampling needs one generator per ray")
        u = np.stack([g.random(n_samples) for g in rngs]) if n_rays else np.empty((0, n_samples))
    else:
        u = np.full((n_rays, n_samples), 0.5)
    t = lower + width * u
    deltas = np.empty_like(t)
    deltas[:, :-1] = t[:, 1:] - t[:, :-1]
    deltas[:, -1] = t_far - t[:, -1]
    return t, deltas


def stratified_sample(ray: Ray, n_samples: int, jitter: bool = False, rng=None) -> RaySamples:
    t, deltas = sample_depths(ray.t_near, ray.t_far, 1, n_samples, jitter, [rng] if jitter else None)
    t, deltas = t[0], deltas[0]
    return RaySamples(t, ray.origin + t[:, None] * ray.direction, deltas)


def composite(sigmas, colors, deltas, background=WHITE, t_values=None) -> RenderOutput:
    """Alpha-composite samples along the last-but-one axis.

    sigmas (..., N), colors (..., N, 3), deltas (..., N). With
    ``x_i = sigma_i * delta_i``: ``alpha_i = 1 - exp(-x_i)``,
    ``T_i = exp(-sum_{j<i} x_j)``, ``w_i = T_i * alpha_i`` and the final
    transmittance ``exp(-sum_j x_j)`` weights the background.
    """
    sigmas = ad.as_var(sigmas)
    colors = ad.as_var(colors)
    deltas = np.asarray(deltas, dtype=np.float64)
    if np.any(deltas < 0):
        raise ValueError("sample spacings must be non-negative")
    if sigmas.shape != deltas.shape or colors.shape != sigmas.shape + (3,):
        raise ValueError("sigmas, colors and deltas disagree in shape")

    optical = sigmas * deltas
    running = ad.cumsum(optical, axis=-1)
    zero = np.zeros(sigmas.shape[:-1] + (1,))
    before = ad.concat([zero, running[..., :-1]], axis=-1)
    trans = ad.exp(-before)
    alpha = 1.0 - ad.exp(-optical)
    weights = trans * alpha
    final = ad.exp(-running[..., -1])

    wc = ad.reshape(weights, weights.shape + (1,)) * colors
    color = ad.sum_(wc, axis=-2) + ad.reshape(final, final.shape + (1,)) * np.asarray(background, dtype=np.float64)
    t = np.zeros(deltas.shape) if t_values is None else np.asarray(t_values, dtype=np.float64)
    depth = ad.sum_(weights * t, axis=-1)
    return RenderOutput(color, weights, final, depth)


def render_rays(
    params,
    cfg: FieldConfig,
    origins: np.ndarray,
    dirs: np.ndarray,
    t_near: float,
    t_far: float,
    n_samples: int,
    jitter: bool = False,
    rngs=None,
    background=WHITE,
    field: Callable = field_eval,
) -> RenderOutput:
    """Render a batch of rays (R, 3) through the field in one graph."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = origins.shape[0]
    t, deltas = sample_depths(t_near, t_far, n_rays, n_samples, jitter, rngs)
    points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    view = np.broadcast_to(dirs[:, None, :], points.shape)
    sigma, color = field(params, cfg, points.reshape(-1, 3), view.reshape(-1, 3))
    sigma = ad.reshape(sigma, (n_rays, n_samples))
    color = ad.reshape(color, (n_rays, n_samples, 3))
    return composite(sigma, color, deltas, background, t)


def render_ray(params, cfg: FieldConfig, ray: Ray, n_samples: int, jitter=False, rng=None, background=WHITE, field=field_eval) -> RenderOutput:
    out = render_rays(
        params, cfg, ray.origin[None], ray.direction[None], ray.t_near, ray.t_far,
        n_samples, jitter, [rng] if jitter else None, background, field,
    )
    return RenderOutput(out.color[0], out.weights[0], out.final_transmittance[0], out.depth[0])


def render_view(
    params,
    cfg: FieldConfig,
    intr: Intrinsics,
    pose: Pose,
    t_near: float,
    t_far: float,
    n_samples: int = 64,
    background=WHITE,
    chunk: int = 1024,
    field: Callable = field_eval,
) -> np.ndarray:
    """Deterministic (unjittered) render of a full view, shape (H, W, 3)."""
    o, d = image_rays(intr, pose)
    o, d = o.reshape(-1, 3), d.reshape(-1, 3)
    out = np.empty((o.shape[0], 3))
    for lo in range(0, o.shape[0], chunk):
        hi = min(lo + chunk, o.shape[0])
        res = render_rays(params, cfg, o[lo:hi], d[lo:hi], t_near, t_far, n_samples, False, None, background, field)
        out[lo:hi] = res.color.value
    return out.reshape(intr.height, intr.width, 3)
