"""Radiance field: frequency encoding plus a small MLP.

Layer layout (all weights stored as (out, in) matrices)::

    enc(x) -> [hidden_0 .. hidden_{depth-1}] -> density head -> sigma
                                            \\-> feature -> [feature, enc(d)] -> color_hidden -> color_out -> rgb

The layer at ``skip_layer`` takes ``[h, enc(x)]`` as its input.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ParamVector, TracedParams, Var


@dataclass(frozen=True)
class FieldConfig:
    depth: int = 4
    width: int = 64
    skip_layer: Optional[int] = 2
    density_activation: str = "softplus"
    pos_freqs: int = 6
    dir_freqs: int = 2

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")
        if self.skip_layer is not None and not (0 <= self.skip_layer < self.depth):
            raise ValueError("skip_layer must be in [0, depth)")
        if self.density_activation not in ("softplus", "relu"):
            raise ValueError("density_activation must be 'softplus' or 'relu'")
        if self.pos_freqs < 0 or self.dir_freqs < 0:
            raise ValueError("frequency counts must be >= 0")

    @property
    def pos_dim(self) -> int:
        return 3 + 6 * self.pos_freqs

    @property
    def dir_dim(self) -> int:
        return 3 + 6 * self.dir_freqs

    @property
    def color_width(self) -> int:
        return max(self.width // 2, 1)

    def layout(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for i in range(self.depth):
            fan_in = self.pos_dim if i == 0 else self.width
            if i == self.skip_layer and i > 0:
                fan_in += self.pos_dim
            shapes[f"hidden{i}.w"] = (self.width, fan_in)
            shapes[f"hidden{i}.b"] = (self.width,)
        shapes["density.w"] = (1, self.width)
        shapes["density.b"] = (1,)
        shapes["feature.w"] = (self.width, self.width)
        shapes["feature.b"] = (self.width,)
        shapes["color_hidden.w"] = (self.color_width, self.width + self.dir_dim)
        shapes["color_hidden.b"] = (self.color_width,)
        shapes["color_out.w"] = (3, self.color_width)
        shapes["color_out.b"] = (3,)
        return shapes


def positional_encode(x, n_freqs: int):
    """``[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]``.

    Works on plain arrays and on graph Vars; the last axis is encoded.
    """
    traced = isinstance(x, Var)
    xv = x if traced else ad.Var(x)
    parts = [xv]
    for k in range(n_freqs):
        scaled = ad.scale(xv, (2.0**k) * np.pi)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    out = ad.concat(parts, axis=-1) if n_freqs else xv
    return out if traced else out.value


def init_params(cfg: FieldConfig, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layout = cfg.layout()
    chunks = []
    for name, shape in layout.items():
        if name.endswith(".b"):
            chunks.append(np.zeros(shape).ravel())
        else:
            fan_out, fan_in = shape
            a = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-a, a, size=shape).ravel())
    return ParamVector(np.concatenate(chunks), layout)


def _as_traced(params) -> TracedParams:
    if isinstance(params, TracedParams):
        return params
    return params.traced(needs_grad=False)


def field_eval(params, cfg: FieldConfig, points, dirs) -> tuple[Var, Var]:
    """Density (M,) and color (M, 3) at points (M, 3) seen along unit dirs (M, 3).

    ``params`` is a ParamVector (evaluation only) or TracedParams (differentiable).
    """
    p = _as_traced(params)
    enc_x = positional_encode(ad.as_var(points), cfg.pos_freqs)
    enc_d = positional_encode(ad.as_var(dirs), cfg.dir_freqs)

    h = enc_x
    for i in range(cfg.depth):
        if i == cfg.skip_layer and i > 0:
            h = ad.concat([h, enc_x], axis=-1)
        h = ad.relu(ad.matvec(p[f"hidden{i}.w"], h) + p[f"hidden{i}.b"])

    raw_sigma = ad.matvec(p["density.w"], h) + p["density.b"]
    if cfg.density_activation == "softplus":
        sigma = ad.softplus(raw_sigma)
    else:
        sigma = ad.relu(raw_sigma)
    sigma = ad.reshape(sigma, sigma.shape[:-1])

    feat = ad.matvec(p["feature.w"], h) + p["feature.b"]
    c = ad.relu(ad.matvec(p["color_hidden.w"], ad.concat([feat, enc_d], axis=-1)) + p["color_hidden.b"])
    color = ad.sigmoid(ad.matvec(p["color_out.w"], c) + p["color_out.b"])
    return sigma, color


# checkpoints ---------------------------------------------------------------------
#
# Layout: b"DNCK" | u32 version | u32 header_len | header (UTF-8 JSON, sorted keys)
#         | float64 little-endian values (count given in header)

_MAGIC = b"DNCK"
_VERSION = 1


def save_checkpoint(path, params: ParamVector, cfg: FieldConfig, seed: int, iteration: int, extra: dict | None = None):
    header = {
        "field": asdict(cfg),
        "seed": int(seed),
        "iteration": int(iteration),
        "count": int(params.values.size),
        "layout": [[k, list(v)] for k, v in params.layout.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamVector, FieldConfig, dict]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<II", data[4:12])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + n].decode("utf-8"))
    values = np.frombuffer(data[12 + n :], dtype="<f8").astype(np.float64)
    if values.size != header["count"]:
        raise ValueError(f"{path}: truncated checkpoint")
    layout = {k: tuple(v) for k, v in header["layout"]}
    cfg = FieldConfig(**header["field"])
    return ParamVector(values, layout), cfg, header
