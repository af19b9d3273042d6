"""Run configuration: one JSON document for the whole pipeline.

Every section is optional and falls back to the dataclass defaults. Unknown
keys anywhere in the tree are rejected before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .field import FieldConfig
from .masks import MaskConfig
from .synth import CameraRing, DetectorSpec, Drop, DropSpec, GlassPlane, SceneSpec, random_drops
from .trainer import TrainConfig


@dataclass(frozen=True)
class RandomDrops:
    """Generate ``count`` drops instead of listing them.

    Lengths are pixels for lens-fixed drops and glass-plane units for
    scene-fixed drops; ``span`` defaults to the whole image for lens-fixed
    drops and to a 3x3 patch centered on the glass origin otherwise.
    """

    count: int = 14
    radius_min: float = 3.0
    radius_max: float = 6.0
    distortion: float = 0.8
    brightness_min: float = 0.2
    brightness_max: float = 0.35
    span: Optional[tuple[float, float]] = None
    seed: int = 0


@dataclass(frozen=True)
class DropConfig:
    mode: str = "lens_fixed"
    drops: tuple[Drop, ...] = ()
    glass: Optional[GlassPlane] = None
    random: Optional[RandomDrops] = field(default_factory=RandomDrops)

    def __post_init__(self):
        if self.mode not in ("lens_fixed", "scene_fixed"):
            raise ValueError("drop mode must be 'lens_fixed' or 'scene_fixed'")

    def resolve(self, ring: CameraRing) -> DropSpec:
        drops = tuple(self.drops)
        r = self.random
        if r is not None and r.count > 0:
            if self.mode == "lens_fixed":
                span = r.span or (float(ring.width), float(ring.height))
                origin = (0.0, 0.0)
            else:
                span = r.span or (3.0, 3.0)
                origin = (-span[0] / 2, -span[1] / 2)
            drops += random_drops(
                r.count, r.seed, span, (r.radius_min, r.radius_max), r.distortion,
                (r.brightness_min, r.brightness_max), origin,
            )
        return DropSpec(self.mode, drops, self.glass)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)
    camera: CameraRing = field(default_factory=CameraRing)
    drops: DropConfig = field(default_factory=DropConfig)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    mask: MaskConfig = field(default_factory=MaskConfig)
    model: FieldConfig = field(default_factory=FieldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def seeded(self) -> "RunConfig":
        """Propagate the top-level seed into every seeded section."""
        drops = self.drops
        if drops.random is not None:
            drops = dataclasses.replace(drops, random=dataclasses.replace(drops.random, seed=self.seed))
        return dataclasses.replace(
            self,
            drops=drops,
            detector=dataclasses.replace(self.detector, seed=self.seed),
            train=dataclasses.replace(self.train, seed=self.seed),
        )


def _build(tp, data: Any, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if data is None:
            return None
        return _build(inner[0], data, where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}") for k, v in data.items()}
        try:
            return tp(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if origin is tuple:
        if not isinstance(data, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_build(args[0], x, f"{where}[{i}]") for i, x in enumerate(data))
        if len(data) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} values")
        return tuple(_build(a, x, f"{where}[{i}]") for i, (a, x) in enumerate(zip(args, data)))
    if tp is bool:
        if not isinstance(data, bool):
            raise ConfigError(f"{where}: expected true/false")
        return data
    if tp is int:
        if isinstance(data, bool) or not isinstance(data, int):
            raise ConfigError(f"{where}: expected an integer")
        return data
    if tp is float:
        if isinstance(data, bool) or not isinstance(data, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(data)
    if tp is str:
        if not isinstance(data, str):
            raise ConfigError(f"{where}: expected a string")
        return data
    raise ConfigError(f"{where}: unsupported field type {tp}")


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))
