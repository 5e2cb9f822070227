"""Run configuration: one JSON document drives every command.

Parsing is strict (unknown keys are rejected) and the canonical JSON form
is hashed so datasets, checkpoints, and reports can be checked for
compatibility.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .baselines import VelocityConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .stage1 import Stage1Config
from .stage2 import Stage2Config


@dataclass
class WorldSection:
    extent_m: float = 4.5
    grid_cells: int = 20
    patch_points: int = 1024
    patch_side_m: float = 1.0
    anchor_counts: dict = field(default_factory=lambda: {
        "sink": 1, "stove": 1, "counter": 1, "table": 1, "cabinet": 1,
        "trash_bin": 1, "dishwasher": 1, "shelf": 1, "fridge": 1, "open_floor": 2})
    points_per_anchor: int = 600
    floor_density_per_m2: float = 300.0


@dataclass
class MotionSection:
    imu_rate_hz: int = 50
    walk_speed: float = 0.8
    walk_accel: float = 0.5
    trajectory_s: float = 60.0
    jitter_amp_m: float = 0.02
    n_action_classes: int = 12
    accel_sigma: float = 0.1
    gyro_sigma: float = 0.05
    bias_rw_sigma: float = 0.002


@dataclass
class DatasetSection:
    train_scenes: int = 8
    trajs_per_scene: int = 20
    seen_test_scenes: int = 2
    unseen_test_scenes: int = 2
    test_trajs_per_scene: int = 4


@dataclass
class EncoderSection:
    feature_dim: int = 64
    imu_channels: tuple = (16, 32)
    imu_kernel: int = 5
    imu_residual: bool = True
    point_channels: tuple = (32, 64)
    image_noise_sigma: float = 0.1


@dataclass
class RunConfig:
    seed: int = 1
    world: WorldSection = field(default_factory=WorldSection)
    motion: MotionSection = field(default_factory=MotionSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    encoders: EncoderSection = field(default_factory=EncoderSection)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    velocity: VelocityConfig = field(default_factory=VelocityConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if self.world.grid_cells < 2:
            raise ConfigError("world.grid_cells must be >= 2")
        if not 2.5 <= self.world.extent_m <= 6.5:
            raise ConfigError("world.extent_m must lie in [2.5, 6.5]")
        if self.motion.imu_rate_hz < 2 or self.motion.imu_rate_hz > 800:
            raise ConfigError("motion.imu_rate_hz must lie in [2, 800]")
        if self.motion.trajectory_s < 10:
            raise ConfigError("motion.trajectory_s must be >= 10")
        if not 0 <= self.motion.jitter_amp_m <= 0.03:
            raise ConfigError("motion.jitter_amp_m must lie in [0, 0.03]")
        if self.dataset.train_scenes < 1 or self.dataset.unseen_test_scenes < 1:
            raise ConfigError("dataset needs at least one train and one unseen scene")
        if self.dataset.seen_test_scenes > self.dataset.train_scenes:
            raise ConfigError("dataset.seen_test_scenes cannot exceed train_scenes")
        if self.motion.n_action_classes < 2:
            raise ConfigError("motion.n_action_classes must be >= 2")
        if self.motion.n_action_classes > self.encoders.feature_dim:
            raise ConfigError("n_action_classes cannot exceed encoders.feature_dim")
        self.stage1.validate()
        self.stage2.validate()
        self.eval.validate()

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return _build(cls, doc, path="")

    @classmethod
    def from_json(cls, path: Path | str) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(doc)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _build(datacls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    known = {f.name: f for f in fields(datacls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(
            f"unknown config key(s) {sorted(unknown)} in section {path or '<root>'}")
    defaults = datacls()
    kwargs = {}
    for name, f in known.items():
        if name not in doc:
            continue
        value = doc[name]
        factory = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if factory is not None and dataclasses.is_dataclass(factory):
            kwargs[name] = _build(factory, value, f"{path}.{name}".lstrip("."))
        elif isinstance(value, list) and isinstance(getattr(defaults, name), tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return datacls(**kwargs)
