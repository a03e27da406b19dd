"""Run configuration: defaults, validation, YAML I/O, hashing and seed fan-out."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .mvs import MVSConfig, MVSError
from .painmil import D_SET, TEST_D, HeadConfig, PainMILError
from .preprocess import FLOW_FPS, MAX_SEGMENT_S, MIN_SEGMENT_S, TOP_MOTION_PERCENT
from .synthdata import SceneConfig, SynthDataError

STAGES = ("data", "mvs", "head")


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    root: str | None = None  # defaults to <run dir>/data
    n_subjects: int = 8
    n_views: int = 4
    image_resolution: tuple = (128, 128)
    fps: float = 2.0
    noise_sigma: float = 0.01
    shared_stall: bool = False
    sessions_per_subject: int = 4  # alternating no-pain / pain sessions
    session_duration_s: float = 60.0
    positive_fraction: float = 0.25


@dataclass
class PreprocessSection:
    min_segment_s: float = MIN_SEGMENT_S
    max_segment_s: float = MAX_SEGMENT_S
    flow_fps: float = FLOW_FPS
    motion_percent: float = TOP_MOTION_PERCENT
    background_window_s: float | None = None
    crop_margin: float = 1.25


@dataclass
class MVSSection:
    resolution: int = 64
    pose_rows: int = 200
    appearance_dim: int = 128
    channels: tuple = (16, 32, 64, 128)
    epochs: int = 50
    lr: float = 1e-3
    alpha: float = 2.0
    batch_size: int = 16
    steps_per_epoch: int | None = None
    no_appearance_swap: bool = False
    no_background_input: bool = False
    uniform_sampling: bool = False


@dataclass
class HeadSection:
    l: int = 10
    clip_fps: float = 2.0
    epochs: int = 10
    lr: float = 1e-3
    loss_variant: str = "ours_mil"
    d_set: tuple = D_SET
    test_d: int = TEST_D
    dropout: float = 0.5
    hidden: int = 64
    hidden2: int = 64
    bags_per_step: int = 4
    hide_and_seek: bool = False


@dataclass
class ProtocolSection:
    validation_rule: str = "most_balanced"
    folds: tuple | None = None  # test subjects to run; None = all
    std_ddof: int = 0


@dataclass
class RunConfig:
    seed: int = 0
    run_id: str = "default"
    data: DataSection = field(default_factory=DataSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    mvs: MVSSection = field(default_factory=MVSSection)
    head: HeadSection = field(default_factory=HeadSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)

    # -- derived per-module configs ------------------------------------------
    def stage_seed(self, stage: str) -> int:
        return stage_seed(self.seed, stage)

    def scene_config(self) -> SceneConfig:
        d = self.data
        return SceneConfig(d.n_subjects, d.n_views, d.image_resolution, seed=self.stage_seed("data"), fps=d.fps,
                           noise_sigma=d.noise_sigma, shared_stall=d.shared_stall)

    def mvs_config(self) -> MVSConfig:
        return MVSConfig(**asdict(self.mvs), seed=self.stage_seed("mvs"))

    def head_config(self) -> HeadConfig:
        h = asdict(self.head)
        h.pop("clip_fps")
        return HeadConfig(**h, seed=self.stage_seed("head"))

    def validate(self) -> "RunConfig":
        try:
            self.scene_config()
            self.mvs_config()
            self.head_config()
        except (SynthDataError, MVSError, PainMILError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        p, d = self.preprocess, self.data
        if not 0 < p.min_segment_s <= p.max_segment_s:
            raise ConfigError("segment bounds must satisfy 0 < min <= max")
        if not 0 < p.motion_percent <= 100:
            raise ConfigError("motion_percent must be in (0, 100]")
        if d.session_duration_s < p.min_segment_s:
            raise ConfigError("sessions shorter than the minimum segment length")
        if not 0 < d.positive_fraction <= 1:
            raise ConfigError("positive_fraction must be in (0, 1]")
        if self.protocol.validation_rule != "most_balanced":
            raise ConfigError(f"unknown validation_rule {self.protocol.validation_rule!r}")
        if self.head.clip_fps > d.fps or abs(d.fps / self.head.clip_fps - round(d.fps / self.head.clip_fps)) > 1e-9:
            raise ConfigError("clip_fps must evenly divide the data fps")
        return self

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def stage_seed(root: int, stage: str) -> int:
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, STAGES.index(stage)])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, values: dict, path: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(f'{path}{k}' for k in unknown)}")
    kwargs = {}
    for name, value in values.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}{name}.")
        elif isinstance(default, tuple) or (name == "folds" and value is not None):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}{name} must be a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(values: dict) -> RunConfig:
    return _build(RunConfig, values or {}, "").validate()


def merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    for k, v in overrides.items():
        out[k] = merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def parse_override(text: str) -> dict:
    """``"mvs.epochs=2"`` -> ``{"mvs": {"epochs": 2}}`` (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    for part in reversed(key.strip().split(".")):
        value = {part: value}
    return value


def load(path: str | Path | None = None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        try:
            values = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for o in overrides:
        values = merge(values, parse_override(o) if isinstance(o, str) else o)
    return from_dict(values)


def dump(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
