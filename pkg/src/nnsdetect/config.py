"""One JSON document configuring every stage; unknown keys are rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .flow import FlowConfig
from .metrics import IOU_THRESHOLDS
from .pipeline import HSV_MAX_MAGNITUDE, PreprocessConfig
from .recognizer import RecognizerConfig
from .segmenter import TcnConfig
from .synthgen import Jitter, SynthConfig
from .timeline import DEFAULT_MERGE_GAP_S


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrackSettings:
    crop_size: int = 64
    smooth_window: int = 5
    redetect_every: int = 10


@dataclass(frozen=True)
class FlowSettings:
    pyramid_levels: int = 3
    iterations_per_level: int = 100
    smoothness_alpha: float = 15.0
    downscale: float = 0.5
    hsv_max_magnitude: float | None = HSV_MAX_MAGNITUDE

    def flow_config(self) -> FlowConfig:
        return FlowConfig(self.pyramid_levels, self.iterations_per_level, self.smoothness_alpha, self.downscale)


@dataclass(frozen=True)
class SegmenterSettings:
    method: str = "sliding"
    threshold: float = 0.8
    stride_frames: int = 1
    merge_gap_s: float = DEFAULT_MERGE_GAP_S
    min_duration_s: float = 0.0
    tcn: TcnConfig = field(default_factory=TcnConfig)

    def __post_init__(self):
        if self.method not in ("tiled", "sliding", "smoothed", "tcn"):
            raise ConfigError(f"unknown segmentation method {self.method!r}")


@dataclass(frozen=True)
class MetricsSettings:
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    kappa_window_s: float = 10.0
    clip_threshold: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    synth: SynthConfig = field(default_factory=SynthConfig)
    flow: FlowSettings = field(default_factory=FlowSettings)
    track: TrackSettings = field(default_factory=TrackSettings)
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    segmenter: SegmenterSettings = field(default_factory=SegmenterSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(self.track.crop_size, self.track.smooth_window, self.track.redetect_every,
                                self.flow.flow_config(), self.flow.hsv_max_magnitude,
                                self.recognizer.input_mode)


# nested dataclass fields that appear inside sections
_NESTED = {(SynthConfig, "jitter"): Jitter, (SegmenterSettings, "tcn"): TcnConfig}
_TUPLES = {(SynthConfig, "sucks_per_burst"), (SynthConfig, "frame_size"),
           (RecognizerConfig, "conv_channels"), (MetricsSettings, "iou_thresholds")}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        sub = _NESTED.get((cls, k))
        if sub is not None and v is not None:
            v = _build(sub, v, f"{where}.{k}")
        elif (cls, k) in _TUPLES:
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


_SECTIONS = {"synth": SynthConfig, "flow": FlowSettings, "track": TrackSettings,
             "recognizer": RecognizerConfig, "segmenter": SegmenterSettings, "metrics": MetricsSettings}


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected an object")
    unknown = sorted(set(data) - set(_SECTIONS) - {"seed", "paths"})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    kw = {k: _build(cls, data[k], k) for k, cls in _SECTIONS.items() if k in data}
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        kw["seed"] = data["seed"]
    if "paths" in data:
        if not isinstance(data["paths"], dict):
            raise ConfigError("paths must be an object")
        kw["paths"] = dict(data["paths"])
    return PipelineConfig(**kw)


def config_to_dict(cfg: PipelineConfig) -> dict:
    """Plain-JSON form; tuples become lists."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at byte {e.pos}: {e.msg}") from None
    return config_from_dict(data)
