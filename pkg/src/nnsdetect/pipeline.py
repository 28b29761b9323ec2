"""Glue between stages: stabilized crop -> HSV flow, and dataset assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .flow import FlowConfig, flow_video
from .synthgen import FrameSequence, SynthClip
from .track import BoundingBox, crop_video, stabilize_boxes

HSV_MAX_MAGNITUDE = 2.0


@dataclass(frozen=True)
class PreprocessConfig:
    crop_size: int = 64
    smooth_window: int = 5
    redetect_every: int = 10
    flow: FlowConfig = field(default_factory=FlowConfig)
    hsv_max_magnitude: float | None = HSV_MAX_MAGNITUDE  # None normalizes each frame by its own peak
    input_mode: str = "flow"  # "flow" or "gray"

    def __post_init__(self):
        if self.input_mode not in ("flow", "gray"):
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.hsv_max_magnitude is not None and not self.hsv_max_magnitude > 0:
            raise ValueError("hsv_max_magnitude must be positive")


def encode_crops(crops: FrameSequence, cfg: PreprocessConfig = PreprocessConfig()) -> FrameSequence:
    if cfg.input_mode == "gray":
        return crops
    return FrameSequence(flow_video(crops.frames, cfg.flow, cfg.hsv_max_magnitude), crops.fps)


def preprocess_video(video: FrameSequence, initial_box: BoundingBox,
                     cfg: PreprocessConfig = PreprocessConfig()) -> FrameSequence:
    """Stabilized face crop followed by HSV-flow encoding: ``[n, 3, S, S]`` uint8 (``[n, S, S]`` in gray mode)."""
    stab = stabilize_boxes(video, initial_box, cfg.smooth_window, cfg.redetect_every)
    crops = crop_video(video, stab.boxes, cfg.crop_size)
    return encode_crops(crops, cfg)


def preprocess_clips(clips: Sequence[SynthClip], cfg: PreprocessConfig = PreprocessConfig()
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Encode each synthetic clip from its true first-frame box; returns (uint8 stack, labels)."""
    xs = [preprocess_video(c.video, BoundingBox(*c.boxes[0]), cfg).frames for c in clips]
    return np.stack(xs), np.array([c.label for c in clips], dtype=np.int64)
