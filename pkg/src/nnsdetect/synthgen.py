"""Synthetic NNS footage with known ground truth.

A static "face" (bright ellipse, two dark eyes, dark mouth) sits on a smooth
textured background. During NNS bursts the mouth aperture oscillates at the
suck rate. In challenging mode the whole scene swings horizontally.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .timeline import Event, EventTrack

MIN_EVENT_GAP_S = 1.0

# face template geometry (pixels, relative to face center)
FACE_AXES = (20.0, 26.0)  # semi-axes (x, y)
EYE_OFFSETS = ((-8.0, -8.0), (8.0, -8.0))
EYE_AXES = (3.5, 2.5)
MOUTH_OFFSET = (0.0, 11.0)
MOUTH_HALF_WIDTH = 7.0
MOUTH_BASE_APERTURE = 6.0
BOX_MARGIN = 1.0

BACKGROUND_LEVEL = 60.0
FACE_LEVEL = 170.0
EYE_LEVEL = 70.0
MOUTH_LEVEL = 40.0


@dataclass(frozen=True)
class Jitter:
    amplitude_px: float = 4.0
    period_s: float = 2.0
    phase: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    fps: float = 10.0
    suck_hz: float = 2.0
    sucks_per_burst: tuple[int, int] = (6, 12)
    bursts_per_minute: float = 3.0
    frame_size: tuple[int, int] = (96, 96)  # (height, width)
    mouth_amplitude: float = 3.0
    noise_sigma: float = 2.0
    jitter: Jitter | None = None
    face_offset_px: float = 6.0  # max random displacement of the face from frame center
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.sucks_per_burst
        if not (self.fps > 0 and self.suck_hz > 0):
            raise ValueError("fps and suck_hz must be positive")
        if not (1 <= lo <= hi):
            raise ValueError(f"invalid sucks_per_burst range {self.sucks_per_burst}")
        if self.mouth_amplitude < 0 or self.noise_sigma < 0 or self.face_offset_px < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.bursts_per_minute < 0:
            raise ValueError("bursts_per_minute must be non-negative")
        if self.jitter is not None and self.jitter.amplitude_px < 0:
            raise ValueError("jitter amplitude must be non-negative")


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray = field(repr=False)  # [n, h, w] uint8 (or [n, c, h, w] for encoded flow)
    fps: float

    def __post_init__(self):
        if self.frames.ndim < 3 or len(self.frames) < 1:
            raise ValueError("a frame sequence needs at least one frame")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[-2:]

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.fps


def _rng(seed, *stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *stream]))


def n_frames_for(duration_s: float, fps: float) -> int:
    return int(round(duration_s * fps))


def gen_event_track(duration_s: float, cfg: SynthConfig, rng_seed: int | None = None) -> EventTrack:
    """Sample NNS bursts with a renewal process.

    Inter-onset waits are exponential with mean ``60 / bursts_per_minute``;
    a draw that would start less than ``MIN_EVENT_GAP_S`` after the previous
    burst is redrawn. Sampling stops at the first burst that would run past
    the end of the track.
    """
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    seed = cfg.seed if rng_seed is None else rng_seed
    rng = _rng(seed, 1)
    if cfg.bursts_per_minute == 0:
        return EventTrack((), duration_s)
    mean_wait = 60.0 / cfg.bursts_per_minute
    lo, hi = cfg.sucks_per_burst
    events: list[Event] = []
    t = 0.0
    prev_end = None
    while True:
        n_sucks = int(rng.integers(lo, hi + 1))
        length = n_sucks / cfg.suck_hz
        while True:
            onset = t + rng.exponential(mean_wait)
            if prev_end is None or onset - prev_end >= MIN_EVENT_GAP_S:
                break
        if onset + length > duration_s:
            break
        events.append(Event(onset, onset + length))
        prev_end = t = onset + length
    return EventTrack(tuple(events), duration_s)


def gen_motion_signal(track: EventTrack, cfg: SynthConfig, duration_s: float | None = None) -> np.ndarray:
    """Per-frame mouth displacement: a sinusoid at the suck rate inside events, zero outside."""
    duration_s = track.duration_s if duration_s is None else duration_s
    n = n_frames_for(duration_s, cfg.fps)
    t = np.arange(n) / cfg.fps
    sig = np.zeros(n)
    for ev in track.events:
        inside = (t >= ev.start_s) & (t < ev.end_s)
        sig[inside] = cfg.mouth_amplitude * np.sin(2 * np.pi * cfg.suck_hz * (t[inside] - ev.start_s))
    return sig


def jitter_offsets(cfg: SynthConfig, n_frames: int) -> np.ndarray:
    """Horizontal scene translation per frame (zero without jitter)."""
    if cfg.jitter is None or cfg.jitter.amplitude_px == 0:
        return np.zeros(n_frames)
    t = np.arange(n_frames) / cfg.fps
    j = cfg.jitter
    return j.amplitude_px * np.sin(2 * np.pi * t / j.period_s + j.phase)


def _soft_ellipse(xx, yy, cx, cy, ax, ay):
    # ~1 px anti-aliased edge so sub-pixel motion changes pixel values
    r = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    d = (r - 1.0) * min(ax, ay)
    return np.clip(0.5 - d, 0.0, 1.0)


class _Scene:
    """Analytic scene so that any sub-pixel translation renders exactly."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        h, w = cfg.frame_size
        self.h, self.w = h, w
        margin = (cfg.jitter.amplitude_px if cfg.jitter else 0.0) + cfg.face_offset_px
        need_x = 2 * (FACE_AXES[0] + BOX_MARGIN + margin)
        need_y = 2 * (FACE_AXES[1] + BOX_MARGIN + cfg.face_offset_px)
        if need_x > w or need_y > h:
            raise ValueError(f"face template plus jitter margin does not fit a {h}x{w} frame")
        off = rng.uniform(-cfg.face_offset_px, cfg.face_offset_px, size=2)
        self.cx = (w - 1) / 2 + off[0]
        self.cy = (h - 1) / 2 + off[1]
        n_blobs = 40
        pad = 12.0
        self.bx = rng.uniform(-pad, w + pad, n_blobs)
        self.by = rng.uniform(-pad, h + pad, n_blobs)
        self.bs = rng.uniform(2.5, 6.0, n_blobs)
        self.ba = rng.uniform(-45.0, 45.0, n_blobs)
        self.yy, self.xx = np.mgrid[0:h, 0:w].astype(np.float64)
        self._bg_cache: tuple[float, np.ndarray] | None = None

    def background(self, shift_x: float) -> np.ndarray:
        if self._bg_cache is not None and self._bg_cache[0] == shift_x:
            return self._bg_cache[1]
        xx = self.xx - shift_x
        img = np.full((self.h, self.w), BACKGROUND_LEVEL)
        for bx, by, bs, ba in zip(self.bx, self.by, self.bs, self.ba):
            img += ba * np.exp(-((xx - bx) ** 2 + (self.yy - by) ** 2) / (2 * bs * bs))
        self._bg_cache = (shift_x, img)
        return img

    def render(self, shift_x: float, aperture: float) -> np.ndarray:
        xx = self.xx - shift_x
        yy = self.yy
        img = self.background(shift_x)
        face = _soft_ellipse(xx, yy, self.cx, self.cy, *FACE_AXES)
        img = img * (1 - face) + FACE_LEVEL * face
        for ox, oy in EYE_OFFSETS:
            eye = _soft_ellipse(xx, yy, self.cx + ox, self.cy + oy, *EYE_AXES)
            img = img * (1 - eye) + EYE_LEVEL * eye
        half_ap = max(aperture / 2.0, 0.25)
        mouth = _soft_ellipse(xx, yy, self.cx + MOUTH_OFFSET[0], self.cy + MOUTH_OFFSET[1],
                              MOUTH_HALF_WIDTH, half_ap)
        img = img * (1 - mouth) + MOUTH_LEVEL * mouth
        return img

    def face_box(self, shift_x: float) -> tuple[float, float, float, float]:
        ax, ay = FACE_AXES
        return (self.cx + shift_x - ax - BOX_MARGIN, self.cy - ay - BOX_MARGIN,
                2 * (ax + BOX_MARGIN), 2 * (ay + BOX_MARGIN))


def render_video(track: EventTrack, cfg: SynthConfig, duration_s: float | None = None,
                 start_frame: int = 0) -> tuple[FrameSequence, np.ndarray]:
    """Render the synthetic scene; returns frames and per-frame true face boxes.

    Boxes are ``[n, 4]`` float arrays of ``(x, y, w, h)``. ``start_frame``
    skips that many leading frames of the timeline (the scene, noise and
    jitter stay aligned to absolute time).
    """
    duration_s = track.duration_s if duration_s is None else duration_s
    n_total = n_frames_for(duration_s, cfg.fps)
    scene = _Scene(cfg, _rng(cfg.seed, 2))
    signal = gen_motion_signal(track, cfg, duration_s)
    shifts = jitter_offsets(cfg, n_total)
    noise_rng = _rng(cfg.seed, 3)
    h, w = cfg.frame_size
    frames = np.empty((n_total - start_frame, h, w), dtype=np.uint8)
    boxes = np.empty((n_total - start_frame, 4))
    for i in range(start_frame, n_total):
        img = scene.render(shifts[i], MOUTH_BASE_APERTURE + signal[i])
        if cfg.noise_sigma > 0:
            img = img + noise_rng.normal(0.0, cfg.noise_sigma, img.shape)
        frames[i - start_frame] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        boxes[i - start_frame] = scene.face_box(shifts[i])
    return FrameSequence(frames, cfg.fps), boxes


def clip_frame_count(clip_len_s: float, fps: float) -> int:
    """Frames in a clip spanning ``clip_len_s`` with both endpoints sampled (2.5 s at 10 fps -> 26)."""
    return n_frames_for(clip_len_s, fps) + 1


@dataclass
class SynthClip:
    video: FrameSequence
    label: int
    boxes: np.ndarray
    track: EventTrack
    seed: int


def gen_clip_dataset(cfg: SynthConfig, n_pos: int, n_neg: int, clip_len_s: float = 2.5,
                     shuffle: bool = True) -> list[SynthClip]:
    """Balanced positive (all-NNS) and negative (no NNS) clips, one seed each.

    Each clip starts at a random frame offset of its own timeline so the suck
    phase and jitter phase vary between clips.
    """
    if n_pos < 0 or n_neg < 0:
        raise ValueError("clip counts must be non-negative")
    n_frames = clip_frame_count(clip_len_s, cfg.fps)
    rng = _rng(cfg.seed, 4)
    lead_max = int(round(cfg.fps / cfg.suck_hz)) + 1
    labels = [1] * n_pos + [0] * n_neg
    if shuffle:
        labels = [labels[i] for i in rng.permutation(len(labels))]
    out = []
    seeds = rng.integers(0, 2**63 - 1, size=len(labels))
    for label, seed in zip(labels, seeds):
        seed = int(seed)
        lead = int(_rng(seed, 5).integers(0, lead_max))
        span = (lead + n_frames) / cfg.fps
        jitter = cfg.jitter
        if jitter is not None:
            jitter = Jitter(jitter.amplitude_px, jitter.period_s,
                            float(_rng(seed, 6).uniform(0, 2 * np.pi)))
        clip_cfg = replace(cfg, seed=seed, jitter=jitter)
        track = EventTrack((Event(0.0, span),), span) if label else EventTrack((), span)
        video, boxes = render_video(track, clip_cfg, span, start_frame=lead)
        clip_track = (EventTrack((Event(0.0, n_frames / cfg.fps),), n_frames / cfg.fps)
                      if label else EventTrack((), n_frames / cfg.fps))
        out.append(SynthClip(video, label, boxes, clip_track, seed))
    return out
