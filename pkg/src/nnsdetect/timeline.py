"""Event algebra: intervals, tracks, window binarization and run extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MERGE_GAP_S = 1.0

# Slack for float window edges (e.g. 11 * 0.1 != 1.1).
_EPS = 1e-9


@dataclass(frozen=True)
class Event:
    start_s: float
    end_s: float
    confidence: float | None = None

    def __post_init__(self):
        if not (self.start_s >= 0):
            raise ValueError(f"event start must be >= 0, got {self.start_s}")
        if not (self.end_s > self.start_s):
            raise ValueError(f"event end {self.end_s} must exceed start {self.start_s}")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class EventTrack:
    events: tuple[Event, ...]
    duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.duration_s < 0:
            raise ValueError("track duration must be non-negative")
        prev_end = -math.inf
        for ev in self.events:
            if ev.start_s < prev_end - _EPS:
                raise ValueError("events must be sorted and non-overlapping")
            if ev.end_s > self.duration_s + _EPS:
                raise ValueError(f"event {ev} exceeds track duration {self.duration_s}")
            prev_end = ev.end_s

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]], duration_s: float) -> EventTrack:
        return cls(tuple(Event(float(s), float(e)) for s, e in pairs), float(duration_s))

    def pairs(self) -> list[tuple[float, float]]:
        return [(ev.start_s, ev.end_s) for ev in self.events]


@dataclass(frozen=True)
class BinaryTimeline:
    window_s: float
    bits: np.ndarray = field(repr=False)
    duration_s: float

    def __len__(self) -> int:
        return len(self.bits)


def n_windows(duration_s: float, window_s: float) -> int:
    return max(0, math.ceil(duration_s / window_s - _EPS))


def binarize(track: EventTrack, window_s: float) -> BinaryTimeline:
    """Mark each half-open window ``[k*w, (k+1)*w)`` that overlaps an event.

    A zero-length touch at a window edge does not count. The trailing
    partial window is kept.
    """
    if not window_s > 0:
        raise ValueError(f"window width must be positive, got {window_s}")
    n = n_windows(track.duration_s, window_s)
    bits = np.zeros(n, dtype=np.uint8)
    for ev in track.events:
        # window k overlaps iff k*w < end and (k+1)*w > start
        lo = max(0, math.floor(ev.start_s / window_s + _EPS))
        hi = min(n, math.ceil(ev.end_s / window_s - _EPS))
        bits[lo:hi] = 1
    return BinaryTimeline(window_s, bits, track.duration_s)


def interval_iou(a: Event, b: Event) -> float:
    inter = min(a.end_s, b.end_s) - max(a.start_s, b.start_s)
    if inter <= 0:
        return 0.0
    union = max(a.end_s, b.end_s) - min(a.start_s, b.start_s)
    return inter / union


def label_runs(labels: Sequence[int] | np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of nonzero entries as half-open index pairs."""
    x = np.asarray(labels).astype(bool).astype(np.int8)
    if x.size == 0:
        return []
    d = np.diff(np.concatenate([[0], x, [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def extract_events(
    labels: Sequence[int] | np.ndarray,
    step_s: float,
    merge_gap_s: float = DEFAULT_MERGE_GAP_S,
    min_duration_s: float = 0.0,
    offset_s: float = 0.0,
    duration_s: float | None = None,
    scores: Sequence[float] | np.ndarray | None = None,
) -> EventTrack:
    """Turn a per-step binary sequence into an event track.

    Runs of positive steps become events; events separated by a gap strictly
    shorter than ``merge_gap_s`` are merged, then events shorter than
    ``min_duration_s`` are dropped. ``offset_s`` shifts every step (used when
    steps are anchored at window centers); results are clipped to
    ``[0, duration_s]``. When ``scores`` are given, each event's confidence is
    the mean score over its steps.
    """
    if not step_s > 0:
        raise ValueError("step_s must be positive")
    if merge_gap_s < 0 or min_duration_s < 0:
        raise ValueError("merge_gap_s and min_duration_s must be non-negative")
    n = len(labels)
    if duration_s is None:
        duration_s = n * step_s + max(offset_s, 0.0)
    runs = label_runs(labels)

    merged: list[list[int]] = []
    for s, e in runs:
        if merged and (s - merged[-1][1]) * step_s < merge_gap_s - _EPS:
            merged[-1][1] = e
        else:
            merged.append([s, e])

    sc = None if scores is None else np.asarray(scores, dtype=float)
    events = []
    for s, e in merged:
        start = min(max(s * step_s + offset_s, 0.0), duration_s)
        end = min(max(e * step_s + offset_s, 0.0), duration_s)
        if end <= start or end - start < min_duration_s - _EPS:
            continue
        conf = None if sc is None else float(sc[s:e].mean())
        events.append(Event(start, end, conf))
    return EventTrack(tuple(events), duration_s)
