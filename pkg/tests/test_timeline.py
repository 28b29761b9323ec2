from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnsdetect.timeline import (
    BinaryTimeline,
    Event,
    EventTrack,
    binarize,
    extract_events,
    interval_iou,
    label_runs,
    n_windows,
)


def test_event_validation():
    with pytest.raises(ValueError):
        Event(2.0, 2.0)
    with pytest.raises(ValueError):
        Event(-0.1, 1.0)


def test_track_rejects_overlap_and_overflow():
    with pytest.raises(ValueError):
        EventTrack.from_pairs([(0, 2), (1, 3)], 10)
    with pytest.raises(ValueError):
        EventTrack.from_pairs([(3, 4), (0, 1)], 10)
    with pytest.raises(ValueError):
        EventTrack.from_pairs([(9, 11)], 10)
    EventTrack.from_pairs([(0, 1), (1, 2)], 2)  # touching is fine


# --- binarize ----------------------------------------------------------------

def test_binarize_single_window_flags_any_overlap():
    tl = binarize(EventTrack.from_pairs([(2.0, 3.0)], 5), 10.0)
    assert tl.bits.tolist() == [1]


def test_binarize_empty_track():
    tl = binarize(EventTrack((), 60), 0.1)
    assert len(tl) == 600 and not tl.bits.any()


def test_binarize_straddling_event():
    tl = binarize(EventTrack.from_pairs([(0.95, 1.05)], 2), 0.1)
    assert len(tl) == 20
    assert np.flatnonzero(tl.bits).tolist() == [9, 10]


def test_binarize_boundary_touch_does_not_count():
    tl = binarize(EventTrack.from_pairs([(1.0, 2.0)], 3), 1.0)
    assert tl.bits.tolist() == [0, 1, 0]


def test_binarize_keeps_partial_window():
    tl = binarize(EventTrack.from_pairs([(10.2, 10.4)], 10.5), 1.0)
    assert len(tl) == 11 and tl.bits[-1] == 1


def test_binarize_rejects_bad_window():
    with pytest.raises(ValueError):
        binarize(EventTrack((), 1), 0.0)


def test_window_count():
    assert n_windows(60, 0.1) == 600
    assert n_windows(10.5, 1.0) == 11
    assert n_windows(1.1, 0.1) == 11


# --- IoU -----------------------------------------------------------------------

@pytest.mark.parametrize("a,b,want", [((0, 10), (0, 10), 1.0), ((0, 10), (20, 30), 0.0),
                                      ((0, 10), (5, 15), 1 / 3), ((0, 10), (10, 20), 0.0)])
def test_interval_iou_values(a, b, want):
    assert interval_iou(Event(*a), Event(*b)) == want


# endpoints on a 0.01 s grid so "identical" is not blurred by rounding
intervals = st.tuples(st.integers(0, 10000), st.integers(1, 5000)).map(
    lambda t: Event(t[0] / 100, (t[0] + t[1]) / 100))


@given(intervals, intervals, st.floats(0, 100))
def test_iou_properties(a, b, shift):
    iou = interval_iou(a, b)
    assert 0.0 <= iou <= 1.0
    assert iou == interval_iou(b, a)
    sa = Event(a.start_s + shift, a.end_s + shift)
    sb = Event(b.start_s + shift, b.end_s + shift)
    assert interval_iou(sa, sb) == pytest.approx(iou, abs=1e-9)
    if (a.start_s, a.end_s) == (b.start_s, b.end_s):
        assert iou == 1.0
    else:
        assert iou < 1.0


# --- extraction -------------------------------------------------------------------

def test_extract_single_run():
    assert extract_events([1, 1, 1, 0, 0], 0.5, 0.0).pairs() == [(0.0, 1.5)]


def test_extract_merges_short_gap():
    assert extract_events([1, 0, 1], 0.5, 1.0).pairs() == [(0.0, 1.5)]


def test_extract_keeps_long_gap():
    assert extract_events([1, 0, 0, 0, 1], 0.5, 1.0).pairs() == [(0.0, 0.5), (2.0, 2.5)]


def test_extract_exact_gap_is_not_merged():
    # gap of exactly merge_gap_s is not "shorter than" it
    assert len(extract_events([1, 0, 0, 1], 0.5, 1.0)) == 2


def test_extract_min_duration_and_confidence():
    tr = extract_events([1, 0, 0, 0, 1, 1, 1], 0.5, 0.0, min_duration_s=1.0,
                        scores=[0.9, 0, 0, 0, 0.6, 0.8, 1.0])
    assert tr.pairs() == [(2.0, 3.5)]
    assert tr.events[0].confidence == pytest.approx(0.8)


def test_extract_offset_clips_to_horizon():
    tr = extract_events([1, 1, 0, 1], 1.0, 0.0, offset_s=-0.5, duration_s=3.0)
    assert tr.pairs() == [(0.0, 1.5), (2.5, 3.0)]


def test_label_runs():
    assert label_runs([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    assert label_runs([]) == []


bit_lists = st.lists(st.integers(0, 1), min_size=1, max_size=60)


@given(bit_lists, st.sampled_from([0.1, 0.25, 0.5, 1.0]))
def test_extract_then_binarize_roundtrip(bits, step):
    tr = extract_events(bits, step, 0.0, 0.0)
    assert binarize(tr, step).bits.tolist() == bits


@given(bit_lists, st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
def test_extract_count_monotone(bits, g1, g2, m):
    lo, hi = sorted((g1, g2))
    assert len(extract_events(bits, 0.5, hi, 0.0)) <= len(extract_events(bits, 0.5, lo, 0.0))
    assert len(extract_events(bits, 0.5, m, hi)) <= len(extract_events(bits, 0.5, m, lo))


def test_merge_can_rescue_short_runs():
    # with a minimum duration, merging two short runs may create one that survives
    assert len(extract_events([1, 0, 1], 0.5, 0.0, 1.0)) == 0
    assert len(extract_events([1, 0, 1], 0.5, 1.0, 1.0)) == 1


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0.05, 5)), max_size=5), st.floats(0, 50),
       st.floats(0.05, 5), st.sampled_from([0.1, 0.5, 10.0]))
def test_binarize_monotone_under_added_event(pairs, s, d, w):
    def build(ps):
        ps = sorted(ps)
        kept, end = [], -1.0
        for a, b in ps:
            if a >= end:
                kept.append((a, a + b))
                end = a + b
        return kept

    base = build(pairs)
    extra = [(a, a + b) for a, b in [(s, d)]]
    # the added event must not overlap existing ones to form a valid track
    if any(not (e <= a or b <= st_) for st_, e in base for a, b in extra):
        return
    bigger = sorted(base + extra)
    t1 = binarize(EventTrack.from_pairs(base, 60), w)
    t2 = binarize(EventTrack.from_pairs(bigger, 60), w)
    assert np.all(t2.bits >= t1.bits)


def test_binary_timeline_len():
    assert len(BinaryTimeline(1.0, np.zeros(3, np.uint8), 3.0)) == 3
