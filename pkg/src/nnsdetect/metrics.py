"""Agreement, clip-classification and IoU-matched segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .timeline import BinaryTimeline, EventTrack, interval_iou

IOU_THRESHOLDS = (0.1, 0.3, 0.5)


# --- Cohen kappa -----------------------------------------------------------

def kappa_strength(kappa: float) -> str:
    """Verbal band for an agreement score."""
    if kappa <= 0.20:
        return "none"
    if kappa < 0.40:
        return "minimal"
    if kappa < 0.60:
        return "weak"
    if kappa < 0.80:
        return "moderate"
    if kappa <= 0.90:
        return "strong"
    return "almost perfect"


@dataclass(frozen=True)
class KappaReport:
    kappa: float
    p_observed: float
    p_chance: float
    window_s: float
    strength_label: str
    degenerate: bool = False


def cohen_kappa(a: BinaryTimeline, b: BinaryTimeline) -> KappaReport:
    """Chance-corrected agreement of two binarized timelines.

    When chance agreement is 1 (both raters constant and equal) the score is
    reported as 1 with ``degenerate=True``.
    """
    if len(a.bits) != len(b.bits) or not np.isclose(a.window_s, b.window_s):
        raise ValueError("timelines differ in length or window width")
    x = np.asarray(a.bits, dtype=bool)
    y = np.asarray(b.bits, dtype=bool)
    if x.size == 0:
        raise ValueError("empty timelines")
    p_o = float(np.mean(x == y))
    p0, p1 = float(x.mean()), float(y.mean())
    p_e = p0 * p1 + (1 - p0) * (1 - p1)
    if p_e >= 1.0:
        return KappaReport(1.0, p_o, p_e, a.window_s, kappa_strength(1.0), True)
    k = (p_o - p_e) / (1 - p_e)
    return KappaReport(k, p_o, p_e, a.window_s, kappa_strength(k))


# --- clip classification ---------------------------------------------------

@dataclass(frozen=True)
class ClipMetrics:
    accuracy: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision_undefined: bool = False
    recall_undefined: bool = False


def confusion(pred: np.ndarray, labels: np.ndarray) -> tuple[int, int, int, int]:
    pred = np.asarray(pred, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    return (int(np.sum(pred & labels)), int(np.sum(pred & ~labels)),
            int(np.sum(~pred & ~labels)), int(np.sum(~pred & labels)))


def clip_metrics(confidences: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> ClipMetrics:
    """Accuracy/precision/recall with an inclusive threshold.

    No predicted positives: precision is 1 when there are also no actual
    positives, otherwise 0 with ``precision_undefined`` set. No actual
    positives: recall is 1 with ``recall_undefined`` set.
    """
    conf = np.asarray(confidences, dtype=float)
    lab = np.asarray(labels)
    if conf.size == 0:
        raise ValueError("no clips")
    if conf.shape != lab.shape:
        raise ValueError("confidences and labels differ in length")
    tp, fp, tn, fn = confusion(conf >= threshold, lab == 1)
    n = tp + fp + tn + fn
    p_undef = r_undef = False
    if tp + fp == 0:
        if tp + fn == 0:
            precision = 1.0
        else:
            precision, p_undef = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, r_undef = 1.0, True
    else:
        recall = tp / (tp + fn)
    return ClipMetrics((tp + tn) / n, precision, recall, tp, fp, tn, fn, p_undef, r_undef)


# --- event matching --------------------------------------------------------

@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int, float], ...]  # (pred index, gt index, IoU)
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


def candidate_pairs(pred: EventTrack, gt: EventTrack, iou_threshold: float) -> list[tuple[float, float, float, int, int]]:
    """Pairs with IoU at or above threshold as sortable keys ``(-iou, gt_start, pred_start, i, j)``."""
    out = []
    for i, p in enumerate(pred.events):
        for j, g in enumerate(gt.events):
            iou = interval_iou(p, g)
            if iou > 0 and iou >= iou_threshold:
                out.append((-iou, g.start_s, p.start_s, i, j))
    return out


def match_events(pred: EventTrack, gt: EventTrack, iou_threshold: float) -> Matching:
    """Greedy one-to-one matching by descending IoU.

    IoU ties go to the earlier ground-truth start, then the earlier prediction
    start; confidence plays no part.
    """
    used_p, used_g = set(), set()
    pairs = []
    for neg_iou, _, _, i, j in sorted(candidate_pairs(pred, gt, iou_threshold)):
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -neg_iou))
    return Matching(tuple(pairs),
                    tuple(i for i in range(len(pred)) if i not in used_p),
                    tuple(j for j in range(len(gt)) if j not in used_g))


# --- AP / AR ---------------------------------------------------------------

@dataclass
class SegmentationScore:
    thresholds: tuple[float, ...]
    per_subject: dict[str, dict[float, dict]] = field(default_factory=dict)
    mean: dict[float, dict] = field(default_factory=dict)
    pooling: str = "per-subject pooled TP/FP/FN"

    def ap(self, t: float) -> float:
        return self.mean[t]["precision"]

    def ar(self, t: float) -> float:
        return self.mean[t]["recall"]

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "pooling": self.pooling,
            "per_subject": {s: {str(t): v for t, v in d.items()} for s, d in self.per_subject.items()},
            "mean": {str(t): v for t, v in self.mean.items()},
        }


def _ratio(num: int, den: int, both_empty: bool) -> tuple[float, bool]:
    if den > 0:
        return num / den, False
    return (1.0 if both_empty else 0.0), True


def ap_ar(clips: Mapping[str, Sequence[tuple[EventTrack, EventTrack]]],
          thresholds: Sequence[float] = IOU_THRESHOLDS) -> SegmentationScore:
    """Precision/recall of IoU-matched events, pooled per subject, averaged over subjects.

    ``clips`` maps a subject id to its ``(pred, gt)`` track pairs. A subject
    with no predictions and no ground truth scores 1 on both (flagged).
    """
    if not clips or not any(len(v) for v in clips.values()):
        raise ValueError("no clips to evaluate")
    thresholds = tuple(float(t) for t in thresholds)
    score = SegmentationScore(thresholds)
    for subject, pairs in clips.items():
        if not pairs:
            continue
        per_t = {}
        for t in thresholds:
            tp = fp = fn = 0
            for pred, gt in pairs:
                m = match_events(pred, gt, t)
                tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
            empty = tp + fp + fn == 0
            prec, p_flag = _ratio(tp, tp + fp, empty)
            rec, r_flag = _ratio(tp, tp + fn, empty)
            per_t[t] = {"precision": prec, "recall": rec, "tp": tp, "fp": fp, "fn": fn,
                        "precision_undefined": p_flag, "recall_undefined": r_flag}
        score.per_subject[str(subject)] = per_t
    for t in thresholds:
        subj = list(score.per_subject.values())
        score.mean[t] = {"precision": float(np.mean([s[t]["precision"] for s in subj])),
                         "recall": float(np.mean([s[t]["recall"] for s in subj]))}
    return score
