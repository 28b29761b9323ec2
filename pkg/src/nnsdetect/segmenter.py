"""Per-window scores -> NNS event segmentations.

Three fixed aggregation rules (tiled, sliding, smoothed) and a learned
single-stage dilated temporal convolutional network.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .timeline import DEFAULT_MERGE_GAP_S, EventTrack, extract_events
from .track import centered_moving_average

FIFTHS = 5  # a nominal window spans five strides; its label goes to the middle one


@dataclass(frozen=True)
class ConfidenceSequence:
    scores: np.ndarray = field(repr=False)
    window_frames: int
    stride_frames: int
    fps: float
    n_frames: int | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("scores must be 1-D")
        if s.size and (s.min() < 0 or s.max() > 1):
            raise ValueError("confidence scores must lie in [0, 1]")
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def total_frames(self) -> int:
        if self.n_frames is not None:
            return self.n_frames
        return (len(self.scores) - 1) * self.stride_frames + self.window_frames


@dataclass(frozen=True)
class FeatureSequence:
    features: np.ndarray = field(repr=False)  # [T, D]
    window_frames: int
    stride_frames: int
    fps: float
    n_frames: int | None = None

    def __post_init__(self):
        f = np.asarray(self.features)
        if f.ndim != 2 or len(f) < 1:
            raise ValueError("features must be a non-empty [T, D] matrix")
        object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Segmentation:
    """Per-step labels on a uniform grid starting at ``offset_s``."""
    labels: np.ndarray
    scores: np.ndarray
    step_s: float
    offset_s: float
    duration_s: float

    @property
    def step_starts(self) -> np.ndarray:
        return self.offset_s + np.arange(len(self.labels)) * self.step_s

    def to_track(self, merge_gap_s: float = DEFAULT_MERGE_GAP_S, min_duration_s: float = 0.0) -> EventTrack:
        return segment(self.labels, self.step_s, merge_gap_s, min_duration_s, self.offset_s,
                       self.duration_s, self.scores)


def segment(labels, step_s: float, merge_gap_s: float = DEFAULT_MERGE_GAP_S, min_duration_s: float = 0.0,
            offset_s: float = 0.0, duration_s: float | None = None, scores=None) -> EventTrack:
    """Events from per-step labels whose step ``t`` covers ``offset_s + [t, t+1) * step_s``."""
    return extract_events(labels, step_s, merge_gap_s, min_duration_s, offset_s, duration_s, scores)


def threshold_scores(scores, threshold: float) -> np.ndarray:
    """Inclusive threshold: ``score >= threshold`` is positive."""
    return (np.asarray(scores) >= threshold).astype(np.uint8)


# --- fixed aggregation -----------------------------------------------------

def tile_starts(n_frames: int, window_frames: int) -> np.ndarray:
    """Start frames of back-to-back, non-overlapping windows (a trailing remainder is dropped)."""
    return np.arange(0, n_frames - window_frames + 1, window_frames)


def aggregate_tiled(conf: ConfidenceSequence, threshold: float) -> Segmentation:
    if conf.stride_frames < conf.window_frames:
        raise ValueError("tiled aggregation needs non-overlapping windows (stride >= window)")
    step_s = conf.window_frames / conf.fps
    return Segmentation(threshold_scores(conf.scores, threshold), conf.scores.copy(), step_s, 0.0,
                        conf.total_frames / conf.fps)


def middle_fifth_scores(conf: ConfidenceSequence) -> np.ndarray:
    """Spread window scores onto the stride grid: window ``k`` credits step ``k + 2``.

    Steps no window credits (the first two and the tail) copy the nearest
    credited step.
    """
    s = conf.stride_frames
    if conf.window_frames not in (FIFTHS * s, FIFTHS * s + 1):
        raise ValueError(f"sliding aggregation needs stride = window / 5, got stride {s} "
                         f"for a {conf.window_frames}-frame window")
    if len(conf.scores) == 0:
        raise ValueError("no window scores")
    n_steps = -(-conf.total_frames // s)
    out = np.empty(n_steps)
    first = FIFTHS // 2
    last = min(first + len(conf.scores), n_steps)
    out[first:last] = conf.scores[:last - first]
    out[:first] = out[first]
    out[last:] = out[last - 1]
    return out


def aggregate_sliding(conf: ConfidenceSequence, threshold: float) -> Segmentation:
    steps = middle_fifth_scores(conf)
    step_s = conf.stride_frames / conf.fps
    return Segmentation(threshold_scores(steps, threshold), steps, step_s, 0.0, conf.total_frames / conf.fps)


def aggregate_smoothed(conf: ConfidenceSequence, threshold: float) -> Segmentation:
    steps = centered_moving_average(middle_fifth_scores(conf), FIFTHS)
    step_s = conf.stride_frames / conf.fps
    return Segmentation(threshold_scores(steps, threshold), steps, step_s, 0.0, conf.total_frames / conf.fps)


AGGREGATORS = {"tiled": aggregate_tiled, "sliding": aggregate_sliding, "smoothed": aggregate_smoothed}


# --- ground truth per window -----------------------------------------------

def labels_to_steps(track: EventTrack, window_frames: int, stride_frames: int, fps: float,
                    n_frames: int | None = None) -> np.ndarray:
    """Window ``t`` (starting at frame ``t * stride``) is positive iff its center frame time is in an event."""
    if n_frames is None:
        n_frames = int(round(track.duration_s * fps))
    n_steps = (n_frames - window_frames) // stride_frames + 1
    if n_steps < 1:
        return np.zeros(0, dtype=np.uint8)
    centers = (np.arange(n_steps) * stride_frames + window_frames // 2) / fps
    out = np.zeros(n_steps, dtype=np.uint8)
    for ev in track.events:
        out[(centers >= ev.start_s) & (centers < ev.end_s)] = 1
    return out


def window_center_offset(window_frames: int, stride_frames: int, fps: float) -> float:
    """Start time of step 0 when steps are centered on window-center frames."""
    return (window_frames // 2) / fps - 0.5 * stride_frames / fps


# --- dilated TCN -----------------------------------------------------------

@dataclass(frozen=True)
class TcnConfig:
    layers: int = 10
    channels: int = 64
    input_dim: int = 128
    lambda_smooth: float = 0.15
    kappa_trunc: float = 4.0
    n_classes: int = 2
    epochs: int = 100
    learning_rate: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.lambda_smooth < 0:
            raise ValueError("lambda_smooth must be >= 0")
        if not self.kappa_trunc > 0:
            raise ValueError("kappa_trunc must be positive")

    def dilation(self, layer: int) -> int:
        """Dilation of 1-based block ``layer``."""
        return 2 ** (layer - 1)

    @property
    def receptive_field(self) -> int:
        return 1 + 2 * sum(self.dilation(l) for l in range(1, self.layers + 1))


@dataclass
class TcnModel:
    config: TcnConfig
    params: dict[str, np.ndarray]
    history: dict = field(default_factory=dict)

    def astype(self, dtype) -> TcnModel:
        return TcnModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()}, dict(self.history))


def tcn_init(cfg: TcnConfig, seed: int | None = None) -> TcnModel:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    c = cfg.channels

    def uni(fan_in, shape):
        k = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-k, k, shape)

    p = {"in.weight": uni(cfg.input_dim, (c, cfg.input_dim)), "in.bias": uni(cfg.input_dim, c)}
    for l in range(1, cfg.layers + 1):
        p[f"block{l}.dilated.weight"] = uni(3 * c, (c, c, 3))
        p[f"block{l}.dilated.bias"] = uni(3 * c, c)
        p[f"block{l}.pointwise.weight"] = uni(c, (c, c))
        p[f"block{l}.pointwise.bias"] = uni(c, c)
    p["out.weight"] = uni(c, (cfg.n_classes, c))
    p["out.bias"] = uni(c, cfg.n_classes)
    return TcnModel(cfg, {k: v.astype(np.float32) for k, v in p.items()})


def _dilated_conv(h, w, b, d):
    """Kernel-3 conv over time with taps at ``t - d, t, t + d``; zero padding keeps length."""
    t_len, c = h.shape
    hp = np.pad(h, ((d, d), (0, 0)))
    cat = np.concatenate([hp[0:t_len], hp[d:d + t_len], hp[2 * d:2 * d + t_len]], axis=1)
    wcat = w.transpose(0, 2, 1).reshape(w.shape[0], -1)
    return cat @ wcat.T + b, cat


def _tcn_logits(model: TcnModel, x, linear: bool = False):
    p, cfg = model.params, model.config
    h = x @ p["in.weight"].T + p["in.bias"]
    caches = []
    for l in range(1, cfg.layers + 1):
        d = cfg.dilation(l)
        a, cat = _dilated_conv(h, p[f"block{l}.dilated.weight"], p[f"block{l}.dilated.bias"], d)
        mask = None if linear else a > 0
        r = a if linear else a * mask
        out = r @ p[f"block{l}.pointwise.weight"].T + p[f"block{l}.pointwise.bias"]
        caches.append((cat, mask, r, d))
        h = h + out
    logits = h @ p["out.weight"].T + p["out.bias"]
    return logits, (x, caches, h)


def tcn_forward(model: TcnModel, features, linear: bool = False) -> np.ndarray:
    """Per-step class probabilities ``[T, n_classes]``.

    ``linear=True`` replaces the rectifier by the identity (receptive-field probes).
    """
    x = features.features if isinstance(features, FeatureSequence) else np.asarray(features)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ValueError(f"features of shape {x.shape} do not match input dim {model.config.input_dim}")
    logits, _ = _tcn_logits(model, x.astype(model.params["in.weight"].dtype, copy=False), linear)
    return nn.softmax(logits)


def _tcn_backward(model: TcnModel, dlogits, cache):
    p, cfg = model.params, model.config
    x, caches, h_last = cache
    g: dict[str, np.ndarray] = {"out.weight": dlogits.T @ h_last, "out.bias": dlogits.sum(0)}
    dh = dlogits @ p["out.weight"]
    c = cfg.channels
    for l in range(cfg.layers, 0, -1):
        cat, mask, r, d = caches[l - 1]
        pw = p[f"block{l}.pointwise.weight"]
        g[f"block{l}.pointwise.weight"] = dh.T @ r
        g[f"block{l}.pointwise.bias"] = dh.sum(0)
        da = dh @ pw
        if mask is not None:
            da = da * mask
        w = p[f"block{l}.dilated.weight"]
        wcat = w.transpose(0, 2, 1).reshape(c, -1)
        g[f"block{l}.dilated.weight"] = (da.T @ cat).reshape(c, 3, c).transpose(0, 2, 1)
        g[f"block{l}.dilated.bias"] = da.sum(0)
        dcat = da @ wcat
        t_len = len(da)
        dhp = np.zeros((t_len + 2 * d, c), dtype=da.dtype)
        for k in range(3):
            dhp[k * d:k * d + t_len] += dcat[:, k * c:(k + 1) * c]
        dh = dh + dhp[d:d + t_len]
    g["in.weight"] = dh.T @ x
    g["in.bias"] = dh.sum(0)
    return g


# --- loss ------------------------------------------------------------------

PROB_FLOOR = 1e-8


def _loss_from_logp(logp, labels, lambda_smooth, kappa_trunc):
    t_len, n_cls = logp.shape
    labels = np.asarray(labels, dtype=np.int64)
    ce = -logp[np.arange(t_len), labels].mean()
    diff = logp[1:] - logp[:-1]
    trunc = np.minimum(np.abs(diff), kappa_trunc)
    smooth = (trunc ** 2).sum() / (t_len * n_cls)
    return float(ce + lambda_smooth * smooth), float(ce), float(smooth), diff


def tcn_loss(probs, labels, lambda_smooth: float = 0.15, kappa_trunc: float = 4.0) -> float:
    """Cross-entropy plus truncated squared log-probability differences between steps."""
    probs = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    return _loss_from_logp(logp, labels, lambda_smooth, kappa_trunc)[0]


def tcn_loss_terms(probs, labels, lambda_smooth: float = 0.15, kappa_trunc: float = 4.0):
    """``(total, cross_entropy, smoothing)`` for reporting."""
    logp = np.log(np.maximum(np.asarray(probs, dtype=np.float64), PROB_FLOOR))
    return _loss_from_logp(logp, labels, lambda_smooth, kappa_trunc)[:3]


def tcn_loss_grad_logits(logits, labels, lambda_smooth: float, kappa_trunc: float):
    """Loss and its gradient w.r.t. logits, holding the previous step's log-probability fixed."""
    lsm = nn.log_softmax(logits)
    floor = np.log(PROB_FLOOR)
    clamped = lsm < floor
    logp = np.where(clamped, floor, lsm)
    loss, _, _, diff = _loss_from_logp(logp, labels, lambda_smooth, kappa_trunc)
    t_len, n_cls = logp.shape
    g = np.zeros_like(logp)
    g[np.arange(t_len), np.asarray(labels, dtype=np.int64)] -= 1.0 / t_len
    active = np.abs(diff) < kappa_trunc
    g[1:] += lambda_smooth / (t_len * n_cls) * 2.0 * diff * active
    g = np.where(clamped, 0.0, g)
    dz = g - np.exp(lsm) * g.sum(axis=1, keepdims=True)
    return loss, dz


def tcn_loss_and_grads(model: TcnModel, features, labels) -> tuple[float, dict]:
    cfg = model.config
    logits, cache = _tcn_logits(model, features)
    loss, dz = tcn_loss_grad_logits(logits, labels, cfg.lambda_smooth, cfg.kappa_trunc)
    return loss, _tcn_backward(model, dz.astype(logits.dtype), cache)


# --- training --------------------------------------------------------------

def _as_matrix(f) -> np.ndarray:
    return np.asarray(f.features if isinstance(f, FeatureSequence) else f, dtype=np.float32)


def step_accuracy(model: TcnModel, features: Sequence, labels: Sequence) -> float:
    accs = [float(np.mean(tcn_forward(model, _as_matrix(f)).argmax(1) == np.asarray(y)))
            for f, y in zip(features, labels)]
    return float(np.mean(accs))


def tcn_train(features: Sequence, labels: Sequence, cfg: TcnConfig = TcnConfig(),
              val_features: Sequence | None = None, val_labels: Sequence | None = None) -> TcnModel:
    """Adam on the mean per-sequence loss, one sequence per step in a seeded order.

    Returns the final-epoch model, or the epoch with the best mean per-step
    validation accuracy when a validation set is given (ties keep the earlier).
    """
    xs = [_as_matrix(f) for f in features]
    ys = [np.asarray(y, dtype=np.int64) for y in labels]
    if not xs:
        raise ValueError("no training sequences")
    for x, y in zip(xs, ys):
        if len(x) != len(y):
            raise ValueError("labels are not aligned with features")
    model = tcn_init(cfg)
    opt = nn.Adam(model.params, cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    hist = {"loss": [], "val_acc": []}
    best = None
    best_acc = -1.0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for i in rng.permutation(len(xs)):
            loss, grads = tcn_loss_and_grads(model, xs[i], ys[i])
            opt.step(model.params, grads)
            losses.append(loss)
        hist["loss"].append(float(np.mean(losses)))
        if val_features:
            acc = step_accuracy(model, val_features, val_labels)
            hist["val_acc"].append(acc)
            if acc > best_acc:
                best_acc = acc
                best = (copy.deepcopy(model.params), epoch)
    if best is not None:
        params, hist["best_epoch"] = best
        return TcnModel(cfg, params, hist)
    hist["best_epoch"] = cfg.epochs
    return TcnModel(cfg, model.params, hist)


def tcn_segment(model: TcnModel, feats: FeatureSequence, threshold: float = 0.5) -> Segmentation:
    probs = tcn_forward(model, feats)
    step_s = feats.stride_frames / feats.fps
    n_frames = feats.n_frames if feats.n_frames is not None else \
        (len(feats) - 1) * feats.stride_frames + feats.window_frames
    return Segmentation(threshold_scores(probs[:, 1], threshold), probs[:, 1].astype(np.float64), step_s,
                        window_center_offset(feats.window_frames, feats.stride_frames, feats.fps),
                        n_frames / feats.fps)


def tcn_config_to_dict(cfg: TcnConfig) -> dict:
    return asdict(cfg)
