"""Windowed NNS / non-NNS clip classifier: per-frame conv encoder + (bi)LSTM head."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .synthgen import FrameSequence

log = logging.getLogger(__name__)

FEATURE_DIM = 128
N_CLASSES = 2
WINDOW_FRAMES = 26


@dataclass(frozen=True)
class RecognizerConfig:
    conv_channels: tuple[int, ...] = (8, 16, 32)
    recurrent_hidden: int = 64
    bidirectional: bool = True
    feature_dim: int = FEATURE_DIM
    n_classes: int = N_CLASSES
    n_frames: int = WINDOW_FRAMES
    crop_size: int = 64
    input_mode: str = "flow"  # "flow" (3-channel HSV flow) or "gray" (raw frames)
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 16
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.feature_dim != FEATURE_DIM:
            raise ValueError(f"feature_dim is fixed at {FEATURE_DIM}")
        if self.n_classes != N_CLASSES:
            raise ValueError("the recognizer is binary")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.input_mode not in ("flow", "gray"):
            raise ValueError(f"unknown input_mode {self.input_mode!r}")
        if self.crop_size % (2 ** len(self.conv_channels)):
            raise ValueError("crop_size must be divisible by 2 ** number of conv blocks")

    @property
    def in_channels(self) -> int:
        return 3 if self.input_mode == "flow" else 1


@dataclass
class RecognizerModel:
    config: RecognizerConfig
    params: dict[str, np.ndarray]
    history: dict = field(default_factory=dict)

    def param_names(self) -> list[str]:
        return list(self.params)

    def astype(self, dtype) -> RecognizerModel:
        return RecognizerModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                               dict(self.history))


def init_model(cfg: RecognizerConfig, seed: int | None = None) -> RecognizerModel:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    p: dict[str, np.ndarray] = {}
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.conv_channels):
        std = np.sqrt(2.0 / (cin * 9))
        p[f"conv{i}.weight"] = rng.normal(0, std, (cout, cin, 3, 3))
        p[f"conv{i}.bias"] = np.zeros(cout)
        cin = cout
    hid = cfg.recurrent_hidden
    k = 1.0 / np.sqrt(hid)
    for d in ("fwd", "bwd") if cfg.bidirectional else ("fwd",):
        p[f"lstm_{d}.w_ih"] = rng.uniform(-k, k, (4 * hid, cin))
        p[f"lstm_{d}.w_hh"] = rng.uniform(-k, k, (4 * hid, hid))
        bias = rng.uniform(-k, k, 4 * hid)
        bias[hid:2 * hid] += 1.0
        p[f"lstm_{d}.bias"] = bias
    rec_out = hid * (2 if cfg.bidirectional else 1)
    for name, (o, i) in (("feature", (cfg.feature_dim, rec_out)), ("classifier", (cfg.n_classes, cfg.feature_dim))):
        lim = np.sqrt(6.0 / (i + o))
        p[f"{name}.weight"] = rng.uniform(-lim, lim, (o, i))
        p[f"{name}.bias"] = np.zeros(o)
    return RecognizerModel(cfg, {k: v.astype(np.float32) for k, v in p.items()})


# --- clip tensors ----------------------------------------------------------

def to_clip_tensor(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 frames ``[n, 3, S, S]`` (flow) or ``[n, S, S]`` (gray) -> ``[n, C, S, S]`` in [0, 1]."""
    x = np.asarray(frames)
    if x.ndim == 3:
        x = x[:, None]
    if x.dtype == np.uint8:
        return x.astype(dtype) / dtype(255.0)
    return x.astype(dtype)


def augment_params(rng: np.random.Generator) -> tuple[float, float, bool]:
    """One (angle_deg, scale, hflip) draw shared by every frame of a clip."""
    angle = float(rng.uniform(-15.0, 15.0))
    scale = float(rng.uniform(0.9, 1.1))
    flip = bool(rng.random() < 0.5)
    return angle, scale, flip


def apply_transform(clip: np.ndarray, angle_deg: float, scale: float, flip: bool) -> np.ndarray:
    """Rotate/scale about the center and optionally mirror; bilinear, edge replication.

    ``clip`` is ``[n, C, H, W]``; all frames and channels share one sampling grid.
    """
    h, w = clip.shape[-2:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if flip:
        xx = (w - 1) - xx
    a = np.deg2rad(angle_deg)
    ca, sa = np.cos(a) / scale, np.sin(a) / scale
    ys = ca * (yy - cy) - sa * (xx - cx) + cy
    xs = sa * (yy - cy) + ca * (xx - cx) + cx
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(clip.dtype)
    wx = (xs - x0).astype(clip.dtype)
    top = clip[..., y0, x0] * (1 - wx) + clip[..., y0, x1] * wx
    bot = clip[..., y1, x0] * (1 - wx) + clip[..., y1, x1] * wx
    return top * (1 - wy) + bot * wy


def augment(clip: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return apply_transform(clip, *augment_params(rng))


# --- forward / backward ----------------------------------------------------

def _encode_frames(params, cfg: RecognizerConfig, x):
    """Conv encoder on ``[N, C, S, S]`` frames -> per-frame vectors ``[N, C_last]``.

    Each block is conv -> 2x2 max-pool -> ReLU (ReLU commutes with max-pool,
    so this equals conv -> ReLU -> pool at a quarter of the cost).
    """
    h = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    caches = []
    for i in range(len(cfg.conv_channels)):
        h, cc = nn.conv3x3_forward(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"])
        h, pc = nn.maxpool2_forward(h)
        h, rc = nn.relu_forward(h)
        caches.append((cc, rc, pc))
    return h.mean(axis=(2, 3)).T, (caches, h.shape)


def _encode_backward(dvec, cache, params, cfg, grads):
    caches, shape = cache
    hw = shape[2] * shape[3]
    dh = np.broadcast_to((dvec.T / hw)[:, :, None, None], shape).astype(dvec.dtype)
    for i in range(len(cfg.conv_channels) - 1, -1, -1):
        cc, rc, pc = caches[i]
        dh = nn.relu_backward(dh, rc)
        dh = nn.maxpool2_backward(dh, pc)
        dh, dw, db = nn.conv3x3_backward(dh, cc, need_dx=i > 0)
        grads[f"conv{i}.weight"] = dw
        grads[f"conv{i}.bias"] = db


def _head_forward(params, cfg: RecognizerConfig, seq):
    """Recurrent + affine head on per-frame vectors ``[B, T, D]``."""
    hf, cf = nn.lstm_forward(seq, params["lstm_fwd.w_ih"], params["lstm_fwd.w_hh"], params["lstm_fwd.bias"])
    cb = None
    if cfg.bidirectional:
        hb, cb = nn.lstm_forward(seq[:, ::-1], params["lstm_bwd.w_ih"], params["lstm_bwd.w_hh"],
                                 params["lstm_bwd.bias"])
        rec = np.concatenate([hf, hb], axis=1)
    else:
        rec = hf
    feat = rec @ params["feature.weight"].T + params["feature.bias"]
    logits = feat @ params["classifier.weight"].T + params["classifier.bias"]
    return feat, logits, (cf, cb, rec, feat)


def _head_backward(dlogits, cache, params, cfg, grads):
    cf, cb, rec, feat = cache
    grads["classifier.weight"] = dlogits.T @ feat
    grads["classifier.bias"] = dlogits.sum(0)
    dfeat = dlogits @ params["classifier.weight"]
    grads["feature.weight"] = dfeat.T @ rec
    grads["feature.bias"] = dfeat.sum(0)
    drec = dfeat @ params["feature.weight"]
    hid = cfg.recurrent_hidden
    dseq = nn.lstm_backward(drec[:, :hid], cf, grads, "lstm_fwd")
    if cfg.bidirectional:
        dseq = dseq + nn.lstm_backward(drec[:, hid:], cb, grads, "lstm_bwd")[:, ::-1]
    return dseq


def _check_clips(model: RecognizerModel, clips: np.ndarray) -> None:
    cfg = model.config
    want = (cfg.n_frames, cfg.in_channels, cfg.crop_size, cfg.crop_size)
    if clips.shape[1:] != want:
        raise ValueError(f"clip shape {clips.shape[1:]} does not match model input {want}")


def forward_batch(model: RecognizerModel, clips: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``[B, n_frames, C, S, S]`` -> features ``[B, 128]`` and probabilities ``[B, 2]``."""
    clips = np.asarray(clips)
    _check_clips(model, clips)
    b, t = clips.shape[:2]
    vec, _ = _encode_frames(model.params, model.config, clips.reshape((b * t,) + clips.shape[2:]))
    feat, logits, _ = _head_forward(model.params, model.config, vec.reshape(b, t, -1))
    return feat, nn.softmax(logits)


def forward(model: RecognizerModel, clip: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One clip ``[n_frames, C, S, S]`` -> (128-d feature, class probabilities)."""
    feat, probs = forward_batch(model, np.asarray(clip)[None])
    return feat[0], probs[0]


def loss_and_grads(model: RecognizerModel, clips: np.ndarray, labels: np.ndarray) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    params, cfg = model.params, model.config
    b, t = clips.shape[:2]
    vec, enc_cache = _encode_frames(params, cfg, clips.reshape((b * t,) + clips.shape[2:]))
    _, logits, head_cache = _head_forward(params, cfg, vec.reshape(b, t, -1))
    loss, dlogits = nn.cross_entropy(logits, np.asarray(labels))
    grads: dict[str, np.ndarray] = {}
    dseq = _head_backward(dlogits, head_cache, params, cfg, grads)
    _encode_backward(dseq.reshape(b * t, -1), enc_cache, params, cfg, grads)
    return loss, grads


# --- training --------------------------------------------------------------

def predict_proba(model: RecognizerModel, clips: np.ndarray, batch: int = 32) -> np.ndarray:
    out = [forward_batch(model, clips[i:i + batch])[1][:, 1] for i in range(0, len(clips), batch)]
    return np.concatenate(out) if out else np.zeros(0)


def accuracy(model: RecognizerModel, clips: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean((predict_proba(model, clips) >= 0.5).astype(int) == np.asarray(labels)))


def train(train_clips: np.ndarray, train_labels: Sequence[int], val_clips: np.ndarray | None,
          val_labels: Sequence[int] | None, cfg: RecognizerConfig = RecognizerConfig(),
          progress=None) -> RecognizerModel:
    """Adam on mean cross-entropy; returns the epoch with the best validation accuracy.

    Clips are float ``[N, n_frames, C, S, S]`` arrays in [0, 1]. Augmentation
    touches training clips only. Ties in validation accuracy keep the earlier
    epoch; without a validation set the final epoch is returned.
    """
    x = np.asarray(train_clips, dtype=np.float32)
    y = np.asarray(train_labels, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(np.unique(y)) < 2:
        raise ValueError("training set has a single class")
    model = init_model(cfg)
    _check_clips(model, x)
    opt = nn.Adam(model.params, cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    best_params, best_acc, best_epoch = None, -1.0, 0
    hist = {"train_loss": [], "val_acc": []}
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        losses = []
        for s in range(0, len(x), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb = x[idx]
            if cfg.augment:
                xb = np.stack([augment(c, rng) for c in xb]).astype(np.float32)
            loss, grads = loss_and_grads(model, xb, y[idx])
            opt.step(model.params, grads)
            losses.append(loss)
        hist["train_loss"].append(float(np.mean(losses)))
        if val_clips is not None and len(val_clips):
            acc = accuracy(model, np.asarray(val_clips, dtype=np.float32), np.asarray(val_labels))
            hist["val_acc"].append(acc)
            if acc > best_acc:
                best_acc, best_epoch = acc, epoch
                best_params = copy.deepcopy(model.params)
        if progress is not None:
            progress(epoch, hist)
        log.debug("epoch %d loss %.4f", epoch, hist["train_loss"][-1])
    if best_params is None:
        best_params, best_epoch = model.params, cfg.epochs
    hist["best_epoch"] = best_epoch
    return RecognizerModel(cfg, best_params, hist)


# --- long videos -----------------------------------------------------------

def window_starts(n_frames: int, window_frames: int = WINDOW_FRAMES, stride_frames: int = 1) -> np.ndarray:
    if n_frames < window_frames:
        raise ValueError(f"video of {n_frames} frames is shorter than one {window_frames}-frame window")
    if stride_frames < 1:
        raise ValueError("stride must be >= 1")
    return np.arange(0, n_frames - window_frames + 1, stride_frames)


def classify_windows(model: RecognizerModel, video: FrameSequence, window_frames: int = WINDOW_FRAMES,
                     stride_frames: int = 1, chunk: int = 64):
    """Slide fixed windows over an encoded video; returns (ConfidenceSequence, FeatureSequence).

    The conv encoder is per-frame, so each frame is encoded once and shared by
    every window that contains it.
    """
    from .segmenter import ConfidenceSequence, FeatureSequence

    cfg = model.config
    if window_frames != cfg.n_frames:
        raise ValueError(f"model expects {cfg.n_frames}-frame windows")
    starts = window_starts(len(video), window_frames, stride_frames)
    x = to_clip_tensor(video.frames)
    want = (cfg.in_channels, cfg.crop_size, cfg.crop_size)
    if x.shape[1:] != want:
        raise ValueError(f"video frames {x.shape[1:]} do not match model input {want}")
    vecs = np.concatenate([_encode_frames(model.params, cfg, x[i:i + chunk])[0]
                           for i in range(0, len(x), chunk)])
    feats, confs = [], []
    for i in range(0, len(starts), chunk):
        s = starts[i:i + chunk]
        seq = np.stack([vecs[t:t + window_frames] for t in s])
        feat, logits, _ = _head_forward(model.params, cfg, seq)
        feats.append(feat)
        confs.append(nn.softmax(logits)[:, 1])
    meta = dict(window_frames=window_frames, stride_frames=stride_frames, fps=video.fps, n_frames=len(video))
    return (ConfidenceSequence(np.concatenate(confs).astype(np.float64), **meta),
            FeatureSequence(np.concatenate(feats).astype(np.float32), **meta))


def config_to_dict(cfg: RecognizerConfig) -> dict:
    d = asdict(cfg)
    d["conv_channels"] = list(cfg.conv_channels)
    return d
