"""File formats: NNSV/NNSF/NNSX/NNSM binaries, annotation CSV, events JSON, reports.

All binaries are little-endian. Every writer goes through :func:`atomic_write`
(temp file in the target directory, then ``os.replace``).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .timeline import Event, EventTrack

NNSV_VERSION = 1
NNSM_VERSION = 1
DEFAULT_EVENT_TYPE = "nns"


class FormatError(ValueError):
    """Malformed input file; ``offset`` is the byte (or line) where parsing failed."""

    def __init__(self, message: str, offset: int | None = None, path: str | os.PathLike | None = None):
        where = "" if offset is None else f" at byte {offset}"
        src = "" if path is None else f"{path}: "
        super().__init__(f"{src}{message}{where}")
        self.offset = offset
        self.path = path


def atomic_write(path: str | os.PathLike, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class _Reader:
    """Cursor over a byte buffer that reports offsets on failure."""

    def __init__(self, data: bytes, path=None):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated {what} (need {n} bytes, {len(self.data) - self.pos} left)",
                              self.pos, self.path)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}", 0, self.path)

    def f32(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float32)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.pos, self.path)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


# --- NNSV video --------------------------------------------------------------

def _fps_milli(fps: float) -> int:
    m = int(round(fps * 1000))
    if m <= 0:
        raise ValueError("fps must be positive")
    return m


def encode_nnsv(frames: np.ndarray, fps: float) -> bytes:
    """``frames``: uint8 ``[n, h, w]``; multi-channel clips ``[n, c, h, w]`` are stored with their planes stacked vertically."""
    x = np.asarray(frames)
    if x.dtype != np.uint8:
        raise ValueError("NNSV frames must be uint8")
    if x.ndim == 4:
        x = x.reshape(x.shape[0], x.shape[1] * x.shape[2], x.shape[3])
    if x.ndim != 3:
        raise ValueError("frames must be [n, h, w] or [n, c, h, w]")
    n, h, w = x.shape
    head = b"NNSV" + struct.pack("<5I", NNSV_VERSION, n, h, w, _fps_milli(fps))
    return head + np.ascontiguousarray(x).tobytes()


def decode_nnsv(data: bytes, path=None) -> tuple[np.ndarray, float]:
    r = _Reader(data, path)
    r.magic(b"NNSV")
    version = r.u32("version")
    if version != NNSV_VERSION:
        raise FormatError(f"unsupported NNSV version {version}", 4, path)
    n, h, w, fm = (r.u32(k) for k in ("n_frames", "height", "width", "fps_milli"))
    if fm == 0:
        raise FormatError("fps_milli is zero", 20, path)
    frames = np.frombuffer(r.take(n * h * w, "frame data"), dtype=np.uint8).reshape(n, h, w).copy()
    r.done()
    return frames, fm / 1000.0


def write_nnsv(path, frames: np.ndarray, fps: float) -> Path:
    return atomic_write(path, encode_nnsv(frames, fps))


def read_nnsv(path, channels: int = 1):
    """Read an NNSV file as a FrameSequence; ``channels > 1`` splits stacked planes into ``[n, c, h, w]``."""
    from .synthgen import FrameSequence

    frames, fps = decode_nnsv(_read_bytes(path), path)
    if channels > 1:
        n, hh, w = frames.shape
        if hh % channels:
            raise FormatError(f"height {hh} is not a multiple of {channels} channels", 12, path)
        frames = frames.reshape(n, channels, hh // channels, w)
    return FrameSequence(frames, fps)


# --- NNSF flow dump -----------------------------------------------------------

def encode_nnsf(u: np.ndarray, v: np.ndarray, fps: float) -> bytes:
    """``u``, ``v``: ``[n, h, w]`` displacement planes, stored interleaved per pixel."""
    u, v = np.asarray(u), np.asarray(v)
    if u.shape != v.shape or u.ndim != 3:
        raise ValueError("u and v must be matching [n, h, w] arrays")
    n, h, w = u.shape
    head = b"NNSF" + struct.pack("<5I", NNSV_VERSION, n, h, w, _fps_milli(fps))
    return head + np.stack([u, v], axis=-1).astype("<f4").tobytes()


def decode_nnsf(data: bytes, path=None) -> tuple[np.ndarray, np.ndarray, float]:
    r = _Reader(data, path)
    r.magic(b"NNSF")
    version = r.u32("version")
    if version != NNSV_VERSION:
        raise FormatError(f"unsupported NNSF version {version}", 4, path)
    n, h, w, fm = (r.u32(k) for k in ("n_frames", "height", "width", "fps_milli"))
    if fm == 0:
        raise FormatError("fps_milli is zero", 20, path)
    uv = r.f32(n * h * w * 2, "flow data").reshape(n, h, w, 2)
    r.done()
    return uv[..., 0].copy(), uv[..., 1].copy(), fm / 1000.0


def write_nnsf(path, u, v, fps: float) -> Path:
    return atomic_write(path, encode_nnsf(u, v, fps))


def read_nnsf(path):
    return decode_nnsf(_read_bytes(path), path)


# --- NNSX feature matrix ------------------------------------------------------

def encode_nnsx(features: np.ndarray) -> bytes:
    x = np.asarray(features)
    if x.ndim != 2:
        raise ValueError("features must be a [T, D] matrix")
    return b"NNSX" + struct.pack("<2I", *x.shape) + x.astype("<f4").tobytes()


def decode_nnsx(data: bytes, path=None) -> np.ndarray:
    r = _Reader(data, path)
    r.magic(b"NNSX")
    t, d = r.u32("T"), r.u32("D")
    x = r.f32(t * d, "feature data").reshape(t, d)
    r.done()
    return x


def write_nnsx(path, features: np.ndarray) -> Path:
    return atomic_write(path, encode_nnsx(features))


def read_nnsx(path) -> np.ndarray:
    return decode_nnsx(_read_bytes(path), path)


# --- NNSM model -----------------------------------------------------------------
# Layout: "NNSM", u32 version, u32 header length, UTF-8 JSON header
# {"kind", "config", "history"}, u32 tensor count, then per tensor: u32 name
# length, UTF-8 name, u32 rank, rank x u32 dims, f32 data. Tensors follow the
# parameter order produced by the model's initializer.

def _model_kind(model) -> str:
    from .recognizer import RecognizerModel
    from .segmenter import TcnModel

    if isinstance(model, RecognizerModel):
        return "recognizer"
    if isinstance(model, TcnModel):
        return "tcn"
    raise TypeError(f"not a model: {type(model).__name__}")


def _config_dict(kind: str, cfg) -> dict:
    from .recognizer import config_to_dict
    from .segmenter import tcn_config_to_dict

    return config_to_dict(cfg) if kind == "recognizer" else tcn_config_to_dict(cfg)


def encode_nnsm(model) -> bytes:
    kind = _model_kind(model)
    header = json.dumps({"kind": kind, "config": _config_dict(kind, model.config),
                         "history": model.history}, sort_keys=True).encode("utf-8")
    out = [b"NNSM", struct.pack("<2I", NNSM_VERSION, len(header)), header,
           struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack(f"<{1 + arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.asarray(arr).astype("<f4").tobytes())
    return b"".join(out)


def decode_nnsm(data: bytes, path=None):
    from .recognizer import RecognizerConfig, RecognizerModel, init_model
    from .segmenter import TcnConfig, TcnModel, tcn_init

    r = _Reader(data, path)
    r.magic(b"NNSM")
    version = r.u32("version")
    if version != NNSM_VERSION:
        raise FormatError(f"unsupported NNSM version {version}", 4, path)
    n_head = r.u32("header length")
    at = r.pos
    try:
        header = json.loads(r.take(n_head, "header").decode("utf-8"))
        kind, cfg_d = header["kind"], header["config"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"bad model header: {e}", at, path) from None
    try:
        if kind == "recognizer":
            cfg = RecognizerConfig(**cfg_d)
            template = init_model(cfg).params
        elif kind == "tcn":
            cfg = TcnConfig(**cfg_d)
            template = tcn_init(cfg).params
        else:
            raise ValueError(f"unknown model kind {kind!r}")
    except (TypeError, ValueError) as e:
        raise FormatError(f"bad model config: {e}", at, path) from None
    count_at = r.pos
    count = r.u32("tensor count")
    if count != len(template):
        raise FormatError(f"expected {len(template)} tensors, found {count}", count_at, path)
    params = {}
    for expected in template:
        at = r.pos
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8", errors="replace")
        if name != expected:
            raise FormatError(f"tensor {name!r} out of order, expected {expected!r}", at, path)
        rank = r.u32("rank")
        shape = tuple(r.u32("dim") for _ in range(rank))
        if shape != template[name].shape:
            raise FormatError(f"tensor {name!r} has shape {shape}, expected {template[name].shape}", at, path)
        params[name] = r.f32(int(np.prod(shape, dtype=np.int64)), f"tensor {name}").reshape(shape)
    r.done()
    history = header.get("history") or {}
    return (RecognizerModel if kind == "recognizer" else TcnModel)(cfg, params, history)


def write_model(path, model) -> Path:
    return atomic_write(path, encode_nnsm(model))


def read_model(path):
    return decode_nnsm(_read_bytes(path), path)


# --- annotation CSV / events JSON --------------------------------------------

ANNOTATION_HEADER = ("event_type", "start_s", "end_s", "confidence")


def encode_annotations(track: EventTrack, event_type: str = DEFAULT_EVENT_TYPE) -> str:
    with_conf = any(e.confidence is not None for e in track.events)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANNOTATION_HEADER if with_conf else ANNOTATION_HEADER[:3])
    for e in track.events:
        row = [event_type, repr(float(e.start_s)), repr(float(e.end_s))]
        if with_conf:
            row.append("" if e.confidence is None else repr(float(e.confidence)))
        w.writerow(row)
    return buf.getvalue()


def _parse_float(text: str, line: int, path) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"line {line}: not a number: {text!r}", None, path) from None


def decode_annotations(text: str, duration_s: float | None = None, event_type: str | None = DEFAULT_EVENT_TYPE,
                       path=None) -> EventTrack:
    """Parse annotation CSV rows of one event type (``None`` keeps every row).

    The track horizon defaults to the last event end when ``duration_s`` is not
    given.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) not in (ANNOTATION_HEADER, ANNOTATION_HEADER[:3]):
        raise FormatError("missing or wrong annotation header", 0, path)
    ncol = len(rows[0])
    events = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise FormatError(f"line {i}: expected {ncol} fields, got {len(row)}", None, path)
        if event_type is not None and row[0].strip() != event_type:
            continue
        conf = None
        if ncol == 4 and row[3].strip():
            conf = _parse_float(row[3], i, path)
        try:
            events.append(Event(_parse_float(row[1], i, path), _parse_float(row[2], i, path), conf))
        except ValueError as e:
            raise FormatError(f"line {i}: {e}", None, path) from None
    events.sort(key=lambda e: e.start_s)
    if duration_s is None:
        duration_s = events[-1].end_s if events else 0.0
    try:
        return EventTrack(tuple(events), duration_s)
    except ValueError as e:
        raise FormatError(str(e), None, path) from None


def write_annotations(path, track: EventTrack, event_type: str = DEFAULT_EVENT_TYPE) -> Path:
    return atomic_write(path, encode_annotations(track, event_type))


def read_annotations(path, duration_s: float | None = None, event_type: str | None = DEFAULT_EVENT_TYPE) -> EventTrack:
    return decode_annotations(Path(path).read_text(encoding="utf-8"), duration_s, event_type, path)


def encode_events_json(track: EventTrack) -> str:
    return json.dumps([{"start_s": e.start_s, "end_s": e.end_s, "confidence": e.confidence}
                       for e in track.events], indent=1) + "\n"


def decode_events_json(text: str, duration_s: float | None = None, path=None) -> EventTrack:
    try:
        items = json.loads(text)
        events = [Event(float(d["start_s"]), float(d["end_s"]),
                        None if d.get("confidence") is None else float(d["confidence"])) for d in items]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad events JSON: {e}", None, path) from None
    if duration_s is None:
        duration_s = events[-1].end_s if events else 0.0
    try:
        return EventTrack(tuple(events), duration_s)
    except ValueError as e:
        raise FormatError(str(e), None, path) from None


def write_events_json(path, track: EventTrack) -> Path:
    return atomic_write(path, encode_events_json(track))


def read_events_json(path, duration_s: float | None = None) -> EventTrack:
    return decode_events_json(Path(path).read_text(encoding="utf-8"), duration_s, path)


# --- confidence dumps ------------------------------------------------------------

def encode_confidences(conf) -> str:
    return json.dumps({"window_frames": conf.window_frames, "stride_frames": conf.stride_frames,
                       "fps": conf.fps, "n_frames": conf.n_frames,
                       "scores": [float(s) for s in conf.scores]}) + "\n"


def read_confidences(path):
    from .segmenter import ConfidenceSequence

    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return ConfidenceSequence(np.asarray(d["scores"], dtype=np.float64), d["window_frames"],
                                  d["stride_frames"], d["fps"], d.get("n_frames"))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad confidence file: {e}", None, path) from None


# --- plain CSV dumps -------------------------------------------------------------

def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def encode_box_trace(boxes: np.ndarray, psr: np.ndarray) -> str:
    return _csv(("frame", "x", "y", "w", "h", "psr"),
                ([i, *(repr(float(v)) for v in b), repr(float(p))] for i, (b, p) in enumerate(zip(boxes, psr))))


def encode_step_csv(seg) -> str:
    return _csv(("step_start_s", "score", "label"),
                ([repr(float(t)), repr(float(s)), int(l)]
                 for t, s, l in zip(seg.step_starts, seg.scores, seg.labels)))


def encode_report_csv(report: dict) -> str:
    """Flat mirror of a metric report: one ``scope,threshold,metric,value`` row per number."""
    rows = []
    for subject, per_t in sorted(report.get("per_subject", {}).items()):
        for t, vals in per_t.items():
            rows.extend((subject, t, k, v) for k, v in vals.items())
    for t, vals in report.get("mean", {}).items():
        rows.extend(("mean", t, k, v) for k, v in vals.items())
    for k, v in report.items():
        if k not in ("per_subject", "mean", "thresholds") and not isinstance(v, (dict, list)):
            rows.append(("summary", "", k, v))
    return _csv(("scope", "threshold", "metric", "value"), rows)


def write_report(stem, report: dict) -> tuple[Path, Path]:
    """Write ``<stem>.json`` and its ``<stem>.csv`` mirror."""
    stem = Path(stem)
    j = atomic_write(stem.with_suffix(".json"), json.dumps(report, indent=1, sort_keys=True) + "\n")
    c = atomic_write(stem.with_suffix(".csv"), encode_report_csv(report))
    return j, c


# --- SVG timeline ------------------------------------------------------------------

def timeline_svg(duration_s: float, gt: EventTrack | None, pred: EventTrack, step_starts=None, scores=None,
                 width: int = 900) -> str:
    """Three bands: ground truth, score curve, prediction."""
    sx = width / max(duration_s, 1e-9)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="110" '
             f'viewBox="0 0 {width} 110"><rect width="{width}" height="110" fill="white"/>']

    def band(track, y, color):
        for e in track.events:
            parts.append(f'<rect x="{e.start_s * sx:.2f}" y="{y}" width="{max(e.duration_s * sx, 0.5):.2f}" '
                         f'height="20" fill="{color}"/>')

    if gt is not None:
        band(gt, 5, "#2a7")
    if scores is not None and len(scores):
        pts = " ".join(f"{t * sx:.2f},{85 - 50 * s:.2f}" for t, s in zip(step_starts, scores))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#333" stroke-width="1"/>')
    band(pred, 88, "#c44")
    parts.append("</svg>\n")
    return "\n".join(parts)


# --- manifests -----------------------------------------------------------------------

def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + ".manifest.json")


def write_manifest(artifact, config: dict, seed: int, **extra) -> Path:
    """Sidecar recording the config hash and seed that produced ``artifact``."""
    doc = {"artifact": Path(artifact).name, "config_sha256": config_hash(config), "seed": seed, **extra}
    return atomic_write(manifest_path(artifact), json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(artifact) -> dict | None:
    p = manifest_path(artifact)
    if not p.exists():
        return None
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"bad manifest: {e}", e.pos, p) from None
