"""Command-line surface: ``nnsdetect <command> ...``.

Exit codes: 0 success, 1 usage error, 2 malformed input file, 3 numeric failure.
``NNS_THREADS`` caps the BLAS / numba worker threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def _apply_thread_cap() -> int | None:
    raw = os.environ.get("NNS_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        return None
    if n < 1:
        return None
    for var in _THREAD_VARS:
        os.environ[var] = str(n)
    return n


_THREADS = _apply_thread_cap()

import numpy as np  # noqa: E402

from . import io  # noqa: E402
from .config import ConfigError, PipelineConfig, config_to_dict, load_config  # noqa: E402
from .io import FormatError  # noqa: E402

log = logging.getLogger("nnsdetect")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers ---------------------------------------------------------------------

def _cfg(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = _with_seed(cfg, args.seed)
    return cfg


def _with_seed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed, synth=replace(cfg.synth, seed=seed),
                   recognizer=replace(cfg.recognizer, seed=seed),
                   segmenter=replace(cfg.segmenter, tcn=replace(cfg.segmenter.tcn, seed=seed)))


def _manifest(path, cfg: PipelineConfig, **extra):
    io.write_manifest(path, config_to_dict(cfg), cfg.seed, **extra)


def _parse_box(text: str):
    from .track import BoundingBox

    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--box expects x,y,w,h, got {text!r}") from None
    if len(vals) != 4:
        raise UsageError(f"--box expects x,y,w,h, got {text!r}")
    return BoundingBox(*vals)


def _read_first_box(path):
    from .track import BoundingBox

    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise FormatError("box trace has no rows", 0, path)
    try:
        r = rows[0]
        return BoundingBox(float(r["x"]), float(r["y"]), float(r["w"]), float(r["h"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"bad box trace row: {e}", None, path) from None


def _read_labels(path) -> list[tuple[str, int]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    out = []
    for i, r in enumerate(rows, start=2):
        try:
            out.append((r["file"], int(r["label"])))
        except (KeyError, ValueError, TypeError):
            raise FormatError(f"line {i}: expected file,label", None, path) from None
    return out


def _load_clip_set(labels_path, clip_dir, cfg: PipelineConfig):
    from .recognizer import to_clip_tensor

    entries = _read_labels(labels_path)
    if not entries:
        raise FormatError("label file lists no clips", None, labels_path)
    base = Path(clip_dir) if clip_dir else Path(labels_path).parent
    ch = cfg.recognizer.in_channels
    xs = [to_clip_tensor(io.read_nnsv(base / name, channels=ch).frames) for name, _ in entries]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise FormatError(f"clips differ in shape: {sorted(shapes)}", None, labels_path)
    return np.stack(xs), np.array([lab for _, lab in entries], dtype=np.int64), [n for n, _ in entries]


def _check_finite(arr, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


# --- commands -------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from dataclasses import replace

    from .synthgen import Jitter, gen_clip_dataset, gen_event_track, render_video

    cfg = _cfg(args)
    synth = cfg.synth
    if args.jitter_amplitude is not None:
        synth = replace(synth, jitter=Jitter(args.jitter_amplitude, args.jitter_period))
    out = Path(args.out)
    if args.kind == "video":
        track = gen_event_track(args.duration, synth)
        video, boxes = render_video(track, synth)
        io.write_nnsv(out.with_suffix(".nnsv"), video.frames, video.fps)
        io.write_annotations(out.with_suffix(".csv"), track)
        io.atomic_write(out.with_suffix(".boxes.csv"), io.encode_box_trace(boxes, np.full(len(boxes), np.nan)))
        _manifest(out.with_suffix(".nnsv"), replace(cfg, synth=synth), duration_s=args.duration)
        print(f"wrote {out.with_suffix('.nnsv')} ({len(video)} frames, {len(track)} events)")
        return EXIT_OK
    clips = gen_clip_dataset(synth, args.n_pos, args.n_neg, args.clip_len)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    width = max(4, len(str(len(clips))))
    for i, c in enumerate(clips):
        stem = f"clip_{i:0{width}d}"
        io.write_nnsv(out / f"{stem}.nnsv", c.video.frames, c.video.fps)
        io.atomic_write(out / f"{stem}.boxes.csv", io.encode_box_trace(c.boxes, np.full(len(c.boxes), np.nan)))
        rows.append((f"{stem}.nnsv", c.label))
    io.atomic_write(out / "labels.csv", io._csv(("file", "label"), rows))
    _manifest(out / "labels.csv", replace(cfg, synth=synth), n_pos=args.n_pos, n_neg=args.n_neg)
    print(f"wrote {len(clips)} clips to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .pipeline import encode_crops
    from .track import crop_video, stabilize_boxes

    cfg = _cfg(args)
    pcfg = cfg.preprocess_config()
    inputs = [Path(p) for p in args.input]
    if len(inputs) > 1 and not args.out_dir:
        raise UsageError("several inputs need --out-dir")
    if args.box and len(inputs) > 1:
        raise UsageError("--box applies to a single input")
    for src in inputs:
        video = io.read_nnsv(src)
        box = _parse_box(args.box) if args.box else _read_first_box(src.with_suffix(".boxes.csv"))
        stab = stabilize_boxes(video, box, pcfg.smooth_window, pcfg.redetect_every)
        enc = encode_crops(crop_video(video, stab.boxes, pcfg.crop_size), pcfg)
        dst = Path(args.out_dir) / src.name if args.out_dir else Path(args.out)
        io.write_nnsv(dst, enc.frames, enc.fps)
        if args.trace:
            io.atomic_write(dst.with_suffix(".trace.csv"), io.encode_box_trace(stab.boxes, stab.psr))
        _manifest(dst, cfg, source=src.name, channels=3 if pcfg.input_mode == "flow" else 1)
    if args.out_dir:
        for lab in {p.parent / "labels.csv" for p in inputs}:
            if lab.exists():
                io.atomic_write(Path(args.out_dir) / "labels.csv", lab.read_text(encoding="utf-8"))
    print(f"preprocessed {len(inputs)} video(s)")
    return EXIT_OK


def cmd_train_recognizer(args) -> int:
    from dataclasses import replace

    from .recognizer import train

    cfg = _cfg(args)
    rcfg = cfg.recognizer
    if args.epochs is not None:
        rcfg = replace(rcfg, epochs=args.epochs)
    x, y, _ = _load_clip_set(args.labels, args.clip_dir, cfg)
    vx = vy = None
    if args.val_labels:
        vx, vy, _ = _load_clip_set(args.val_labels, args.val_dir, cfg)

    def progress(epoch, hist):
        _check_finite(hist["train_loss"][-1], "training loss")
        val = f" val_acc {hist['val_acc'][-1]:.3f}" if hist["val_acc"] else ""
        log.info("epoch %d loss %.4f%s", epoch, hist["train_loss"][-1], val)

    model = train(x, y, vx, vy, rcfg, progress=progress)
    io.write_model(args.out, model)
    _manifest(args.out, replace(cfg, recognizer=rcfg), best_epoch=model.history.get("best_epoch"))
    print(f"wrote {args.out} (best epoch {model.history.get('best_epoch')})")
    return EXIT_OK


def _load_recognizer(path):
    from .recognizer import RecognizerModel

    model = io.read_model(path)
    if not isinstance(model, RecognizerModel):
        raise FormatError("not a recognizer model", None, path)
    return model


def _classify_video(model, path, stride):
    from .recognizer import classify_windows

    video = io.read_nnsv(path, channels=model.config.in_channels)
    conf, feats = classify_windows(model, video, model.config.n_frames, stride)
    _check_finite(conf.scores, "confidences")
    return conf, feats


def _feature_meta(feats) -> dict:
    return {"window_frames": feats.window_frames, "stride_frames": feats.stride_frames,
            "fps": feats.fps, "n_frames": feats.n_frames}


def cmd_classify(args) -> int:
    from .recognizer import predict_proba

    cfg = _cfg(args)
    model = _load_recognizer(args.model)
    if args.labels:
        x, y, names = _load_clip_set(args.labels, args.clip_dir, cfg)
        p = predict_proba(model, x)
        _check_finite(p, "confidences")
        io.atomic_write(args.out, io._csv(("file", "confidence", "label"),
                                          ((n, repr(float(s)), int(l)) for n, s, l in zip(names, p, y))))
        print(f"scored {len(p)} clips -> {args.out}")
        return EXIT_OK
    if not args.input:
        raise UsageError("classify needs --input (video) or --labels (clip set)")
    conf, feats = _classify_video(model, args.input, args.stride)
    io.atomic_write(args.out, io.encode_confidences(conf))
    _manifest(args.out, cfg, source=Path(args.input).name)
    if args.features:
        io.write_nnsx(args.features, feats.features)
        _manifest(args.features, cfg, source=Path(args.input).name, **_feature_meta(feats))
    print(f"classified {len(conf)} windows -> {args.out}")
    return EXIT_OK


def cmd_extract_features(args) -> int:
    cfg = _cfg(args)
    model = _load_recognizer(args.model)
    _, feats = _classify_video(model, args.input, 1)
    io.write_nnsx(args.out, feats.features)
    _manifest(args.out, cfg, source=Path(args.input).name, **_feature_meta(feats))
    print(f"wrote {args.out} ({feats.features.shape[0]} x {feats.features.shape[1]})")
    return EXIT_OK


def _read_features(path, cfg: PipelineConfig):
    from .recognizer import WINDOW_FRAMES
    from .segmenter import FeatureSequence

    x = io.read_nnsx(path)
    meta = io.read_manifest(path) or {}
    return FeatureSequence(x, meta.get("window_frames", WINDOW_FRAMES), meta.get("stride_frames", 1),
                           meta.get("fps", cfg.synth.fps), meta.get("n_frames"))


def cmd_train_segmenter(args) -> int:
    from dataclasses import replace

    from .segmenter import labels_to_steps, tcn_train

    cfg = _cfg(args)
    tcfg = cfg.segmenter.tcn
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    if len(args.features) != len(args.annotations):
        raise UsageError("--features and --annotations need the same number of files")
    feats, labels = [], []
    for fp, ap in zip(args.features, args.annotations):
        f = _read_features(fp, cfg)
        track = io.read_annotations(ap, f.n_frames / f.fps if f.n_frames else None)
        feats.append(f.features)
        labels.append(labels_to_steps(track, f.window_frames, f.stride_frames, f.fps, f.n_frames))
    if tcfg.input_dim != feats[0].shape[1]:
        tcfg = replace(tcfg, input_dim=int(feats[0].shape[1]))
    model = tcn_train(feats, labels, tcfg)
    _check_finite(model.history["loss"], "training loss")
    io.write_model(args.out, model)
    _manifest(args.out, replace(cfg, segmenter=replace(cfg.segmenter, tcn=tcfg)))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    from .segmenter import AGGREGATORS, TcnModel, tcn_segment

    cfg = _cfg(args)
    method = args.method or cfg.segmenter.method
    threshold = cfg.segmenter.threshold if args.threshold is None else args.threshold
    if method == "tcn":
        if not args.model:
            raise UsageError("--method tcn needs --model")
        model = io.read_model(args.model)
        if not isinstance(model, TcnModel):
            raise FormatError("not a segmenter model", None, args.model)
        seg = tcn_segment(model, _read_features(args.input, cfg), threshold)
    else:
        seg = AGGREGATORS[method](io.read_confidences(args.input), threshold)
    _check_finite(seg.scores, "step scores")
    track = seg.to_track(cfg.segmenter.merge_gap_s, cfg.segmenter.min_duration_s)
    out = Path(args.out)
    io.write_events_json(out.with_suffix(".json"), track)
    io.atomic_write(out.with_suffix(".steps.csv"), io.encode_step_csv(seg))
    if args.svg:
        gt = io.read_annotations(args.gt, track.duration_s) if args.gt else None
        io.atomic_write(args.svg, io.timeline_svg(track.duration_s, gt, track, seg.step_starts, seg.scores))
    _manifest(out.with_suffix(".json"), cfg, method=method, threshold=threshold, duration_s=track.duration_s)
    print(f"{len(track)} event(s) -> {out.with_suffix('.json')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from dataclasses import asdict

    from .metrics import ap_ar, clip_metrics, cohen_kappa
    from .timeline import binarize

    cfg = _cfg(args)
    if args.kind == "seg":
        if not args.pred or len(args.pred) != len(args.gt):
            raise UsageError("eval seg needs matching --pred and --gt lists")
        subjects = args.subject or [f"s{i}" for i in range(len(args.pred))]
        if len(subjects) != len(args.pred):
            raise UsageError("--subject must be given once per clip")
        clips: dict[str, list] = {}
        for s, pp, gp in zip(subjects, args.pred, args.gt):
            pred = io.read_events_json(pp)
            gt = io.read_annotations(gp)
            horizon = max(pred.duration_s, gt.duration_s)
            pred = io.decode_events_json(Path(pp).read_text(encoding="utf-8"), horizon, pp)
            gt = io.read_annotations(gp, horizon)
            clips.setdefault(s, []).append((pred, gt))
        report = ap_ar(clips, cfg.metrics.iou_thresholds).to_dict()
    elif args.kind == "clf":
        with open(args.scores, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        try:
            conf = [float(r["confidence"]) for r in rows]
            lab = [int(r["label"]) for r in rows]
        except (KeyError, ValueError) as e:
            raise FormatError(f"bad score row: {e}", None, args.scores) from None
        thresholds = args.threshold or [cfg.metrics.clip_threshold]
        report = {"thresholds": thresholds, "per_threshold": {}}
        for t in thresholds:
            m = clip_metrics(conf, lab, t)
            report["per_threshold"][str(t)] = asdict(m)
    else:
        window = args.window or cfg.metrics.kappa_window_s
        a = io.read_annotations(args.a, args.duration, args.event_type)
        b = io.read_annotations(args.b, args.duration, args.event_type)
        if args.duration is None:
            horizon = max(a.duration_s, b.duration_s)
            a = io.read_annotations(args.a, horizon, args.event_type)
            b = io.read_annotations(args.b, horizon, args.event_type)
        k = cohen_kappa(binarize(a, window), binarize(b, window))
        report = asdict(k)
    io.write_report(args.out, report)
    print(json.dumps(report.get("mean") or report.get("per_threshold") or report))
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nnsdetect", description="Synthetic NNS detection pipeline toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="pipeline config JSON (defaults apply to absent keys)")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        return sp

    s = common(sub.add_parser("synth", help="generate synthetic clips or a long video"))
    s.add_argument("kind", choices=("clips", "video"), help="clip dataset or one long video")
    s.add_argument("--out", required=True, help="output directory (clips) or file stem (video)")
    s.add_argument("--duration", type=float, default=60.0, help="video length in seconds")
    s.add_argument("--n-pos", type=int, default=200, help="positive clips")
    s.add_argument("--n-neg", type=int, default=200, help="negative clips")
    s.add_argument("--clip-len", type=float, default=2.5, help="clip length in seconds")
    s.add_argument("--jitter-amplitude", type=float, help="enable horizontal jitter of this amplitude (px)")
    s.add_argument("--jitter-period", type=float, default=2.0, help="jitter period in seconds")
    s.set_defaults(func=cmd_synth)

    s = common(sub.add_parser("preprocess", help="stabilized crop + HSV flow"))
    s.add_argument("--input", nargs="+", required=True, help="NNSV video(s)")
    s.add_argument("--out", help="output NNSV (single input)")
    s.add_argument("--out-dir", help="output directory (several inputs)")
    s.add_argument("--box", help="initial face box x,y,w,h (default: first row of <input>.boxes.csv)")
    s.add_argument("--trace", action="store_true", help="also write the stabilized box trace CSV")
    s.set_defaults(func=cmd_preprocess)

    s = common(sub.add_parser("train-recognizer", help="train the clip classifier"))
    s.add_argument("--labels", required=True, help="CSV file,label of preprocessed clips")
    s.add_argument("--clip-dir", help="directory holding the clips (default: beside --labels)")
    s.add_argument("--val-labels", help="validation CSV file,label")
    s.add_argument("--val-dir", help="validation clip directory")
    s.add_argument("--epochs", type=int, help="override the configured epoch count")
    s.add_argument("--out", required=True, help="model file (NNSM)")
    s.set_defaults(func=cmd_train_recognizer)

    s = common(sub.add_parser("classify", help="score clips or slide windows over a video"))
    s.add_argument("--model", required=True, help="recognizer model (NNSM)")
    s.add_argument("--input", help="preprocessed video (NNSV)")
    s.add_argument("--labels", help="clip-set CSV instead of a video; writes file,confidence,label")
    s.add_argument("--clip-dir", help="clip directory for --labels")
    s.add_argument("--stride", type=int, default=1, help="window stride in frames")
    s.add_argument("--out", required=True, help="confidence JSON (video) or score CSV (clips)")
    s.add_argument("--features", help="also write window features (NNSX)")
    s.set_defaults(func=cmd_classify)

    s = common(sub.add_parser("extract-features", help="stride-1 window features for the segmenter"))
    s.add_argument("--model", required=True, help="recognizer model (NNSM)")
    s.add_argument("--input", required=True, help="preprocessed video (NNSV)")
    s.add_argument("--out", required=True, help="feature matrix (NNSX)")
    s.set_defaults(func=cmd_extract_features)

    s = common(sub.add_parser("train-segmenter", help="train the dilated temporal segmenter"))
    s.add_argument("--features", nargs="+", required=True, help="NNSX feature files")
    s.add_argument("--annotations", nargs="+", required=True, help="matching annotation CSVs")
    s.add_argument("--epochs", type=int, help="override the configured epoch count")
    s.add_argument("--out", required=True, help="model file (NNSM)")
    s.set_defaults(func=cmd_train_segmenter)

    s = common(sub.add_parser("segment", help="turn window scores into events"))
    s.add_argument("--method", choices=("tiled", "sliding", "smoothed", "tcn"), help="aggregation rule")
    s.add_argument("--threshold", type=float, help="confidence threshold")
    s.add_argument("--input", required=True, help="confidence JSON, or NNSX features for tcn")
    s.add_argument("--model", help="segmenter model for --method tcn")
    s.add_argument("--out", required=True, help="output stem: <stem>.json events, <stem>.steps.csv")
    s.add_argument("--svg", help="optional SVG timeline path")
    s.add_argument("--gt", help="ground-truth annotation CSV for the SVG")
    s.set_defaults(func=cmd_segment)

    s = common(sub.add_parser("eval", help="metric reports"))
    s.add_argument("kind", choices=("seg", "clf", "kappa"), help="report type")
    s.add_argument("--pred", nargs="+", help="seg: predicted events JSON files")
    s.add_argument("--gt", nargs="+", help="seg: ground-truth annotation CSVs")
    s.add_argument("--subject", nargs="+", help="seg: subject id per clip")
    s.add_argument("--scores", help="clf: CSV with confidence,label columns")
    s.add_argument("--threshold", type=float, action="append", help="clf: threshold (repeatable)")
    s.add_argument("--a", help="kappa: first rater's annotation CSV")
    s.add_argument("--b", help="kappa: second rater's annotation CSV")
    s.add_argument("--event-type", default=io.DEFAULT_EVENT_TYPE, help="kappa: event type to compare")
    s.add_argument("--window", type=float, help="kappa: window width in seconds")
    s.add_argument("--duration", type=float, help="kappa: timeline length (default: last event end)")
    s.add_argument("--out", required=True, help="report stem: <stem>.json and <stem>.csv")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if _THREADS is not None:
        try:
            import numba

            numba.set_num_threads(min(_THREADS, numba.config.NUMBA_NUM_THREADS))
        except (ImportError, ValueError):
            pass
    if args.command == "eval":
        need = {"seg": ("pred", "gt"), "clf": ("scores",), "kappa": ("a", "b")}[args.kind]
        missing = [n for n in need if not getattr(args, n)]
        if missing:
            parser.error(f"eval {args.kind} needs --{', --'.join(missing)}")
    if args.command == "preprocess" and not (args.out or args.out_dir):
        parser.error("preprocess needs --out or --out-dir")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"nnsdetect: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError) as e:
        print(f"nnsdetect: malformed input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as e:
        print(f"nnsdetect: malformed input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, FloatingPointError) as e:
        print(f"nnsdetect: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
