"""End-to-end acceptance checks, one test per criterion.

Each test prints an ``ACCEPTANCE <n> PASS|FAIL`` line and the session ends
with a summary table. Criteria 1-3 share one trained recognizer and take
most of the runtime (about 40 minutes on one core).
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import clips_to_tensor, record

from nnsdetect import io
from nnsdetect.cli import main as cli_main
from nnsdetect.flow import dense_flow
from nnsdetect.metrics import ap_ar, cohen_kappa, match_events
from nnsdetect.pipeline import preprocess_clips, preprocess_video
from nnsdetect.recognizer import (
    RecognizerConfig,
    accuracy,
    classify_windows,
    init_model,
    loss_and_grads,
    train,
    window_starts,
)
from nnsdetect.segmenter import (
    AGGREGATORS,
    ConfidenceSequence,
    FeatureSequence,
    TcnConfig,
    _tcn_logits,
    aggregate_sliding,
    labels_to_steps,
    tcn_init,
    tcn_loss,
    tcn_loss_and_grads,
    tcn_loss_grad_logits,
    tcn_segment,
    tcn_train,
)
from nnsdetect.synthgen import Jitter, SynthConfig, gen_clip_dataset, gen_event_track, render_video
from nnsdetect.timeline import Event, EventTrack, interval_iou
from nnsdetect.track import BoundingBox, stabilize_boxes

pytestmark = pytest.mark.slow

JITTER = Jitter(4.0, 2.0)
MIX_EPOCHS = 20
N_SEG_TRAIN, N_SEG_TEST = 30, 10
SEG_SEED0 = 1000


# --- shared data -----------------------------------------------------------------

@pytest.fixture(scope="module")
def clean_sets():
    train_clips = gen_clip_dataset(SynthConfig(seed=1), 200, 200)
    test_clips = gen_clip_dataset(SynthConfig(seed=2), 50, 50)
    (xtr, ytr), (xte, yte) = preprocess_clips(train_clips), preprocess_clips(test_clips)
    return clips_to_tensor(xtr), ytr, clips_to_tensor(xte), yte


@pytest.fixture(scope="module")
def jitter_test_set():
    x, y = preprocess_clips(gen_clip_dataset(SynthConfig(seed=5, jitter=JITTER), 50, 50))
    return clips_to_tensor(x), y


@pytest.fixture(scope="module")
def clean_model(clean_sets):
    xtr, ytr, _, _ = clean_sets
    t0 = time.perf_counter()
    model = train(xtr, ytr, None, None, RecognizerConfig(epochs=50, seed=0))
    model.history["train_seconds"] = time.perf_counter() - t0
    return model


@pytest.fixture(scope="module")
def segmentation_data(clean_model):
    """Stride-1 confidences and features for held-out 60 s videos, plus ground truth."""
    out = []
    for i in range(N_SEG_TRAIN + N_SEG_TEST):
        cfg = SynthConfig(seed=SEG_SEED0 + i)
        track = gen_event_track(60.0, cfg)
        video, boxes = render_video(track, cfg)
        enc = preprocess_video(video, BoundingBox(*boxes[0]))
        conf, feats = classify_windows(clean_model, enc, 26, 1)
        out.append((track, conf, feats))
    return out


# --- 1-3: learned components --------------------------------------------------------

def test_criterion_01_clip_classification(clean_sets, clean_model):
    _, _, xte, yte = clean_sets
    acc = accuracy(clean_model, xte, yte)
    minutes = clean_model.history["train_seconds"] / 60
    record(1, acc >= 0.95 and minutes <= 30,
           f"clean test accuracy {acc:.3f} (need >= 0.95), training {minutes:.1f} min (need <= 30)")


def test_criterion_02_jitter_mode(clean_sets, clean_model, jitter_test_set):
    xtr, ytr, xte, yte = clean_sets
    xj, yj = jitter_test_set
    clean_acc = accuracy(clean_model, xte, yte)
    jit_acc = accuracy(clean_model, xj, yj)
    jx, jy = preprocess_clips(gen_clip_dataset(SynthConfig(seed=11, jitter=JITTER), 100, 100))
    xm = np.concatenate([xtr[::2], clips_to_tensor(jx)])
    ym = np.concatenate([ytr[::2], jy])
    mixed = train(xm, ym, None, None, RecognizerConfig(epochs=MIX_EPOCHS, seed=0))
    mixed_acc = accuracy(mixed, xj, yj)
    gain = 100 * (mixed_acc - jit_acc)
    record(2, jit_acc < clean_acc and gain >= 10,
           f"jitter accuracy {jit_acc:.3f} < clean {clean_acc:.3f}; mixed retraining lifts jitter "
           f"accuracy to {mixed_acc:.3f} (+{gain:.1f} pp, need >= 10)")


def test_criterion_03_segmentation(segmentation_data):
    train_part = segmentation_data[:N_SEG_TRAIN]
    test_part = segmentation_data[N_SEG_TRAIN:]
    subjects = [f"video{N_SEG_TRAIN + k}" for k in range(N_SEG_TEST)]

    sliding = {}
    for sid, (track, conf, _) in zip(subjects, test_part):
        c5 = ConfidenceSequence(conf.scores[::5], 26, 5, conf.fps, 600)
        sliding[sid] = [(aggregate_sliding(c5, 0.8).to_track(), track)]
    s = ap_ar(sliding)

    feats = [f.features for _, _, f in train_part]
    labels = [labels_to_steps(t, 26, 1, 10.0, 600) for t, _, _ in train_part]
    tcn = tcn_train(feats, labels, TcnConfig(input_dim=feats[0].shape[1], seed=0))
    learned = {sid: [(tcn_segment(tcn, FeatureSequence(f.features, 26, 1, 10.0, 600)).to_track(), track)]
               for sid, (track, _, f) in zip(subjects, test_part)}
    t = ap_ar(learned)

    drop_s = s.ap(0.1) - s.ap(0.5)
    drop_t = t.ap(0.1) - t.ap(0.5)
    fmt = lambda sc: " ".join(f"AP{x}={sc.ap(x):.3f}/AR{x}={sc.ar(x):.3f}" for x in sc.thresholds)
    record(3, s.ap(0.1) >= 0.90 and s.ar(0.1) >= 0.85 and drop_t < drop_s,
           f"sliding@0.8 {fmt(s)}; TCN {fmt(t)}; AP drop 0.1->0.5: TCN {drop_t:.3f} vs sliding "
           f"{drop_s:.3f} (need TCN < sliding)")


# --- 4-11: exact and property checks -----------------------------------------------

def test_criterion_04_window_arithmetic():
    n1, n5 = len(window_starts(600, 26, 1)), len(window_starts(600, 26, 5))
    feats = classify_windows(init_model(RecognizerConfig(conv_channels=(2, 3), recurrent_hidden=3, crop_size=8)),
                             _zero_video(600, 8), 26, 1)[1]
    record(4, (n1, n5, len(feats)) == (575, 115, 575), f"stride 1 -> {n1} (and {len(feats)} features), "
                                                         f"stride 5 -> {n5}")


def _zero_video(n, size):
    from nnsdetect.synthgen import FrameSequence

    return FrameSequence(np.zeros((n, 3, size, size), np.uint8), 10.0)


def test_criterion_05_receptive_field():
    model = tcn_init(TcnConfig(layers=10, channels=4, input_dim=3, seed=1)).astype(np.float64)
    x = np.random.default_rng(0).normal(size=(4096, 3))
    base, _ = _tcn_logits(model, x, linear=True)
    center = 2047
    xp = x.copy()
    xp[center] += 1.0
    pert, _ = _tcn_logits(model, xp, linear=True)
    changed = np.abs(pert - base).max(axis=1) > 1e-12
    reach = np.flatnonzero(changed) - center
    span = int(reach.max() - reach.min())
    beyond = bool(changed[center - 1024] or changed[center + 1024])
    record(5, span == 2046 and not beyond and model.config.receptive_field == 2047,
           f"one input perturbation moves outputs spanning {span} steps, none 1024 steps away "
           f"(receptive field {model.config.receptive_field})")


def test_criterion_06_loss_and_gradients():
    from test_recognizer import TINY, numeric_grad
    from test_segmenter import frozen_loss

    hand = tcn_loss([[0.9, 0.1], [0.5, 0.5]], [0, 0], 0.15, 4.0)
    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-6)

    rng = np.random.default_rng(0)
    model = init_model(TINY, seed=1).astype(np.float64)
    x = rng.uniform(0, 1, (3, TINY.n_frames, 3, TINY.crop_size, TINY.crop_size))
    y = np.array([0, 1, 1])
    _, grads = loss_and_grads(model, x, y)
    for name, p in model.params.items():
        for idx in [tuple(rng.integers(0, s) for s in p.shape) for _ in range(3)]:
            worst = max(worst, rel(numeric_grad(model, x, y, name, idx), grads[name][idx]))

    z0 = rng.normal(0, 6, (9, 2))
    z0[::2] *= -1
    lab = rng.integers(0, 2, 9)
    _, dz = tcn_loss_grad_logits(z0, lab, 0.15, 4.0)
    lp = z0 - np.log(np.exp(z0).sum(1, keepdims=True))
    truncated = int((np.abs(np.diff(lp, axis=0)) > 4.0).sum())
    for idx in np.ndindex(z0.shape):
        zp, zm = z0.copy(), z0.copy()
        zp[idx] += 1e-6
        zm[idx] -= 1e-6
        num = (frozen_loss(zp, z0, lab, 0.15, 4.0) - frozen_loss(zm, z0, lab, 0.15, 4.0)) / 2e-6
        worst = max(worst, rel(num, dz[idx]))

    tcn = tcn_init(TcnConfig(layers=3, channels=4, input_dim=3, seed=2)).astype(np.float64)
    feats = rng.normal(0, 2, (12, 3))
    lab = rng.integers(0, 2, 12)
    z_ref, _ = _tcn_logits(tcn, feats)
    _, tg = tcn_loss_and_grads(tcn, feats, lab)
    for name, p in tcn.params.items():
        for idx in [tuple(rng.integers(0, s) for s in p.shape) for _ in range(3)]:
            old = p[idx]
            vals = []
            for h in (1e-5, -1e-5):
                p[idx] = old + h
                vals.append(frozen_loss(_tcn_logits(tcn, feats)[0], z_ref, lab, 0.15, 4.0))
            p[idx] = old
            worst = max(worst, rel((vals[0] - vals[1]) / 2e-5, tg[name][idx]))

    probs = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4]])
    ce = -np.mean(np.log(probs[np.arange(3), [0, 1, 0]]))
    lam0 = tcn_loss(probs, [0, 1, 0], 0.0, 4.0) == ce
    ok = abs(hand - 0.5094) <= 1e-4 and worst < 1e-4 and truncated > 0 and lam0
    record(6, ok, f"hand example {hand:.5f} (want 0.5094); worst gradient relative error {worst:.2e} "
                  f"with {truncated} truncated differences; lambda=0 equals mean CE: {lam0}")


def test_criterion_07_kappa():
    from test_metrics import rater_pair, tl

    hand = (cohen_kappa(tl([1, 0, 1, 0]), tl([1, 0, 1, 0])).kappa,
            cohen_kappa(tl([1, 1, 1, 1]), tl([0, 0, 0, 0])).kappa,
            cohen_kappa(tl([1, 1, 0, 0]), tl([1, 0, 0, 0])).kappa)
    mean_k = float(np.mean([cohen_kappa(*rater_pair(s, 0.83)).kappa for s in range(40)]))
    record(7, hand == (1.0, 0.0, 0.5) and abs(mean_k - 0.83) <= 0.01,
           f"hand examples {hand}; constructed rater pairs at 10 s windows give mean kappa {mean_k:.4f}")


def test_criterion_08_optical_flow():
    from test_flow import blob_image, central, translated_pair

    epes = []
    for seed in range(5):
        prev, nxt = translated_pair(seed, 2.0, 0.0)
        f = dense_flow(prev, nxt)
        epes.append(float(np.hypot(central(f.u) - 2.0, central(f.v)).mean()))
    img = blob_image(0)
    f0 = dense_flow(img, img)
    still = float(max(np.abs(f0.u).max(), np.abs(f0.v).max()))
    record(8, max(epes) < 0.25 and still < 1e-6,
           f"mean EPE per pair {', '.join(f'{e:.3f}' for e in epes)} px (need < 0.25); "
           f"identical frames max |flow| {still:.1e}")


def test_criterion_09_stabilization():
    from test_track import center_offsets

    ratios = []
    for seed in (3, 4, 5):
        cfg = SynthConfig(seed=seed, jitter=JITTER)
        video, truth = render_video(EventTrack((), 20), cfg)
        stab = stabilize_boxes(video, BoundingBox(*truth[0]))
        raw = center_offsets(stab.raw_boxes, truth).var(axis=0).sum()
        smooth = center_offsets(stab.boxes, truth).var(axis=0).sum()
        ratios.append(smooth / raw)
    record(9, max(ratios) <= 0.5,
           f"smoothed/unsmoothed face-center variance {', '.join(f'{r:.3f}' for r in ratios)} (need <= 0.5)")


def test_criterion_10_matching_and_monotonicity():
    from test_metrics import brute_force_match, random_track

    rng = np.random.default_rng(10)
    agree = 0
    for _ in range(1000):
        pred = random_track(rng, int(rng.integers(0, 5)))
        gt = random_track(rng, int(rng.integers(0, 5)))
        thr = float(rng.choice([0.1, 0.3, 0.5]))
        got = tuple(sorted((p[2] for p in match_events(pred, gt, thr).pairs), reverse=True))
        agree += got == brute_force_match(pred, gt, thr)
    iou_ok = (interval_iou(Event(0, 10), Event(5, 15)) == 1 / 3 and interval_iou(Event(0, 2), Event(2, 4)) == 0.0
              and interval_iou(Event(1, 3), Event(1, 3)) == 1.0 and interval_iou(Event(0, 4), Event(1, 3)) == 0.5)
    mono = 0
    for _ in range(1000):
        s = rng.random(int(rng.integers(1, 80)))
        lo, hi = np.sort(rng.random(2))
        ok = True
        for name, fn in AGGREGATORS.items():
            conf = ConfidenceSequence(s, 26, 26 if name == "tiled" else 5, 10.0)
            ok &= bool(np.all(fn(conf, hi).labels <= fn(conf, lo).labels))
        mono += ok
    record(10, agree == 1000 and iou_ok and mono == 1000,
           f"greedy matching equals brute force on {agree}/1000; IoU hand values exact: {iou_ok}; "
           f"threshold monotonicity on {mono}/1000 sequences")


def _pipeline_run(root: Path, cfg_path: Path) -> dict[str, bytes]:
    c = ["--config", str(cfg_path), "--seed", "5"]

    def run(*args):
        assert cli_main([str(a) for a in args] + c) == 0

    run("synth", "clips", "--n-pos", 2, "--n-neg", 2, "--out", root / "clips")
    run("preprocess", "--input", *sorted((root / "clips").glob("*.nnsv")), "--out-dir", root / "pre")
    run("train-recognizer", "--labels", root / "pre" / "labels.csv", "--epochs", 2, "--out", root / "r.nnsm")
    run("synth", "video", "--duration", 8, "--out", root / "v")
    run("preprocess", "--input", root / "v.nnsv", "--out", root / "pv.nnsv")
    run("classify", "--model", root / "r.nnsm", "--input", root / "pv.nnsv", "--stride", 5,
        "--out", root / "conf.json")
    run("extract-features", "--model", root / "r.nnsm", "--input", root / "pv.nnsv", "--out", root / "f.nnsx")
    run("train-segmenter", "--features", root / "f.nnsx", "--annotations", root / "v.csv", "--epochs", 3,
        "--out", root / "t.nnsm")
    run("segment", "--method", "tcn", "--model", root / "t.nnsm", "--input", root / "f.nnsx", "--out", root / "s")
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_11_determinism_and_roundtrips(tmp_path):
    from test_cli import SMALL

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL))
    a = _pipeline_run(tmp_path / "a", cfg_path)
    b = _pipeline_run(tmp_path / "b", cfg_path)
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)

    rng = np.random.default_rng(11)
    frames = rng.integers(0, 256, (4, 3, 9, 7), dtype=np.uint8)
    feats = rng.normal(size=(13, 5)).astype(np.float32)
    track = EventTrack((Event(0.1, 2.0, 0.3), Event(2.5, 7.25, None)), 10.0)
    model = io.read_model(tmp_path / "a" / "t.nnsm")
    trips = {
        "NNSV": np.array_equal(io.decode_nnsv(io.encode_nnsv(frames, 10.0))[0].reshape(frames.shape), frames),
        "NNSX": np.array_equal(io.decode_nnsx(io.encode_nnsx(feats)), feats),
        "NNSM": io.encode_nnsm(io.decode_nnsm(io.encode_nnsm(model))) == io.encode_nnsm(model),
        "annotation CSV": io.decode_annotations(io.encode_annotations(track), 10.0) == track,
        "events JSON": io.decode_events_json(io.encode_events_json(track), 10.0) == track,
    }
    failed = [k for k, v in trips.items() if not v]
    record(11, same and not failed,
           f"{len(a)} pipeline outputs byte-identical across seeded reruns: {same}; "
           f"lossless round trips for {', '.join(trips)}: {'all' if not failed else 'failed ' + ', '.join(failed)}")
