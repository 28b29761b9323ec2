"""Turn window confidences into NNS bursts and score them against ground truth.

Needs a recognizer trained by demo 03 (or the CLI). Classifies a handful of
60 s recordings, aggregates with the three fixed rules, trains the temporal
segmenter on part of them and reports AP/AR at IoU 0.1 / 0.3 / 0.5.

    python demos/04_segment_recordings.py --model model.nnsm --videos 12
"""

from __future__ import annotations

import argparse

from nnsdetect import io
from nnsdetect.metrics import ap_ar
from nnsdetect.pipeline import preprocess_video
from nnsdetect.recognizer import classify_windows
from nnsdetect.segmenter import (
    AGGREGATORS,
    ConfidenceSequence,
    FeatureSequence,
    TcnConfig,
    labels_to_steps,
    tcn_segment,
    tcn_train,
)
from nnsdetect.synthgen import SynthConfig, gen_event_track, render_video
from nnsdetect.track import BoundingBox


def report(name, score):
    cells = "  ".join(f"AP{t}={score.ap(t):.2f} AR{t}={score.ar(t):.2f}" for t in score.thresholds)
    print(f"{name:9s} {cells}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", required=True, help="recognizer NNSM")
    ap.add_argument("--videos", type=int, default=12, help="recordings; a third are held out")
    ap.add_argument("--threshold", type=float, default=0.8)
    args = ap.parse_args()

    model = io.read_model(args.model)
    data = []
    for i in range(args.videos):
        cfg = SynthConfig(seed=500 + i)
        track = gen_event_track(60.0, cfg)
        video, boxes = render_video(track, cfg)
        conf, feats = classify_windows(model, preprocess_video(video, BoundingBox(*boxes[0])), 26, 1)
        data.append((track, conf, feats))
        print(f"video {i}: {len(track)} bursts, peak confidence {conf.scores.max():.2f}")

    n_test = max(1, args.videos // 3)
    train_part, test_part = data[:-n_test], data[-n_test:]
    for name, fn in AGGREGATORS.items():
        stride = 26 if name == "tiled" else 5
        clips = {f"v{k}": [(fn(ConfidenceSequence(c.scores[::stride], 26, stride, 10.0, 600),
                               args.threshold).to_track(), t)] for k, (t, c, _) in enumerate(test_part)}
        report(name, ap_ar(clips))

    feats = [f.features for _, _, f in train_part]
    labels = [labels_to_steps(t, 26, 1, 10.0, 600) for t, _, _ in train_part]
    tcn = tcn_train(feats, labels, TcnConfig(input_dim=feats[0].shape[1]))
    clips = {f"v{k}": [(tcn_segment(tcn, FeatureSequence(f.features, 26, 1, 10.0, 600)).to_track(), t)]
             for k, (t, _, f) in enumerate(test_part)}
    report("tcn", ap_ar(clips))


if __name__ == "__main__":
    main()
