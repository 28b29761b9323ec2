"""Train the window classifier on synthetic clips and test it on fresh ones.

The defaults train a small run in a few minutes. The full setting is
``--n 200 --epochs 50`` (400 training clips, 50 epochs, about 20 minutes).

    python demos/03_train_recognizer.py --n 40 --epochs 8 --out model.nnsm
"""

from __future__ import annotations

import argparse

import numpy as np

from nnsdetect import io
from nnsdetect.metrics import clip_metrics
from nnsdetect.pipeline import preprocess_clips
from nnsdetect.recognizer import RecognizerConfig, predict_proba, to_clip_tensor, train
from nnsdetect.synthgen import Jitter, SynthConfig, gen_clip_dataset


def tensors(clips):
    x, y = preprocess_clips(clips)
    n, t = x.shape[:2]
    return to_clip_tensor(x.reshape((n * t,) + x.shape[2:])).reshape(x.shape), y


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=40, help="clips per class for training")
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--out", help="save the model here (NNSM)")
    args = ap.parse_args()

    print("preprocessing clips (stabilize, crop, optical flow) ...")
    xtr, ytr = tensors(gen_clip_dataset(SynthConfig(seed=1), args.n, args.n))
    xte, yte = tensors(gen_clip_dataset(SynthConfig(seed=2), 25, 25))
    xj, yj = tensors(gen_clip_dataset(SynthConfig(seed=5, jitter=Jitter(4.0, 2.0)), 25, 25))

    def progress(epoch, hist):
        print(f"epoch {epoch:3d}  loss {hist['train_loss'][-1]:.4f}")

    model = train(xtr, ytr, None, None, RecognizerConfig(epochs=args.epochs), progress=progress)
    for name, x, y in (("clean", xte, yte), ("jitter", xj, yj)):
        p = predict_proba(model, x)
        for t in (0.5, 0.8):
            m = clip_metrics(p, y, t)
            print(f"{name:6s} @ {t}: accuracy {m.accuracy:.3f} precision {m.precision:.3f} recall {m.recall:.3f}")
    print("mean confidence on jitter negatives:", float(np.mean(predict_proba(model, xj[yj == 0]))))
    if args.out:
        io.write_model(args.out, model)
        print(f"saved {args.out}")


if __name__ == "__main__":
    main()
