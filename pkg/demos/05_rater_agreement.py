"""Inter-rater agreement on 10 s incidence windows.

A second rater is simulated by disagreeing on a random share of windows.
The demo shows how the disagreement rate maps onto Cohen's kappa and its
verbal strength band.

    python demos/05_rater_agreement.py
"""

from __future__ import annotations

import numpy as np

from nnsdetect.metrics import cohen_kappa
from nnsdetect.synthgen import SynthConfig, gen_event_track
from nnsdetect.timeline import BinaryTimeline, binarize


def main() -> None:
    rng = np.random.default_rng(0)
    a = binarize(gen_event_track(3600.0, SynthConfig(seed=3)), 10.0)
    print(f"rater A marks {a.bits.mean():.0%} of {len(a)} windows")
    for flip in (0.0, 0.02, 0.05, 0.1, 0.2, 0.4):
        mask = rng.random(len(a)) < flip
        b = BinaryTimeline(10.0, np.where(mask, 1 - a.bits, a.bits).astype(np.uint8), a.duration_s)
        r = cohen_kappa(a, b)
        print(f"disagree on {flip:4.0%}: p_o {r.p_observed:.3f} p_e {r.p_chance:.3f} "
              f"kappa {r.kappa:.3f} ({r.strength_label})")


if __name__ == "__main__":
    main()
