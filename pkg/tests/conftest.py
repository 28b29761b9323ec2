from __future__ import annotations

import numpy as np
import pytest

from nnsdetect.pipeline import preprocess_clips
from nnsdetect.recognizer import RecognizerConfig, to_clip_tensor, train
from nnsdetect.synthgen import SynthConfig, gen_clip_dataset


def clips_to_tensor(x: np.ndarray) -> np.ndarray:
    """uint8 ``[N, T, 3, S, S]`` HSV-flow stacks -> float32 clip tensors."""
    n, t = x.shape[:2]
    return to_clip_tensor(x.reshape((n * t,) + x.shape[2:])).reshape((n, t) + x.shape[2:])


@pytest.fixture(scope="session")
def separable_clips():
    """Twenty easy clips: strong mouth motion, no pixel noise."""
    clips = gen_clip_dataset(SynthConfig(seed=21, mouth_amplitude=4.0, noise_sigma=0.0), 10, 10)
    x, y = preprocess_clips(clips)
    return clips_to_tensor(x), y


@pytest.fixture(scope="session")
def separable_model(separable_clips):
    x, y = separable_clips
    return train(x, y, None, None, RecognizerConfig(epochs=50, seed=0))


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    """Log one acceptance criterion and fail the calling test if it did not hold."""
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
