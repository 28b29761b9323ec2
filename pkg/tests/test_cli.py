from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from nnsdetect import io
from nnsdetect.cli import main

SMALL = {
    "track": {"crop_size": 16},
    "flow": {"iterations_per_level": 20, "pyramid_levels": 2},
    "recognizer": {"crop_size": 16, "conv_channels": [2, 3], "recurrent_hidden": 4, "batch_size": 4},
    "segmenter": {"tcn": {"layers": 2, "channels": 4}},
}


@pytest.fixture()
def small_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def run(*args) -> int:
    return main([str(a) for a in args])


def test_help_documents_every_command():
    out = subprocess.run([sys.executable, "-m", "nnsdetect.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("synth", "preprocess", "train-recognizer", "classify", "extract-features",
                "train-segmenter", "segment", "eval"):
        assert cmd in out.stdout


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["segment"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text("not json")
    assert run("segment", "--input", bad, "--out", tmp_path / "s") == 2
    assert "malformed input" in capsys.readouterr().err
    nnsv = tmp_path / "bad.nnsv"
    nnsv.write_bytes(b"NNSV\x01\0\0\0")
    assert run("preprocess", "--input", nnsv, "--out", tmp_path / "o.nnsv", "--box", "0,0,4,4") == 2
    assert "at byte 8" in capsys.readouterr().err
    assert run("segment", "--input", bad, "--out", tmp_path / "s", "--method", "tcn") == 1
    cfg = tmp_path / "c.json"
    cfg.write_text('{"synth": {"nope": 1}}')
    assert run("synth", "video", "--out", tmp_path / "v", "--config", cfg) == 2
    assert run("segment", "--input", tmp_path / "missing.json", "--out", tmp_path / "s") == 2


def test_numeric_failure_exit_code(tmp_path):
    from nnsdetect.recognizer import RecognizerConfig, init_model

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    model = init_model(RecognizerConfig(**{**SMALL["recognizer"], "conv_channels": (2, 3)}))
    model.params["classifier.bias"][:] = float("nan")
    io.write_model(tmp_path / "m.nnsm", model)
    import numpy as np

    io.write_nnsv(tmp_path / "v.nnsv", np.zeros((30, 3, 16, 16), np.uint8), 10.0)
    assert run("classify", "--model", tmp_path / "m.nnsm", "--input", tmp_path / "v.nnsv",
               "--out", tmp_path / "c.json", "--config", cfg) == 3


def test_synth_video_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("synth", "video", "--duration", 6, "--seed", 7, "--out", tmp_path / d / "v") == 0
    for suffix in (".nnsv", ".csv", ".boxes.csv", ".nnsv.manifest.json"):
        assert (tmp_path / "a" / f"v{suffix}").read_bytes() == (tmp_path / "b" / f"v{suffix}").read_bytes()
    assert run("synth", "video", "--duration", 6, "--seed", 8, "--out", tmp_path / "c" / "v") == 0
    assert (tmp_path / "a" / "v.nnsv").read_bytes() != (tmp_path / "c" / "v.nnsv").read_bytes()
    m = io.read_manifest(tmp_path / "a" / "v.nnsv")
    assert m["seed"] == 7 and len(m["config_sha256"]) == 64


def test_thread_cap_env_is_honored():
    env = dict(os.environ, NNS_THREADS="1")
    code = "import os, nnsdetect.cli; print(os.environ['OMP_NUM_THREADS'])"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert out.stdout.strip() == "1"


@pytest.mark.slow
def test_full_pipeline_end_to_end(tmp_path, small_cfg):
    c = ("--config", small_cfg, "--seed", 3)
    clips, pre = tmp_path / "clips", tmp_path / "pre"
    assert run("synth", "clips", "--n-pos", 3, "--n-neg", 3, "--out", clips, *c) == 0
    inputs = sorted(clips.glob("*.nnsv"))
    assert run("preprocess", "--input", *inputs, "--out-dir", pre, *c) == 0
    assert (pre / "labels.csv").exists()
    assert run("train-recognizer", "--labels", pre / "labels.csv", "--epochs", 2, "--out", tmp_path / "r.nnsm",
               *c) == 0
    first = (tmp_path / "r.nnsm").read_bytes()
    assert run("train-recognizer", "--labels", pre / "labels.csv", "--epochs", 2, "--out", tmp_path / "r2.nnsm",
               *c) == 0
    assert (tmp_path / "r2.nnsm").read_bytes() == first

    assert run("classify", "--model", tmp_path / "r.nnsm", "--labels", pre / "labels.csv",
               "--out", tmp_path / "scores.csv", *c) == 0
    assert run("eval", "clf", "--scores", tmp_path / "scores.csv", "--threshold", 0.5, "--threshold", 0.8,
               "--out", tmp_path / "clf", *c) == 0
    assert set(json.loads((tmp_path / "clf.json").read_text())["per_threshold"]) == {"0.5", "0.8"}

    assert run("synth", "video", "--duration", 8, "--out", tmp_path / "v", *c) == 0
    assert run("preprocess", "--input", tmp_path / "v.nnsv", "--out", tmp_path / "pv.nnsv", "--trace", *c) == 0
    assert (tmp_path / "pv.trace.csv").exists()
    assert run("classify", "--model", tmp_path / "r.nnsm", "--input", tmp_path / "pv.nnsv", "--stride", 5,
               "--out", tmp_path / "conf.json", *c) == 0
    assert len(io.read_confidences(tmp_path / "conf.json")) == 11
    assert run("segment", "--method", "sliding", "--threshold", 0.8, "--input", tmp_path / "conf.json",
               "--out", tmp_path / "seg", "--svg", tmp_path / "seg.svg", "--gt", tmp_path / "v.csv", *c) == 0
    track = io.read_events_json(tmp_path / "seg.json", 8.0)
    assert track.duration_s == 8.0
    assert (tmp_path / "seg.steps.csv").read_text().startswith("step_start_s,score,label")

    assert run("extract-features", "--model", tmp_path / "r.nnsm", "--input", tmp_path / "pv.nnsv",
               "--out", tmp_path / "f.nnsx", *c) == 0
    assert io.read_nnsx(tmp_path / "f.nnsx").shape == (55, 128)
    assert run("train-segmenter", "--features", tmp_path / "f.nnsx", "--annotations", tmp_path / "v.csv",
               "--epochs", 2, "--out", tmp_path / "t.nnsm", *c) == 0
    assert run("segment", "--method", "tcn", "--model", tmp_path / "t.nnsm", "--input", tmp_path / "f.nnsx",
               "--threshold", 0.5, "--out", tmp_path / "tseg", *c) == 0
    io.read_events_json(tmp_path / "tseg.json")

    assert run("eval", "seg", "--pred", tmp_path / "seg.json", tmp_path / "tseg.json",
               "--gt", tmp_path / "v.csv", tmp_path / "v.csv", "--subject", "a", "a", "--out", tmp_path / "rep",
               *c) == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert set(rep["mean"]) == {"0.1", "0.3", "0.5"}
    assert (tmp_path / "rep.csv").read_text().startswith("scope,threshold,metric,value")
    assert run("eval", "kappa", "--a", tmp_path / "v.csv", "--b", tmp_path / "v.csv", "--duration", 8,
               "--out", tmp_path / "k", *c) == 0
    assert json.loads((tmp_path / "k.json").read_text())["kappa"] == 1.0
