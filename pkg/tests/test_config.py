from __future__ import annotations

import json

import pytest

from nnsdetect.config import ConfigError, PipelineConfig, config_from_dict, config_to_dict, load_config
from nnsdetect.synthgen import Jitter


def test_defaults_when_absent(tmp_path):
    assert load_config(None) == PipelineConfig()
    p = tmp_path / "c.json"
    p.write_text("{}")
    assert load_config(p) == PipelineConfig()


def test_roundtrip_through_dict():
    cfg = config_from_dict({"seed": 3, "synth": {"jitter": {"amplitude_px": 4, "period_s": 2}},
                            "segmenter": {"method": "tcn", "tcn": {"layers": 4}},
                            "metrics": {"iou_thresholds": [0.2, 0.4]}})
    assert cfg.synth.jitter == Jitter(4, 2)
    assert cfg.segmenter.tcn.layers == 4 and cfg.metrics.iou_thresholds == (0.2, 0.4)
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


@pytest.mark.parametrize("bad", [
    {"sinth": {}},
    {"synth": {"fps_typo": 10}},
    {"segmenter": {"tcn": {"depth": 3}}},
    {"segmenter": {"method": "median"}},
    {"track": []},
    {"paths": 3},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_malformed_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)
