import json

import pytest

from scribbleseg.config import ConfigError, TrainConfig, apply_overrides, config_from_dict, load_config


class TestConfig:
    def test_defaults(self):
        cfg = config_from_dict({})
        assert cfg == TrainConfig()
        assert cfg.momentum == 0.9 and cfg.lr_power == 0.9 and cfg.transform_mode == "random"

    def test_roundtrip(self):
        cfg = config_from_dict({"weights": {"omega1": 0.2}, "augment": {"scale": [1, 1]}})
        assert config_from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("data", [{"bogus": 1}, {"weights": {"omega3": 1}}, {"epochs": -1},
                                      {"ss_location": "logits"}, {"weights": {"warmup_fraction": 2}}])
    def test_schema_rejects(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_crop_must_fit_stride(self):
        with pytest.raises(ConfigError):
            config_from_dict({"crop_size": 60})

    def test_load(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"seed": 9}))
        assert load_config(tmp_path / "c.json").seed == 9
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")


class TestOverrides:
    def test_nested_and_typed(self):
        out = apply_overrides({"weights": {"gamma": 2.0}}, ["weights.omega2=0", "corpus=/tmp/x", "use_entropy=false"])
        assert out == {"weights": {"gamma": 2.0, "omega2": 0}, "corpus": "/tmp/x", "use_entropy": False}

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="weights.bogus"):
            apply_overrides({}, ["weights.bogus=1"])

    def test_malformed(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["epochs"])

    def test_input_untouched(self):
        data = {"epochs": 3}
        apply_overrides(data, ["epochs=4"])
        assert data == {"epochs": 3}
