import os
import json

import pytest

from chatintent.config import RunConfig, load_run_config
from chatintent.errors import ConfigError
from chatintent.generation import Variant
from chatintent.synth_corpus import GenSpec
from chatintent.training import TrainOptions

GATEWAY = {"endpoint": "http://gateway.test/v1", "model": "gpt-4-0125-preview", "api_key_env": None}


def write_config(tmp_path, **overrides):
    raw = {"generator": GATEWAY, "judge": GATEWAY}
    raw.update(overrides)
    fp = tmp_path / "config.json"
    fp.write_text(json.dumps(raw), encoding="utf-8")
    return str(fp)


class TestLoad:

    def test_defaults(self, tmp_path):
        config, config_dir = load_run_config(write_config(tmp_path))
        assert config_dir == str(tmp_path)
        assert config.run_id == "default"
        assert config.M == 5
        assert config.report_m == [1, 5]
        assert config.selected_variants() == [Variant.USE_PREDICTED, Variant.USE_GROUND_TRUTH, Variant.USE_ALL, Variant.USE_NONE]

    def test_shipped_configs_validate(self, fixture_dir):
        for fp in (os.path.join(fixture_dir, "example_config.json"), os.path.join(fixture_dir, "e2e", "config.json")):
            config, _ = load_run_config(fp)
            assert config.generator.model and config.judge.model

    def test_example_config_uses_desk_defaults(self, fixture_dir):
        config, _ = load_run_config(os.path.join(fixture_dir, "example_config.json"))
        defaults = GenSpec()
        assert (config.gen_spec.page_count_mean, config.gen_spec.page_count_std, config.gen_spec.page_count_cap) == \
            (defaults.page_count_mean, defaults.page_count_std, defaults.page_count_cap)
        assert config.input_limits() == (50, 32, 1024)
        assert config.train.lr == TrainOptions().lr

    @pytest.mark.parametrize("overrides", [
        {"unknown_key": 1},
        {"paths": {"outputs": "x"}},
        {"model": {"vocab_size": 100}},
        {"model": {"d_model": 15, "heads": 2}},
        {"grid": {"colour": [1, 2]}},
        {"variants": ["UseSome"]},
        {"variants": []},
        {"split_ratios": [0.5, 0.5, 0.0]},
        {"report_m": [0]},
        {"run_id": ".."},
    ])
    def test_invalid_values(self, tmp_path, overrides):
        with pytest.raises(ConfigError) as err:
            load_run_config(write_config(tmp_path, **overrides))
        assert err.value.exit_code == 2

    def test_missing_and_malformed_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / "absent.json"))
        fp = tmp_path / "broken.json"
        fp.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(str(fp))


class TestOverrides:

    def test_seed_override_reaches_every_seed(self, tmp_path):
        config, _ = load_run_config(write_config(tmp_path, model={"d_model": 16, "heads": 2}), seed=11)
        assert config.seed == 11
        assert config.gen_spec.seed == 11
        assert config.train.seed == 11
        assert config.model_config_for(20).seed == 11

    def test_endpoint_override(self, tmp_path):
        config, _ = load_run_config(write_config(tmp_path, baseline=[GATEWAY]), endpoint="http://127.0.0.1:8080/v1")
        assert {config.generator.endpoint, config.judge.endpoint, config.baseline[0].endpoint} == {"http://127.0.0.1:8080/v1"}

    def test_input_limits_follow_model(self, tmp_path):
        config, _ = load_run_config(write_config(tmp_path, model={"max_pages": 4, "max_attr_tokens": 3, "max_tokens": 64}))
        assert config.input_limits() == (4, 3, 64)
        assert config.model_config_for(30).vocab_size == 30

    def test_frozen(self, tmp_path):
        config, _ = load_run_config(write_config(tmp_path))
        with pytest.raises(Exception):
            config.M = 3
        assert isinstance(config, RunConfig)
