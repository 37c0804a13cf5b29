"""YAML configuration loading, validation, and digests."""

import pytest
import yaml

from specrl.config import (AppConfig, ConfigError, config_from_dict,
                           default_config_dict, load_config,
                           write_default_config)


class TestDefaults:
    def test_default_dict_loads(self):
        cfg = config_from_dict(default_config_dict())
        assert isinstance(cfg, AppConfig)
        assert cfg.model.blocks == 2
        assert cfg.policy_hidden in (64, 128)

    def test_write_and_load_round_trip(self, tmp_path):
        path = tmp_path / "c.yaml"
        write_default_config(path)
        cfg = load_config(path)
        assert cfg.digest() == config_from_dict(default_config_dict()).digest()

    def test_shipped_yaml_matches_code_defaults(self):
        from pathlib import Path
        shipped = Path(__file__).parent.parent / "configs" / "default.yaml"
        assert yaml.safe_load(shipped.read_text()) == default_config_dict()

    def test_digest_changes_with_content(self):
        base = config_from_dict(default_config_dict())
        d = default_config_dict()
        d["model"]["seed"] = 99
        assert config_from_dict(d).digest() != base.digest()


class TestValidation:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("model: [unclosed")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_non_mapping_rejected(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_field_rejected(self):
        d = default_config_dict()
        d["model"]["vocab_size"] = 1
        with pytest.raises(ConfigError):
            config_from_dict(d)

    def test_infeasible_baseline_rejected(self):
        d = default_config_dict()
        d["baseline_action"] = [128, 3, 8]
        with pytest.raises(ConfigError):
            config_from_dict(d)

    def test_unknown_ppo_variant_rejected(self):
        d = default_config_dict()
        d["ppo"]["variant"] = "nope"
        with pytest.raises(ConfigError):
            config_from_dict(d)


class TestOverrides:
    def test_ppo_field_override(self):
        d = default_config_dict()
        d["ppo"].update({"gamma": 0.5, "entropy_coef": 0.02})
        cfg = config_from_dict(d)
        assert cfg.ppo.gamma == 0.5
        assert cfg.ppo.entropy_coef == 0.02

    def test_max_entropy_variant(self):
        d = default_config_dict()
        d["ppo"] = {"variant": "max_entropy"}
        cfg = config_from_dict(d)
        assert cfg.ppo.entropy_coef == 0.1
        assert cfg.ppo.inference_temperature == 1.5

    def test_run_shapes(self):
        d = default_config_dict()
        d["run"].update({"train_cache_interval": 7, "eval_cache_interval": 21})
        cfg = config_from_dict(d)
        assert cfg.train_run.cache_interval == 7
        assert cfg.eval_run.cache_interval == 21
        assert cfg.train_run.mode == "train"
        assert cfg.eval_run.mode == "eval"

    def test_yaml_output_is_parseable(self, tmp_path):
        path = tmp_path / "c.yaml"
        write_default_config(path)
        raw = yaml.safe_load(path.read_text())
        assert raw == default_config_dict()
