"""Tests for run configuration."""

import pytest

from structshot.config import RunConfig, build_config, load_config_file, parse_value
from structshot.errors import ConfigError


class TestRunConfig:
    """Tests for defaults and validation."""

    def test_defaults(self):
        config = RunConfig()
        assert (config.n, config.k, config.q) == (3, 5, 15)
        assert config.variant == "g"
        assert config.global_attn == "self"
        assert config.learning_rate == 0.001
        assert config.holdout == 15

    def test_explicit_holdout(self):
        assert RunConfig(holdout_per_class=4).holdout == 4

    @pytest.mark.parametrize(
        "field,value",
        [("n", 0), ("k", -1), ("hidden_dim", 0), ("iterations", -1), ("learning_rate", 0.0)],
    )
    def test_rejects_out_of_range(self, field, value):
        with pytest.raises(ConfigError, match=field):
            RunConfig(**{field: value})

    def test_unknown_variant(self):
        with pytest.raises(ConfigError, match="unknown variant"):
            RunConfig(variant="x")

    def test_unknown_attention(self):
        with pytest.raises(ConfigError, match="global_attn"):
            RunConfig(global_attn="gru")

    def test_heads_must_divide_width(self):
        """Multi-head kinds split the hidden width evenly."""
        with pytest.raises(ConfigError, match="divisible"):
            RunConfig(hidden_dim=10, heads=3)

    def test_heads_irrelevant_for_weight_kinds(self):
        RunConfig(hidden_dim=10, heads=3, global_attn="vanilla", local_attn="mlp")

    def test_bad_layers_used(self):
        """Encoder errors surface as configuration errors."""
        with pytest.raises(ConfigError):
            RunConfig(num_layers=3, layers_used=(4,))

    def test_model_variants(self):
        assert RunConfig(variant="base").model_variant().name == "base"
        full = RunConfig(variant="full", global_attn="vanilla", local_attn="learned").model_variant()
        assert full.branches[0].global_attn.name == "vanilla"
        assert full.branches[0].local_attn.name == "learned"
        ensemble = RunConfig(variant="ensemble").model_variant()
        assert [b.structure for b in ensemble.branches] == ["global", "local"]

    def test_attention_kind_carries_settings(self):
        kind = RunConfig(heads=4, pooling="max", attn_layers=2).attention_kind("transformer")
        assert (kind.heads, kind.pooling, kind.layers) == (4, "max", 2)

    def test_dict_round_trip(self):
        config = RunConfig(variant="full", layers_used=(2, 3), num_layers=3, seed=9)
        assert RunConfig.from_dict(config.to_dict()) == config

    def test_from_dict_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            RunConfig.from_dict({"epochs": 3})

    def test_with_overrides_skips_none(self):
        config = RunConfig().with_overrides({"n": 5, "k": None})
        assert config.n == 5
        assert config.k == 5


class TestConfigFile:
    """Tests for `key = value` files."""

    def test_parses_types_and_comments(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text(
            "# desk run\n"
            "variant = full\n"
            "learning_rate = 0.01  # faster\n"
            "\n"
            "layers_used = 2, 3\n"
            "l2_normalize = false\n"
            "holdout_per_class = none\n"
            "n = 2\n"
        )
        values = load_config_file(path)
        assert values == {
            "variant": "full",
            "learning_rate": 0.01,
            "layers_used": (2, 3),
            "l2_normalize": False,
            "holdout_per_class": None,
            "n": 2,
        }

    def test_unknown_key_names_line(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("n = 2\nepochs = 4\n")
        with pytest.raises(ConfigError, match=r"run.conf:2: unknown config key 'epochs'"):
            load_config_file(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("n = 2\nn = 3\n")
        with pytest.raises(ConfigError, match="duplicate"):
            load_config_file(path)

    def test_missing_equals(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("variant full\n")
        with pytest.raises(ConfigError, match="key = value"):
            load_config_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config_file(tmp_path / "absent.conf")

    def test_bad_values(self):
        with pytest.raises(ConfigError, match="bad value for n"):
            parse_value("n", "three")
        with pytest.raises(ConfigError, match="bad value for progress"):
            parse_value("progress", "maybe")


class TestBuildConfig:
    """Tests for layering defaults, file, and flags."""

    def test_precedence(self, tmp_path):
        """Flags beat the file, the file beats defaults."""
        path = tmp_path / "run.conf"
        path.write_text("n = 2\nk = 3\n")
        config = build_config(path, {"k": 4, "q": None})
        assert (config.n, config.k, config.q) == (2, 4, 15)

    def test_defaults_only(self):
        assert build_config() == RunConfig()

    def test_invalid_combination_from_file(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("hidden_dim = 9\n")
        with pytest.raises(ConfigError, match="divisible"):
            build_config(path)
