"""
Tests for presets, configuration files and overrides.
"""

from pathlib import Path

import pytest
import yaml

from jdrecon.config import (
    PRESETS,
    SWEEP_PRESETS,
    ConfigError,
    apply_overrides,
    config_hash,
    create_sample_config,
    dump_config,
    get_preset,
    load_config,
    parse_override_args,
    validate_experiment,
)
from jdrecon.models import LossKind, PriorMode


class TestPresets:
    """Test cases for built-in presets."""

    def test_bond_preset(self):
        """Test the bond-model training settings."""
        config = get_preset("example1")
        assert config.train.M_s == 100
        assert config.train.N == 101
        assert config.train.grid.T == pytest.approx(20.2)
        assert config.repeats == 10

    def test_desk_variants(self):
        """Test that desk presets shrink epochs and trajectories only."""
        full, desk = get_preset("example2"), get_preset("example2-desk")
        assert desk.name == "example2-desk"
        assert desk.train.epochs < full.train.epochs
        assert desk.train.M_s < full.train.M_s
        assert desk.train.lr == full.train.lr

    def test_two_dimensional_preset(self):
        """Test that the mixture-potential preset gives the drift as prior."""
        config = get_preset("example3")
        assert config.train.prior is PriorMode.DRIFT_GIVEN
        assert config.train.init.kind == "gaussian"
        assert validate_experiment(config).d == 2

    @pytest.mark.parametrize("name", list(PRESETS))
    def test_every_preset_validates(self, name):
        """Test that every preset builds its ground-truth model."""
        config = get_preset(name)
        assert validate_experiment(config).d == config.initial.d

    def test_unknown_preset(self):
        """Test that an unknown preset name is rejected."""
        with pytest.raises(ConfigError):
            get_preset("example7")

    @pytest.mark.parametrize("grid", list(SWEEP_PRESETS))
    def test_sweep_grids_apply(self, grid):
        """Test that every sweep grid names real configuration fields."""
        base = get_preset("example3-desk" if grid.startswith(("architecture", "correlation")) else "example2-desk")
        if grid in ("initial-noise", "noise-strength"):
            base = get_preset("example1-desk")
        config = apply_overrides(base, {**SWEEP_PRESETS[grid]["fixed"], "sweep.axes": SWEEP_PRESETS[grid]["axes"]})
        validate_experiment(config)


class TestOverrides:
    """Test cases for dotted-path overrides."""

    def test_nested_field(self):
        """Test overriding a nested field."""
        config = apply_overrides(get_preset("example1"), {"train.lr": 0.01, "train.loss_kind": "mmd"})
        assert config.train.lr == 0.01
        assert config.train.loss_kind is LossKind.MMD

    def test_comma_joined_paths(self):
        """Test that joined paths take zipped list values or one shared scalar."""
        base = get_preset("example3")
        zipped = apply_overrides(base, {"train.diffusion_net.width,train.jump_net.width": [25, 50]})
        assert (zipped.train.diffusion_net.width, zipped.train.jump_net.width) == (25, 50)
        shared = apply_overrides(base, {"train.diffusion_net.width,train.jump_net.width": 64})
        assert (shared.train.diffusion_net.width, shared.train.jump_net.width) == (64, 64)

    def test_joined_paths_need_matching_values(self):
        """Test that a wrong number of zipped values is rejected."""
        with pytest.raises(ConfigError):
            apply_overrides(get_preset("example3"), {"train.diffusion_net.width,train.jump_net.width": [1, 2, 3]})

    def test_unknown_field(self):
        """Test that a misspelled path is rejected."""
        with pytest.raises(ConfigError, match="train.learning_rate"):
            apply_overrides(get_preset("example1"), {"train.learning_rate": 0.1})

    def test_open_mapping(self):
        """Test that model parameters accept new keys."""
        config = apply_overrides(get_preset("example1"), {"model.params.b": 2.0})
        assert config.model.params["b"] == 2.0

    def test_invalid_value(self):
        """Test that a value failing validation is rejected."""
        with pytest.raises(ConfigError):
            apply_overrides(get_preset("example1"), {"train.M_s": 0})

    def test_original_untouched(self):
        """Test that overriding returns a copy."""
        base = get_preset("example1")
        apply_overrides(base, {"train.epochs": 3})
        assert base.train.epochs == 1000

    def test_parse_arguments(self):
        """Test both override spellings and YAML scalar parsing."""
        parsed = parse_override_args(["--train.lr", "0.001", "--train.prior=drift_given", "--initial.mean=[1.0]"])
        assert parsed == {"train.lr": 0.001, "train.prior": "drift_given", "initial.mean": [1.0]}

    def test_parse_errors(self):
        """Test stray tokens and missing values."""
        with pytest.raises(ConfigError):
            parse_override_args(["stray"])
        with pytest.raises(ConfigError):
            parse_override_args(["--train.lr"])

    def test_dimension_mismatch(self):
        """Test that an initial law of the wrong dimension is rejected."""
        config = apply_overrides(get_preset("example3"), {"initial.mean": [1.0]})
        with pytest.raises(ConfigError):
            validate_experiment(config)

    def test_unknown_model_parameter(self):
        """Test that zoo errors surface as configuration errors."""
        config = apply_overrides(get_preset("example1"), {"model.params.c1": 0.5})
        with pytest.raises(ConfigError):
            validate_experiment(config)


class TestFiles:
    """Test cases for configuration files."""

    def test_preset_name_as_source(self):
        """Test that a preset name loads without a file."""
        assert load_config("example2-desk").name == "example2-desk"

    def test_missing_source(self, tmp_path):
        """Test that a missing file that is not a preset is rejected."""
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_preset_with_overrides(self, tmp_path):
        """Test a file that extends a preset."""
        path = tmp_path / "run.yaml"
        path.write_text("preset: example1-desk\ntrain:\n  epochs: 7\nmodel:\n  params:\n    y0: 0.5\n")
        config = load_config(path)
        assert config.train.epochs == 7
        assert config.train.M_s == 20
        assert config.model.params == {"y0": 0.5}

    def test_dump_and_load(self, tmp_path):
        """Test that a dumped config loads back equal."""
        config = get_preset("example3-desk")
        dump_config(config, tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml") == config

    def test_sample_config(self, tmp_path):
        """Test that the sample config is commented and loadable."""
        path = tmp_path / "sample.yaml"
        create_sample_config(path)
        assert path.read_text().startswith("# jdrecon experiment configuration")
        assert load_config(path).name == "example1-desk"

    def test_shipped_config(self):
        """Test that the example config in configs/ loads and validates."""
        config = load_config(Path(__file__).parents[1] / "configs" / "example2-desk.yaml")
        assert config.name == "example2-linear"
        assert config.train.prior is PriorMode.DRIFT_GIVEN
        assert validate_experiment(config).d == 1

    def test_malformed_file(self, tmp_path):
        """Test that unparseable YAML and non-mapping documents are rejected."""
        bad = tmp_path / "bad.yaml"
        bad.write_text("train: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(bad)
        bad.write_text(yaml.safe_dump([1, 2]))
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_hash_is_stable(self):
        """Test that equal configs hash equally and changes change the hash."""
        a, b = get_preset("example1"), get_preset("example1")
        assert config_hash(a) == config_hash(b)
        assert config_hash(apply_overrides(a, {"train.seed": 1})) != config_hash(a)
