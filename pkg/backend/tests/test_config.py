# backend/tests/test_config.py
import pytest

from backend.scipnet.config import apply_overrides, config_help, load_config, parse_config_text, settings
from backend.scipnet.errors import ValidationError
from backend.scipnet.schemas import ResolvedConfig


class TestParse:

    def test_empty_gives_defaults(self):
        assert parse_config_text("") == ResolvedConfig()

    def test_defaults(self):
        config = parse_config_text("")
        assert config.simulation.tau == 30
        assert config.simulation.gamma == 8.0
        assert config.training.lr == 0.001
        assert config.training.horizons == [1, 2, 3]
        assert config.sweep.variants == ["scip", "cip", "unweighted"]

    def test_values_and_lists(self):
        config = parse_config_text(
            "[training]\nlr = 0.01\nhorizons = 3, 1\n\n[sweep]\ngammas = 0,2.5\nvariants = cip\n"
        )
        assert config.training.lr == 0.01
        assert config.training.horizons == [1, 3]
        assert config.sweep.gammas == [0.0, 2.5]
        assert config.sweep.variants == ["cip"]

    def test_unknown_section(self):
        with pytest.raises(ValidationError, match="^model: unknown section"):
            parse_config_text("[model]\nx = 1\n")

    def test_unknown_key(self):
        with pytest.raises(ValidationError) as info:
            parse_config_text("[simulation]\nsubjects = 10\n")
        assert info.value.key == "simulation.subjects"

    def test_lr_off_grid(self):
        with pytest.raises(ValidationError) as info:
            parse_config_text("[training]\nlr = 0.05\n")
        assert info.value.key == "training.lr"
        assert info.value.exit_code == 1

    def test_type_mismatch(self):
        with pytest.raises(ValidationError) as info:
            parse_config_text("[simulation]\ntau = thirty\n")
        assert info.value.key == "simulation.tau"

    def test_cross_field_check_names_section(self):
        with pytest.raises(ValidationError) as info:
            parse_config_text("[simulation]\ntau = 10\n")
        assert info.value.key == "simulation"
        assert "window" in str(info.value)

    def test_malformed_text(self):
        with pytest.raises(ValidationError, match="malformed config"):
            parse_config_text("tau = 3\n")


class TestOverrides:

    def test_override_revalidates(self):
        config = apply_overrides(ResolvedConfig(), "simulation", {"gamma": 2.0, "seed": 4})
        assert (config.simulation.gamma, config.simulation.seed) == (2.0, 4)
        assert config.training == ResolvedConfig().training

    def test_bad_override(self):
        with pytest.raises(ValidationError) as info:
            apply_overrides(ResolvedConfig(), "simulation", {"gamma": -1.0})
        assert info.value.key == "simulation.gamma"

    def test_no_updates(self):
        config = ResolvedConfig()
        assert apply_overrides(config, "training", {}) is config


def test_load_config(tmp_path):
    assert load_config(None) == ResolvedConfig()
    path = tmp_path / "run.ini"
    path.write_text("[evaluation]\nn_plans = 3\n")
    assert load_config(path).evaluation.n_plans == 3
    with pytest.raises(ValidationError) as info:
        load_config(tmp_path / "missing.ini")
    assert info.value.key == "--config"


def test_help_lists_every_section():
    text = config_help()
    for needle in ("[simulation]", "[training]", "[evaluation]", "[sweep]", "gamma = 8.0", "lr = 0.001", "seeds = 0,1,2"):
        assert needle in text


class TestSettings:

    @pytest.mark.parametrize("raw,expected", [("", None), ("3", 3), (" 4 ", 4)])
    def test_threads(self, monkeypatch, raw, expected):
        monkeypatch.setattr(settings, "THREADS", raw)
        assert settings.threads() == expected

    def test_bad_threads_name_the_variable(self, monkeypatch):
        monkeypatch.setattr(settings, "THREADS", "many")
        with pytest.raises(ValidationError) as info:
            settings.threads()
        assert info.value.key == "SCIPNET_THREADS"
