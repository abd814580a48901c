from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections.abc import Callable
from pathlib import Path

import pytest

from boedrl.config import RunConfig, get_settings
from boedrl.errors import ConfigError


class TestModelDefaults:
    @pytest.mark.parametrize(
        ("name", "horizon", "updates", "encoder", "bound"),
        [
            ("location_finding", 10, 10, "attention", "spce"),
            ("sir", 10, 8, "lstm", "infonce"),
            ("cartpole", 5, 8, "lstm", "infonce"),
            ("linear_gaussian", 2, 8, "attention", "spce"),
        ],
    )
    def test_unset_fields_follow_the_model(
        self, name: str, horizon: int, updates: int, encoder: str, bound: str
    ) -> None:
        config = RunConfig.from_mapping({"model": {"name": name}})
        assert config.horizon == horizon
        assert config.trainer.updates_per_timestep == updates
        assert config.critic.encoder == encoder
        assert config.estimator.bound_kind == bound

    def test_explicit_values_win(self) -> None:
        config = RunConfig.from_mapping(
            {
                "model": {"name": "sir"},
                "trainer": {"horizon": 4, "updates_per_timestep": 2},
                "critic": {"encoder": "attention"},
                "estimator": {"bound_kind": "infonce"},
            }
        )
        assert (config.horizon, config.trainer.updates_per_timestep) == (4, 2)
        assert config.critic.encoder == "attention"

    def test_model_parameters_reach_the_simulator_block(self) -> None:
        config = RunConfig.from_mapping({"model": {"name": "location_finding", "num_sources": 3}})
        params = config.model.params()
        assert params["num_sources"] == 3
        assert "name" not in params


class TestValidation:
    def test_gamma_above_one_names_its_location(self) -> None:
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping({"model": {"name": "sir"}, "trainer": {"gamma": 1.5}})
        assert any(issue.startswith("trainer.gamma") for issue in info.value.issues)
        assert "trainer.gamma" in str(info.value)

    def test_zero_gamma_is_rejected(self) -> None:
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"model": {"name": "sir"}, "trainer": {"gamma": 0.0}})

    def test_unknown_keys_are_rejected(self) -> None:
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping({"model": {"name": "sir"}, "trainer": {"lr": 0.1}})
        assert any("trainer.lr" in issue for issue in info.value.issues)

    def test_unknown_model(self) -> None:
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"model": {"name": "pendulum"}})

    def test_critic_batch_needs_two_trajectories(self) -> None:
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"model": {"name": "sir"}, "critic": {"batch_size": 1}})

    def test_non_positive_hidden_width(self) -> None:
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"model": {"name": "sir"}, "trainer": {"hidden_dims": [8, 0]}})

    def test_learned_networks_need_a_hidden_layer(self) -> None:
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping({"model": {"name": "sir"}, "trainer": {"hidden_dims": []}})
        assert any(issue.startswith("trainer.hidden_dims") for issue in info.value.issues)

    def test_noiseless_location_finding_is_rejected(self) -> None:
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping({"model": {"name": "location_finding", "noise": 0.0}})
        assert any("model" in issue and "noise" in issue for issue in info.value.issues)

    def test_sir_may_start_without_infections(self) -> None:
        config = RunConfig.from_mapping({"model": {"name": "sir", "initial_infected": 0}})
        assert config.model.params()["initial_infected"] == 0


class TestTomlFiles:
    def test_round_trip_keeps_the_hash(
        self, small_config: Callable[..., dict[str, object]], tmp_path: Path
    ) -> None:
        config = RunConfig.from_mapping(small_config())
        path = tmp_path / "run.toml"
        path.write_text(config.to_toml())
        assert tomllib.loads(path.read_text())["trainer"]["batch_size"] == 16
        reloaded = RunConfig.load(path)
        assert reloaded == config
        assert reloaded.config_hash() == config.config_hash()

    def test_hash_changes_with_any_field(
        self, small_config: Callable[..., dict[str, object]]
    ) -> None:
        base = RunConfig.from_mapping(small_config())
        other = RunConfig.from_mapping(small_config(seed=4))
        assert base.config_hash() != other.config_hash()

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="Cannot read"):
            RunConfig.load(tmp_path / "absent.toml")

    def test_malformed_file(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.toml"
        path.write_text("[model\nname = 'sir'\n")
        with pytest.raises(ConfigError, match="Malformed"):
            RunConfig.load(path)


class TestSettings:
    def test_defaults(self) -> None:
        settings = get_settings()
        assert settings.threads == 1
        assert settings.log_level == "INFO"

    def test_environment_overrides(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BOEDRL_THREADS", "4")
        monkeypatch.setenv("BOEDRL_LOG_LEVEL", " debug ")
        get_settings.cache_clear()
        settings = get_settings()
        assert settings.threads == 4
        assert settings.log_level == "DEBUG"

    def test_relative_output_dirs_live_under_the_root(self, tmp_path: Path) -> None:
        config = RunConfig.from_mapping({"model": {"name": "sir"}, "output_dir": "exp1"})
        assert config.resolved_output_dir() == get_settings().output_root / "exp1"
        absolute = RunConfig.from_mapping({"model": {"name": "sir"}, "output_dir": str(tmp_path)})
        assert absolute.resolved_output_dir() == tmp_path
