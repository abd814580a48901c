from __future__ import annotations

import hashlib
import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Annotated, Any, ClassVar, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic.functional_validators import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from boedrl.errors import ConfigError


class Settings(BaseSettings):
    threads: int = Field(
        default=1,
        ge=1,
        alias="BOEDRL_THREADS",
        description="Worker threads used for rollout generation during evaluation",
    )
    log_level: str = Field(
        default="INFO", alias="BOEDRL_LOG_LEVEL", description="Root logging level for the CLI"
    )
    output_root: Path = Field(
        default=Path("runs"),
        alias="BOEDRL_OUTPUT_ROOT",
        description="Base directory for relative output_dir values",
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def _normalise_level(cls, value: object) -> object:
        if isinstance(value, str):
            return value.strip().upper()
        return value

    model_config = SettingsConfigDict(
        env_prefix="",
        env_file=".env",
        case_sensitive=False,
        populate_by_name=True,
        extra="ignore",
    )


@lru_cache
def get_settings() -> Settings:
    return Settings()


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- model blocks ----------------------------------------------------------------


class _ModelBlock(_Block):
    default_horizon: ClassVar[int]
    default_updates: ClassVar[int]
    default_encoder: ClassVar[Literal["attention", "lstm"]]
    default_bound: ClassVar[Literal["spce", "infonce"]]

    def params(self) -> dict[str, Any]:
        return self.model_dump(exclude={"name"})


class LocationFindingBlock(_ModelBlock):
    default_horizon = 10
    default_updates = 10
    default_encoder = "attention"
    default_bound = "spce"

    name: Literal["location_finding"]
    num_sources: int = Field(default=2, ge=1)
    space_dim: int = Field(default=2, ge=1)
    background: float = Field(default=0.1, gt=0)
    max_signal: float = Field(default=1e-4, gt=0)
    signal_scale: float = Field(default=1.0, ge=0)
    noise: float = Field(default=0.5, gt=0)
    bound: float = Field(default=4.0, gt=0)


class SIRBlock(_ModelBlock):
    default_horizon = 10
    default_updates = 8
    default_encoder = "lstm"
    default_bound = "infonce"

    name: Literal["sir"]
    population: int = Field(default=500, ge=1)
    initial_infected: int = Field(default=2, ge=0)
    dt: float = Field(default=0.1, gt=0)
    horizon: float = Field(default=100.0, gt=0)
    beta_log_mean: float = math.log(0.5)
    beta_log_std: float = Field(default=0.5, gt=0)
    gamma_log_mean: float = math.log(0.1)
    gamma_log_std: float = Field(default=0.5, gt=0)
    observation_noise: float = Field(default=1.0, ge=0)


class CartpoleBlock(_ModelBlock):
    default_horizon = 5
    default_updates = 8
    default_encoder = "lstm"
    default_bound = "infonce"

    name: Literal["cartpole"]
    cart_mass: float = Field(default=1.0, gt=0)
    pole_length: float = Field(default=0.5, gt=0)
    gravity: float = Field(default=9.81, gt=0)
    step_duration: float = Field(default=1.0 / 6.0, gt=0)
    substeps: int = Field(default=60, ge=1)
    impulse_bound: float = Field(default=3.0, gt=0)
    friction_range: tuple[float, float] = (0.0, 0.2)
    mass_range: tuple[float, float] = (0.5, 1.5)
    initial_angle: float = 0.1
    observation_noise: float = Field(default=0.0, ge=0)


class LinearGaussianBlock(_ModelBlock):
    default_horizon = 2
    default_updates = 8
    default_encoder = "attention"
    default_bound = "spce"

    name: Literal["linear_gaussian"]
    prior_variance: float = Field(default=1.0, gt=0)
    noise_variance: float = Field(default=1.0, gt=0)
    bound: float = Field(default=5.0, gt=0)


ModelBlock = Annotated[
    LocationFindingBlock | SIRBlock | CartpoleBlock | LinearGaussianBlock,
    Field(discriminator="name"),
]


# -- training and evaluation blocks -------------------------------------------------


class TrainerConfig(_Block):
    learning_rate: float = Field(default=3e-4, gt=0)
    batch_size: int = Field(default=256, ge=1)
    hidden_dims: tuple[int, ...] = Field(default=(256, 256), min_length=1)
    horizon: int | None = Field(default=None, ge=1)
    updates_per_timestep: int | None = Field(default=None, ge=1)
    policy_update_frequency: int = Field(default=2, ge=1)
    policy_noise: float = Field(default=0.2, ge=0)
    noise_clip: float = Field(default=0.5, ge=0)
    exploration_noise: float = Field(default=0.1, ge=0)
    gamma: float = 0.99
    tau: float = Field(default=0.005, ge=0, le=1)
    parallel_envs: int = Field(default=256, ge=1)
    num_contrastive: int = Field(default=255, ge=1)
    initial_random_timesteps: int = Field(default=10_000, ge=0)
    total_timesteps: int = Field(default=300_000, ge=1)
    replay_capacity: int = Field(default=1_000_000, ge=1)
    eval_every: int = Field(default=2_000, ge=1)
    eval_rollouts: int = Field(default=256, ge=2)
    eval_contrastive: int = Field(default=4095, ge=1)

    @field_validator("gamma")
    @classmethod
    def _check_gamma(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        return value

    @field_validator("hidden_dims")
    @classmethod
    def _check_hidden(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(width < 1 for width in value):
            raise ValueError("hidden layer widths must be positive")
        return value


class CriticConfig(_Block):
    encoder: Literal["attention", "lstm"] | None = None
    embedding_dim: int = Field(default=32, ge=1)
    pair_hidden: tuple[int, ...] = (32,)
    theta_hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = Field(default=3e-4, gt=0)
    updates_per_rollout: int = Field(default=10, ge=0)
    batch_size: int = Field(default=64, ge=2)
    tau: float = Field(default=0.005, ge=0, le=1)


class EstimatorConfig(_Block):
    bound_kind: Literal["spce", "snmc", "infonce"] | None = None
    num_contrastive: int = Field(default=4095, ge=1)
    num_rollouts: int = Field(default=256, ge=2)


class RunConfig(_Block):
    model: ModelBlock
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    critic: CriticConfig = Field(default_factory=CriticConfig)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    reward_kind: Literal["sparse", "dense", "spce"] = "dense"
    seed: int = Field(default=0, ge=0)
    output_dir: str = "default"

    @model_validator(mode="after")
    def _fill_model_defaults(self) -> RunConfig:
        trainer_updates: dict[str, Any] = {}
        if self.trainer.horizon is None:
            trainer_updates["horizon"] = self.model.default_horizon
        if self.trainer.updates_per_timestep is None:
            trainer_updates["updates_per_timestep"] = self.model.default_updates
        if trainer_updates:
            object.__setattr__(self, "trainer", self.trainer.model_copy(update=trainer_updates))
        if self.critic.encoder is None:
            critic = self.critic.model_copy(update={"encoder": self.model.default_encoder})
            object.__setattr__(self, "critic", critic)
        if self.estimator.bound_kind is None:
            estimator = self.estimator.model_copy(update={"bound_kind": self.model.default_bound})
            object.__setattr__(self, "estimator", estimator)
        return self

    @property
    def horizon(self) -> int:
        assert self.trainer.horizon is not None
        return self.trainer.horizon

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> RunConfig:
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigError("Invalid run configuration", _issues(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            with path.open("rb") as handle:
                data = tomllib.load(handle)
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc.strerror}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"Malformed config {path}: {exc}") from exc
        return cls.from_mapping(data)

    def resolved_output_dir(self) -> Path:
        path = Path(self.output_dir)
        return path if path.is_absolute() else get_settings().output_root / path

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def to_toml(self) -> str:
        data = self.model_dump(mode="json")
        lines = [
            f"{key} = {_toml_value(value)}"
            for key, value in data.items()
            if not isinstance(value, dict)
        ]
        for section, values in data.items():
            if isinstance(values, dict):
                lines.append("")
                lines.append(f"[{section}]")
                lines.extend(f"{key} = {_toml_value(value)}" for key, value in values.items())
        return "\n".join(lines) + "\n"


def _issues(exc: ValidationError) -> list[str]:
    issues = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"] if not isinstance(part, int))
        issues.append(f"{location or '<root>'}: {error['msg']}")
    return issues


def _toml_value(value: object) -> str:
    if value is None:
        raise ConfigError("TOML cannot represent unset values")
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int | float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list | tuple):
        return "[" + ", ".join(_toml_value(item) for item in value) + "]"
    raise ConfigError(f"Cannot serialise {type(value).__name__} to TOML")
