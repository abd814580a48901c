from __future__ import annotations

from collections.abc import Callable, Iterator

import numpy as np
import pytest

from boedrl.agent import PolicyNet, TwinQ
from boedrl.config import get_settings
from boedrl.critic import CriticNet
from boedrl.simulators import ImplicitModel, LinearGaussianModel, LocationFindingModel


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--run-acceptance",
        action="store_true",
        default=False,
        help="run the desk-scale training acceptance checks",
    )


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--run-acceptance"):
        return
    skip = pytest.mark.skip(reason="desk-scale training run; pass --run-acceptance")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture(autouse=True)
def _fresh_settings(
    monkeypatch: pytest.MonkeyPatch, tmp_path_factory: pytest.TempPathFactory
) -> Iterator[None]:
    monkeypatch.delenv("BOEDRL_THREADS", raising=False)
    monkeypatch.delenv("BOEDRL_LOG_LEVEL", raising=False)
    monkeypatch.setenv("BOEDRL_OUTPUT_ROOT", str(tmp_path_factory.mktemp("runs")))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def location_finding() -> LocationFindingModel:
    return LocationFindingModel()


@pytest.fixture
def linear_gaussian() -> LinearGaussianModel:
    return LinearGaussianModel()


@pytest.fixture
def tiny_critic() -> Callable[..., CriticNet]:
    def build(model: ImplicitModel, seed: int = 0, **kwargs: object) -> CriticNet:
        kwargs.setdefault("embedding_dim", 4)
        kwargs.setdefault("pair_hidden", (5,))
        kwargs.setdefault("theta_hidden", (6,))
        return CriticNet.for_model(model, np.random.default_rng(seed), **kwargs)

    return build


@pytest.fixture
def tiny_actor_critic() -> Callable[..., tuple[PolicyNet, TwinQ]]:
    def build(model: ImplicitModel, horizon: int = 2, seed: int = 0) -> tuple[PolicyNet, TwinQ]:
        rng = np.random.default_rng(seed)
        policy = PolicyNet.for_model(model, horizon, rng, hidden_dims=(8,))
        return policy, TwinQ.for_policy(policy, rng, hidden_dims=(8,))

    return build


def _small_run_config(**overrides: object) -> dict[str, object]:
    data: dict[str, object] = {
        "model": {"name": "linear_gaussian"},
        "seed": 3,
        "trainer": {
            "batch_size": 16,
            "hidden_dims": [8],
            "updates_per_timestep": 1,
            "parallel_envs": 8,
            "num_contrastive": 7,
            "initial_random_timesteps": 16,
            "total_timesteps": 64,
            "replay_capacity": 1000,
            "eval_every": 32,
            "eval_rollouts": 16,
            "eval_contrastive": 15,
        },
        "critic": {
            "embedding_dim": 4,
            "pair_hidden": [4],
            "theta_hidden": [4],
            "updates_per_rollout": 2,
            "batch_size": 4,
        },
        "estimator": {"num_contrastive": 15, "num_rollouts": 16},
    }
    data.update(overrides)
    return data


@pytest.fixture
def small_config() -> Callable[..., dict[str, object]]:
    """Raw mapping of a linear-Gaussian run small enough to train in a few seconds."""
    return _small_run_config
