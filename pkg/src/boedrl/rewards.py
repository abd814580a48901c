from __future__ import annotations

import abc
from enum import Enum

import numpy as np

from boedrl.critic import Critic, OptimalCritic
from boedrl.env import History, ThetaBatch
from boedrl.estimators import g_score
from boedrl.nn.tensor import Array
from boedrl.simulators import ImplicitModel


class RewardKind(str, Enum):
    SPARSE = "sparse"
    DENSE = "dense"
    SPCE = "spce"


class RewardStrategy(abc.ABC):
    """Per-step reward ``r(h_{t-1}, h_t; theta_{0:L})``, one value per trajectory."""

    kind: RewardKind

    @abc.abstractmethod
    def __call__(self, previous: History, current: History, thetas: ThetaBatch) -> Array: ...

    @abc.abstractmethod
    def final_score(self, history: History, thetas: ThetaBatch) -> Array:
        """What the rewards of a finished trajectory add up to."""


class _CriticReward(RewardStrategy):
    def __init__(self, critic: Critic) -> None:
        self.critic = critic

    def final_score(self, history: History, thetas: ThetaBatch) -> Array:
        return g_score(history, thetas, self.critic)


class SparseReward(_CriticReward):
    kind = RewardKind.SPARSE

    def __call__(self, previous: History, current: History, thetas: ThetaBatch) -> Array:
        if not current.is_full:
            return np.zeros(current.batch_size)
        return g_score(current, thetas, self.critic)


class DenseReward(_CriticReward):
    kind = RewardKind.DENSE

    def __call__(self, previous: History, current: History, thetas: ThetaBatch) -> Array:
        return g_score(current, thetas, self.critic) - g_score(previous, thetas, self.critic)


class SpceReward(DenseReward):
    """Dense differences of the sPCE score, using the simulator's own likelihood."""

    kind = RewardKind.SPCE

    def __init__(self, model: ImplicitModel) -> None:
        super().__init__(OptimalCritic(model))


def build_reward(
    kind: RewardKind | str, critic: Critic | None = None, model: ImplicitModel | None = None
) -> RewardStrategy:
    kind = RewardKind(kind)
    if kind is RewardKind.SPCE:
        if model is None:
            raise ValueError("the sPCE reward needs the simulator")
        return SpceReward(model)
    if critic is None:
        raise ValueError(f"the {kind.value} reward needs a critic")
    if kind is RewardKind.DENSE:
        return DenseReward(critic)
    return SparseReward(critic)
