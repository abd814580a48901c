"""Design policies: the learned actor, its twin Q critics and the baselines."""

from __future__ import annotations

import numpy as np

from boedrl.env import History, encode_history_concat, encoded_dim
from boedrl.errors import DimensionError
from boedrl.nn import Mlp, MlpSpec, Module, Tensor, concat
from boedrl.nn.tensor import Array
from boedrl.simulators import ImplicitModel


class PolicyNet(Module):
    """Deterministic actor over the zero-padded history encoding, squashed into the design box."""

    def __init__(
        self,
        horizon: int,
        design_low: Array,
        design_high: Array,
        observation_dim: int,
        rng: np.random.Generator,
        hidden_dims: tuple[int, ...] = (256, 256),
        observation_scale: Array | None = None,
    ) -> None:
        self.horizon = horizon
        self.design_low = np.asarray(design_low, dtype=np.float64)
        self.design_high = np.asarray(design_high, dtype=np.float64)
        self.design_scale = np.maximum(np.abs(self.design_low), np.abs(self.design_high))
        self.observation_scale = observation_scale
        self.state_dim = encoded_dim(horizon, self.design_low.size, observation_dim)
        self.net = Mlp(
            MlpSpec(
                self.state_dim,
                self.design_low.size,
                hidden_dims=hidden_dims,
                output_activation="tanh",
            ),
            rng,
        )

    @classmethod
    def for_model(
        cls,
        model: ImplicitModel,
        horizon: int,
        rng: np.random.Generator,
        hidden_dims: tuple[int, ...] = (256, 256),
    ) -> PolicyNet:
        return cls(
            horizon,
            model.design_low,
            model.design_high,
            model.observation_dim,
            rng,
            hidden_dims=hidden_dims,
            observation_scale=model.observation_scale,
        )

    @property
    def design_dim(self) -> int:
        return int(self.design_low.size)

    def encode(self, history: History) -> Array:
        if history.capacity != self.horizon:
            raise DimensionError(
                f"policy built for horizon {self.horizon}, got capacity {history.capacity}"
            )
        return encode_history_concat(history, self.design_scale, self.observation_scale)

    def __call__(self, state: Tensor) -> Tensor:
        squashed = self.net(state)
        return self.design_low + (squashed + 1.0) * (0.5 * (self.design_high - self.design_low))

    def design(self, history: History, rng: np.random.Generator) -> Array:
        return self(Tensor(self.encode(history))).data


class TwinQ(Module):
    """Two independent ``Q(h, xi)`` heads; targets take their elementwise minimum."""

    def __init__(
        self,
        state_dim: int,
        design_scale: Array,
        rng: np.random.Generator,
        hidden_dims: tuple[int, ...] = (256, 256),
    ) -> None:
        self.design_scale = np.asarray(design_scale, dtype=np.float64)
        spec = MlpSpec(state_dim + self.design_scale.size, 1, hidden_dims=hidden_dims)
        self.q1 = Mlp(spec, rng)
        self.q2 = Mlp(spec, rng)

    @classmethod
    def for_policy(
        cls, policy: PolicyNet, rng: np.random.Generator, hidden_dims: tuple[int, ...] = (256, 256)
    ) -> TwinQ:
        return cls(policy.state_dim, policy.design_scale, rng, hidden_dims)

    def _inputs(self, state: Tensor, design: Tensor) -> Tensor:
        return concat([state, design / self.design_scale], axis=-1)

    def __call__(self, state: Tensor, design: Tensor) -> tuple[Tensor, Tensor]:
        inputs = self._inputs(state, design)
        return self.q1(inputs).reshape(-1), self.q2(inputs).reshape(-1)

    def q1_value(self, state: Tensor, design: Tensor) -> Tensor:
        return self.q1(self._inputs(state, design)).reshape(-1)


def select_action(
    policy: PolicyNet, history: History, exploration_noise: float, rng: np.random.Generator
) -> Array:
    """``pi(encode(h)) + N(0, noise^2)`` clamped to the design box."""
    if exploration_noise < 0:
        raise ValueError("exploration noise must be non-negative")
    design = policy.design(history, rng)
    if exploration_noise > 0:
        design = design + rng.normal(0.0, exploration_noise, size=design.shape)
    return np.clip(design, policy.design_low, policy.design_high)


class RandomPolicy:
    """Uniform draws from the design box, ignoring the history."""

    def __init__(self, design_low: Array, design_high: Array, horizon: int) -> None:
        self.design_low = np.asarray(design_low, dtype=np.float64)
        self.design_high = np.asarray(design_high, dtype=np.float64)
        self.horizon = horizon

    @classmethod
    def for_model(cls, model: ImplicitModel, horizon: int) -> RandomPolicy:
        return cls(model.design_low, model.design_high, horizon)

    def design(self, history: History, rng: np.random.Generator) -> Array:
        return rng.uniform(
            self.design_low, self.design_high, size=(history.batch_size, self.design_low.size)
        )


class FixedDesignPolicy:
    """A static design sequence, the same for every trajectory."""

    def __init__(self, designs: Array) -> None:
        designs = np.asarray(designs, dtype=np.float64)
        self.designs = designs.reshape(designs.shape[0], -1)
        self.horizon = int(self.designs.shape[0])

    def design(self, history: History, rng: np.random.Generator) -> Array:
        return np.repeat(self.designs[history.length][None], history.batch_size, axis=0)
