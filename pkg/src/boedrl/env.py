"""The experimental-design decision process: histories, trajectory state, stepping and replay."""

from __future__ import annotations

import threading
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from boedrl.errors import ContractError, DimensionError
from boedrl.nn.tensor import Array
from boedrl.simulators import ImplicitModel
from boedrl.simulators.base import Latent


@dataclass(frozen=True)
class History:
    """A batch of equal-length experiment histories ``h_t = {(xi_1, y_1), ..., (xi_t, y_t)}``.

    ``designs`` is ``(B, t, design_dim)`` and ``observations`` ``(B, t, observation_dim)``. A
    single trajectory is a batch of one.
    """

    capacity: int
    designs: Array
    observations: Array

    def __post_init__(self) -> None:
        if self.designs.shape[:2] != self.observations.shape[:2]:
            raise DimensionError(
                f"designs {self.designs.shape} and observations {self.observations.shape} "
                "disagree on batch or length"
            )
        if self.designs.shape[1] > self.capacity:
            raise ContractError(f"history of length {self.designs.shape[1]} exceeds capacity")

    @classmethod
    def empty(
        cls, capacity: int, design_dim: int, observation_dim: int, batch_size: int = 1
    ) -> History:
        return cls(
            capacity,
            np.zeros((batch_size, 0, design_dim)),
            np.zeros((batch_size, 0, observation_dim)),
        )

    @classmethod
    def from_pairs(
        cls, capacity: int, pairs: Sequence[tuple[Sequence[float], Sequence[float]]]
    ) -> History:
        if not pairs:
            raise ContractError("from_pairs needs at least one pair; use History.empty")
        designs = np.array([np.atleast_1d(design) for design, _ in pairs], dtype=np.float64)
        observations = np.array([np.atleast_1d(obs) for _, obs in pairs], dtype=np.float64)
        return cls(capacity, designs[None], observations[None])

    @property
    def batch_size(self) -> int:
        return int(self.designs.shape[0])

    @property
    def length(self) -> int:
        return int(self.designs.shape[1])

    @property
    def design_dim(self) -> int:
        return int(self.designs.shape[2])

    @property
    def observation_dim(self) -> int:
        return int(self.observations.shape[2])

    @property
    def is_full(self) -> bool:
        return self.length == self.capacity

    def append(self, design: Array, observation: Array) -> History:
        if self.is_full:
            raise ContractError("cannot append to a full history")
        design = np.asarray(design, dtype=np.float64).reshape(self.batch_size, 1, -1)
        observation = np.asarray(observation, dtype=np.float64).reshape(self.batch_size, 1, -1)
        return History(
            self.capacity,
            np.concatenate([self.designs, design], axis=1),
            np.concatenate([self.observations, observation], axis=1),
        )

    def prefix(self, length: int) -> History:
        return History(self.capacity, self.designs[:, :length], self.observations[:, :length])

    def select(self, index: slice | Array) -> History:
        return History(self.capacity, self.designs[index], self.observations[index])

    def pairs(self, trajectory: int = 0) -> list[tuple[Array, Array]]:
        return list(
            zip(self.designs[trajectory], self.observations[trajectory], strict=True)
        )

    def features(
        self, design_scale: Array | None = None, observation_scale: Array | None = None
    ) -> Array:
        """Concatenated ``(xi, y)`` pairs, optionally rescaled, shape ``(B, t, d + o)``."""
        designs = self.designs if design_scale is None else self.designs / design_scale
        observations = (
            self.observations
            if observation_scale is None
            else self.observations / observation_scale
        )
        return np.concatenate([designs, observations], axis=-1)


def encoded_dim(capacity: int, design_dim: int, observation_dim: int) -> int:
    return capacity * (design_dim + observation_dim) + 1


def encode_history_concat(
    history: History,
    design_scale: Array | None = None,
    observation_scale: Array | None = None,
) -> Array:
    """Zero-padded concatenation of all pairs plus the normalized step index ``t / T``.

    Returns ``(B, T * (d + o) + 1)``. Parameters never enter the encoding.
    """
    batch = history.batch_size
    pairs = history.features(design_scale, observation_scale).reshape(batch, -1)
    width = encoded_dim(history.capacity, history.design_dim, history.observation_dim)
    encoded = np.zeros((batch, width))
    encoded[:, : pairs.shape[1]] = pairs
    encoded[:, -1] = history.length / history.capacity
    return encoded


@dataclass(frozen=True)
class ThetaBatch:
    """Ground-truth parameters ``theta0`` ``(B, p)`` and contrastive draws ``(B, L, p)``."""

    theta0: Array
    contrastives: Array

    @property
    def batch_size(self) -> int:
        return int(self.theta0.shape[0])

    @property
    def num_contrastive(self) -> int:
        return int(self.contrastives.shape[1])

    @property
    def all(self) -> Array:
        """``theta_{0:L}`` stacked as ``(B, L + 1, p)`` with the ground truth first."""
        return np.concatenate([self.theta0[:, None, :], self.contrastives], axis=1)

    def select(self, index: slice | Array) -> ThetaBatch:
        return ThetaBatch(self.theta0[index], self.contrastives[index])


def sample_thetas(
    model: ImplicitModel, count: int, rng: np.random.Generator, batch_size: int = 1
) -> ThetaBatch:
    """Draw ``count = L + 1`` i.i.d. prior samples per trajectory; index 0 is the ground truth."""
    if count < 2:
        raise ContractError(f"need a ground truth and at least one contrastive sample, got {count}")
    draws = model.sample_prior_batch(batch_size, count, rng)
    return ThetaBatch(draws[:, 0], draws[:, 1:])


def history_log_likelihood(model: ImplicitModel, theta: Array, history: History) -> Array:
    """``log p(h | theta)`` for ``theta`` of shape ``(B, M, p)``; ``(B, M)`` result."""
    return model.log_likelihood(theta, history.designs, history.observations)


class RewardFn(Protocol):
    def __call__(self, previous: History, current: History, thetas: ThetaBatch) -> Array: ...


class DesignPolicy(Protocol):
    horizon: int

    def design(self, history: History, rng: np.random.Generator) -> Array: ...


@dataclass(frozen=True)
class TrajectoryState:
    history: History
    thetas: ThetaBatch
    latent: Latent = None
    trajectory_ids: Array = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    @property
    def done(self) -> bool:
        return self.history.is_full


def reset(
    model: ImplicitModel,
    num_contrastive: int,
    rng: np.random.Generator,
    horizon: int,
    batch_size: int = 1,
    first_trajectory_id: int = 0,
    theta0: Array | None = None,
) -> TrajectoryState:
    """Start ``batch_size`` trajectories; ``theta0`` pins the ground truth of every one."""
    if num_contrastive < 1:
        raise ContractError(f"need at least one contrastive sample, got {num_contrastive}")
    thetas = sample_thetas(model, num_contrastive + 1, rng, batch_size)
    if theta0 is not None:
        pinned = np.broadcast_to(np.asarray(theta0, dtype=np.float64), thetas.theta0.shape)
        thetas = ThetaBatch(pinned.copy(), thetas.contrastives)
    latent = model.init_latent(thetas.theta0, rng)
    history = History.empty(horizon, model.design_dim, model.observation_dim, batch_size)
    ids = np.arange(first_trajectory_id, first_trajectory_id + batch_size, dtype=np.int64)
    return TrajectoryState(history, thetas, latent, ids)


def step(
    state: TrajectoryState,
    design: Array,
    model: ImplicitModel,
    reward_fn: RewardFn,
    rng: np.random.Generator,
) -> tuple[TrajectoryState, Array, bool]:
    """Run one experiment under ``theta0`` for every trajectory and score it with ``reward_fn``."""
    if state.done:
        raise ContractError("step called on a finished trajectory")
    design = np.asarray(design, dtype=np.float64).reshape(state.history.batch_size, -1)
    design = model.clamp_design(design)
    observation, latent = model.simulate(state.thetas.theta0, design, rng, state.latent)
    history = state.history.append(design, observation)
    reward = np.asarray(reward_fn(state.history, history, state.thetas), dtype=np.float64)
    next_state = replace(state, history=history, latent=latent)
    return next_state, reward, next_state.done


@dataclass(frozen=True)
class Rollout:
    """Every prefix ``h_0 .. h_T`` of a batch of trajectories, with their parameters."""

    histories: list[History]
    thetas: ThetaBatch

    @property
    def final(self) -> History:
        return self.histories[-1]


def simulate_rollouts(
    model: ImplicitModel,
    policy: DesignPolicy,
    num_rollouts: int,
    num_contrastive: int,
    rng: np.random.Generator,
    theta0: Array | None = None,
) -> Rollout:
    """Roll ``policy`` forward for its full horizon without computing rewards."""
    state = reset(model, num_contrastive, rng, policy.horizon, num_rollouts, theta0=theta0)
    histories = [state.history]
    latent = state.latent
    history = state.history
    for _ in range(policy.horizon):
        design = model.clamp_design(policy.design(history, rng))
        observation, latent = model.simulate(state.thetas.theta0, design, rng, latent)
        history = history.append(design, observation)
        histories.append(history)
    return Rollout(histories, state.thetas)


@dataclass(frozen=True)
class Transition:
    """One replay record ``(h_{t-1}, xi_t, h_t, r_t)`` with histories in encoded form."""

    previous: Array
    design: Array
    current: Array
    reward: float
    done: bool
    trajectory_id: int


@dataclass(frozen=True)
class TransitionBatch:
    previous: Array
    design: Array
    current: Array
    reward: Array
    done: Array
    trajectory_id: Array

    def __len__(self) -> int:
        return int(self.reward.shape[0])


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling; push and sample are mutually exclusive."""

    _INITIAL_ROWS = 4096

    def __init__(
        self, capacity: int, state_dim: int, design_dim: int, rng: np.random.Generator
    ) -> None:
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.state_dim = state_dim
        self.design_dim = design_dim
        self.rng = rng
        self._size = 0
        self._cursor = 0
        self._lock = threading.Lock()
        self._allocate(min(capacity, self._INITIAL_ROWS))

    def _allocate(self, rows: int) -> None:
        def grow(old: Array | None, shape: tuple[int, ...], dtype: type) -> Array:
            new = np.zeros((rows, *shape), dtype=dtype)
            if old is not None:
                new[: old.shape[0]] = old
            return new

        self._previous = grow(getattr(self, "_previous", None), (self.state_dim,), np.float64)
        self._current = grow(getattr(self, "_current", None), (self.state_dim,), np.float64)
        self._design = grow(getattr(self, "_design", None), (self.design_dim,), np.float64)
        self._reward = grow(getattr(self, "_reward", None), (), np.float64)
        self._done = grow(getattr(self, "_done", None), (), np.bool_)
        self._trajectory = grow(getattr(self, "_trajectory", None), (), np.int64)

    def __len__(self) -> int:
        return self._size

    def push(self, transition: Transition) -> None:
        self.push_batch(
            transition.previous[None],
            transition.design[None],
            transition.current[None],
            np.array([transition.reward]),
            np.array([transition.done]),
            np.array([transition.trajectory_id]),
        )

    def push_batch(
        self,
        previous: Array,
        design: Array,
        current: Array,
        reward: Array,
        done: Array,
        trajectory_id: Array,
    ) -> None:
        if previous.shape[-1] != self.state_dim or design.shape[-1] != self.design_dim:
            raise DimensionError(
                f"transition dims {previous.shape}/{design.shape} do not match buffer "
                f"({self.state_dim}, {self.design_dim})"
            )
        if not np.all(np.isfinite(reward)):
            raise ContractError("rewards pushed to the replay buffer must be finite")
        with self._lock:
            for i in range(previous.shape[0]):
                slot = self._cursor
                if slot >= self._reward.shape[0]:
                    self._allocate(min(self.capacity, 2 * self._reward.shape[0]))
                self._previous[slot] = previous[i]
                self._design[slot] = design[i]
                self._current[slot] = current[i]
                self._reward[slot] = reward[i]
                self._done[slot] = done[i]
                self._trajectory[slot] = trajectory_id[i]
                self._cursor = (slot + 1) % self.capacity
                self._size = min(self._size + 1, self.capacity)

    def get(self, index: int) -> Transition:
        with self._lock:
            if not 0 <= index < self._size:
                raise IndexError(index)
            return Transition(
                self._previous[index].copy(),
                self._design[index].copy(),
                self._current[index].copy(),
                float(self._reward[index]),
                bool(self._done[index]),
                int(self._trajectory[index]),
            )

    def sample(self, batch_size: int) -> TransitionBatch:
        """Uniform draws with replacement."""
        with self._lock:
            if self._size == 0:
                raise ContractError("cannot sample from an empty replay buffer")
            index = self.rng.integers(0, self._size, size=batch_size)
            return TransitionBatch(
                self._previous[index],
                self._design[index],
                self._current[index],
                self._reward[index],
                self._done[index],
                self._trajectory[index],
            )


def buffer_push(buffer: ReplayBuffer, transition: Transition) -> None:
    buffer.push(transition)


def buffer_sample(buffer: ReplayBuffer, batch_size: int) -> TransitionBatch:
    return buffer.sample(batch_size)
