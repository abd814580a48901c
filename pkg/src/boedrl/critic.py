"""Separable critic ``U(h, theta) = <E_h(h), E_theta(theta)>`` and its InfoNCE training."""

from __future__ import annotations

import math
from collections.abc import Callable
from typing import Literal, Protocol

import numpy as np

from boedrl.env import History, Rollout, ThetaBatch, history_log_likelihood
from boedrl.errors import (
    ContractError,
    DimensionError,
    NumericError,
    UnsupportedCapabilityError,
)
from boedrl.nn import (
    Adam,
    AttentionPool,
    AttentionPoolSpec,
    Lstm,
    LstmSpec,
    Mlp,
    MlpSpec,
    Module,
    Tensor,
    backward,
    soft_update,
)
from boedrl.nn.tensor import Array
from boedrl.simulators import ImplicitModel

HistoryEncoder = Literal["attention", "lstm"]


class Critic(Protocol):
    def score_all(self, history: History, thetas: Array) -> Array:
        """Scores ``(B, M)`` for ``thetas`` ``(B, M, p)`` against each trajectory of ``history``."""
        ...


class CriticNet(Module):
    def __init__(
        self,
        design_dim: int,
        observation_dim: int,
        parameter_dim: int,
        rng: np.random.Generator,
        encoder: HistoryEncoder = "attention",
        embedding_dim: int = 32,
        pair_hidden: tuple[int, ...] = (32,),
        theta_hidden: tuple[int, ...] = (64, 64),
        design_scale: Array | None = None,
        observation_scale: Array | None = None,
        zero_theta_encoder: bool = False,
    ) -> None:
        self.encoder_kind = encoder
        self.embedding_dim = embedding_dim
        self.pair_dim = design_dim + observation_dim
        self.parameter_dim = parameter_dim
        self.design_scale = design_scale
        self.observation_scale = observation_scale
        if encoder == "attention":
            spec = AttentionPoolSpec.build(self.pair_dim, embedding_dim, pair_hidden)
            self.history_encoder: AttentionPool | Lstm = AttentionPool(spec, rng)
            self.history_head: Mlp | None = None
        elif encoder == "lstm":
            self.history_encoder = Lstm(LstmSpec(self.pair_dim, embedding_dim), rng)
            self.history_head = Mlp(MlpSpec(embedding_dim, embedding_dim, hidden_dims=()), rng)
        else:
            raise ValueError(f"Unknown history encoder {encoder!r}")
        self.theta_encoder = Mlp(
            MlpSpec(parameter_dim, embedding_dim, hidden_dims=theta_hidden),
            rng,
            init="zeros" if zero_theta_encoder else "he",
        )

    @classmethod
    def for_model(
        cls,
        model: ImplicitModel,
        rng: np.random.Generator,
        encoder: HistoryEncoder | None = None,
        **kwargs: object,
    ) -> CriticNet:
        if encoder is None:
            encoder = "attention" if model.conditionally_independent else "lstm"
        return cls(
            model.design_dim,
            model.observation_dim,
            model.parameter_dim,
            rng,
            encoder=encoder,
            design_scale=model.design_scale,
            observation_scale=model.observation_scale,
            **kwargs,  # type: ignore[arg-type]
        )

    def _pairs(self, history: History) -> Array:
        if history.design_dim + history.observation_dim != self.pair_dim:
            raise DimensionError(
                f"critic expects pairs of dim {self.pair_dim}, got "
                f"{history.design_dim} + {history.observation_dim}"
            )
        return history.features(self.design_scale, self.observation_scale)

    def prefix_embeddings(self, history: History) -> list[Tensor]:
        """History embeddings of every non-empty prefix ``h_1 .. h_t``, each ``(B, k)``."""
        pairs = Tensor(self._pairs(history))
        if isinstance(self.history_encoder, Lstm):
            lstm, head = self.history_encoder, self.history_head
            assert head is not None
            hidden = Tensor(np.zeros((history.batch_size, self.embedding_dim)))
            cell = Tensor(np.zeros((history.batch_size, self.embedding_dim)))
            out = []
            for t in range(history.length):
                hidden, cell = lstm.step(pairs[:, t], hidden, cell)
                out.append(head(hidden))
            return out
        pool = self.history_encoder
        if history.length == 0:
            return []
        values = pool.encoder(pairs)
        logits = pool.attention(pairs)
        out = []
        for t in range(1, history.length + 1):
            weights = logits[:, :t].softmax(axis=-2)
            out.append((weights * values[:, :t]).sum(axis=-2))
        return out

    def history_embedding(self, history: History) -> Tensor:
        if history.length == 0:
            return Tensor(np.zeros((history.batch_size, self.embedding_dim)))
        pairs = Tensor(self._pairs(history))
        if isinstance(self.history_encoder, Lstm):
            assert self.history_head is not None
            steps = [pairs[:, t] for t in range(history.length)]
            return self.history_head(self.history_encoder(steps))
        return self.history_encoder.pool(pairs)

    def theta_embedding(self, thetas: Array) -> Tensor:
        thetas = np.asarray(thetas, dtype=np.float64)
        if thetas.shape[-1] != self.parameter_dim:
            raise DimensionError(
                f"critic expects parameter dim {self.parameter_dim}, got {thetas.shape}"
            )
        return self.theta_encoder(Tensor(thetas))

    @staticmethod
    def inner(history_embedding: Tensor, theta_embedding: Tensor) -> Tensor:
        batch, k = history_embedding.shape
        return (history_embedding.reshape(batch, 1, k) * theta_embedding).sum(axis=-1)

    def scores(self, history: History, thetas: Array) -> Tensor:
        return self.inner(self.history_embedding(history), self.theta_embedding(thetas))

    def score_all(self, history: History, thetas: Array) -> Array:
        return self.scores(history, thetas).data


def critic_score(critic: Critic, history: History, theta: Array) -> float:
    """``U(h, theta)`` for a single trajectory and parameter vector."""
    theta = np.asarray(theta, dtype=np.float64).reshape(1, 1, -1)
    return float(critic.score_all(history.select(slice(0, 1)), theta)[0, 0])


def infonce_objective(scores: Tensor) -> Tensor:
    """Per-trajectory contrastive bound from ``(B, L + 1)`` scores with the positive in column 0."""
    num = scores.shape[1]
    return scores[:, 0] - scores.logsumexp(axis=1) + math.log(num)


def infonce_loss(critic: CriticNet, history: History, thetas: ThetaBatch) -> Tensor:
    """Negative InfoNCE bound averaged over trajectories and over all prefixes ``h_1 .. h_T``."""
    if history.length == 0:
        raise ContractError("critic training needs non-empty histories")
    theta_embedding = critic.theta_embedding(thetas.all)
    total: Tensor | None = None
    for history_embedding in critic.prefix_embeddings(history):
        bound = infonce_objective(critic.inner(history_embedding, theta_embedding)).mean()
        total = bound if total is None else total + bound
    assert total is not None
    return -(total / history.length)


def train_critic_batch(critic: CriticNet, batch: Rollout, optimizer: Adam) -> float:
    """One ascent step on the InfoNCE bound; returns the bound value before the step."""
    if batch.thetas.batch_size < 2:
        raise ContractError("critic minibatch needs at least two trajectories")
    optimizer.zero_grad()
    loss = infonce_loss(critic, batch.final, batch.thetas)
    value = -loss.item()
    if not math.isfinite(value):
        raise NumericError("non-finite critic loss", {"value": value})
    backward(loss)
    optimizer.step()
    return value


def target_sync(critic: CriticNet, target: CriticNet, tau: float) -> None:
    soft_update(target.parameters(), critic.parameters(), tau)


class OptimalCritic:
    """``U*(h, theta) = log p(h | theta) + c(h)`` from the model's analytic likelihood."""

    def __init__(
        self, model: ImplicitModel, offset: Callable[[History], Array] | None = None
    ) -> None:
        if not model.has_likelihood:
            raise UnsupportedCapabilityError(f"{model.name} has no analytic likelihood")
        self.model = model
        self.offset = offset

    def score_all(self, history: History, thetas: Array) -> Array:
        scores = history_log_likelihood(self.model, np.asarray(thetas, dtype=np.float64), history)
        if self.offset is not None:
            scores = scores + np.asarray(self.offset(history), dtype=np.float64).reshape(-1, 1)
        return scores


def optimal_critic(
    model: ImplicitModel, offset: Callable[[History], Array] | None = None
) -> OptimalCritic:
    return OptimalCritic(model, offset)
