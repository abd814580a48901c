from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from boedrl.env import ReplayBuffer, TransitionBatch
from boedrl.errors import ContractError, NumericError
from boedrl.nn import Adam, Tensor, backward, soft_update
from boedrl.nn.tensor import Array

from .policies import PolicyNet, TwinQ

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class TD3Hyperparameters:
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_update_frequency: int = 2
    batch_size: int = 256
    learning_rate: float = 3e-4


@dataclass(slots=True)
class TD3Losses:
    q_loss: float
    policy_loss: float | None = None


@dataclass
class TD3Agent:
    policy: PolicyNet
    twin_q: TwinQ
    hyper: TD3Hyperparameters
    target_policy: PolicyNet = field(init=False)
    target_q: TwinQ = field(init=False)
    policy_optimizer: Adam = field(init=False)
    q_optimizer: Adam = field(init=False)
    updates: int = 0

    def __post_init__(self) -> None:
        self.target_policy = self.policy.clone()  # type: ignore[assignment]
        self.target_q = self.twin_q.clone()  # type: ignore[assignment]
        self.policy_optimizer = Adam(self.policy.parameters(), self.hyper.learning_rate)
        self.q_optimizer = Adam(self.twin_q.parameters(), self.hyper.learning_rate)

    def sync_targets(self, tau: float) -> None:
        soft_update(self.target_policy.parameters(), self.policy.parameters(), tau)
        soft_update(self.target_q.parameters(), self.twin_q.parameters(), tau)


def td3_target(agent: TD3Agent, batch: TransitionBatch, rng: np.random.Generator) -> Array:
    """``y = r + gamma (1 - done) min(Q1', Q2')(h', pi'(h') + clipped noise)``."""
    hyper = agent.hyper
    next_states = Tensor(batch.current)
    next_designs = agent.target_policy(next_states).data
    if hyper.policy_noise > 0:
        noise = rng.normal(0.0, hyper.policy_noise, size=next_designs.shape)
        next_designs = next_designs + np.clip(noise, -hyper.noise_clip, hyper.noise_clip)
    next_designs = np.clip(next_designs, agent.policy.design_low, agent.policy.design_high)
    q1, q2 = agent.target_q(next_states, Tensor(next_designs))
    bootstrap = np.minimum(q1.data, q2.data)
    not_done = 1.0 - batch.done.astype(np.float64)
    return batch.reward + hyper.gamma * not_done * bootstrap


def q_loss(twin_q: TwinQ, batch: TransitionBatch, target: Array) -> Tensor:
    q1, q2 = twin_q(Tensor(batch.previous), Tensor(batch.design))
    return ((q1 - target) ** 2).mean() + ((q2 - target) ** 2).mean()


def policy_loss(policy: PolicyNet, twin_q: TwinQ, states: Array) -> Tensor:
    state = Tensor(states)
    return -twin_q.q1_value(state, policy(state)).mean()


def _checked(value: float, what: str, step_index: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what}", {"update": step_index})
    return value


def td3_update(
    agent: TD3Agent, buffer: ReplayBuffer, step_index: int, rng: np.random.Generator
) -> TD3Losses:
    """One clipped double-Q update; the actor and all targets move when ``step_index`` hits the
    policy update frequency."""
    if len(buffer) < agent.hyper.batch_size:
        raise ContractError(
            f"TD3 update needs {agent.hyper.batch_size} transitions, buffer holds {len(buffer)}"
        )
    batch = buffer.sample(agent.hyper.batch_size)
    target = td3_target(agent, batch, rng)

    agent.q_optimizer.zero_grad()
    loss = q_loss(agent.twin_q, batch, target)
    losses = TD3Losses(_checked(loss.item(), "Q loss", step_index))
    backward(loss)
    agent.q_optimizer.step()

    if step_index % agent.hyper.policy_update_frequency == 0:
        agent.policy_optimizer.zero_grad()
        actor = policy_loss(agent.policy, agent.twin_q, batch.previous)
        losses.policy_loss = _checked(actor.item(), "policy loss", step_index)
        backward(actor)
        agent.policy_optimizer.step()
        agent.twin_q.zero_grad()
        agent.sync_targets(agent.hyper.tau)

    agent.updates += 1
    return losses
