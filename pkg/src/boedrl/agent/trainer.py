from __future__ import annotations

import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from tqdm import tqdm

from boedrl.artifacts import append_csv_rows
from boedrl.checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from boedrl.config import RunConfig
from boedrl.critic import Critic, CriticNet, target_sync, train_critic_batch
from boedrl.env import DesignPolicy, ReplayBuffer, Rollout, reset, step
from boedrl.errors import CheckpointError, ContractError, NumericError
from boedrl.estimators import BoundEstimate, BoundKind, estimate_bounds, reward_totals_match
from boedrl.nn import Adam, Module
from boedrl.nn.tensor import Array
from boedrl.rewards import RewardStrategy, build_reward
from boedrl.simulators import ImplicitModel, build_model
from boedrl.types.records import METRICS_COLUMNS, PRODUCER, MetricsRow

from .policies import PolicyNet, RandomPolicy, TwinQ, select_action
from .td3 import TD3Agent, TD3Hyperparameters, td3_update

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ckpt"
ABORT_SNAPSHOT_NAME = "abort.ckpt"
METRICS_NAME = "metrics.csv"

# tolerance of the per-trajectory reward-sum check after each rollout
TELESCOPING_TOLERANCE = 1e-6

_RNG_STREAMS = ("init", "rollout", "replay", "update", "critic", "eval")


def evaluate_policy(
    policy: DesignPolicy,
    model: ImplicitModel,
    bound_kind: BoundKind | str,
    num_contrastive: int,
    num_rollouts: int,
    rng: np.random.Generator,
    critic: Critic | None = None,
) -> BoundEstimate:
    """Noise-free evaluation of ``policy`` under one of the contrastive bounds."""
    kind = BoundKind(bound_kind)
    estimates = estimate_bounds(
        model, policy, [kind], num_contrastive, num_rollouts, rng, critic=critic
    )
    return estimates[kind]


@dataclass
class TrainingResult:
    checkpoint: Path
    metrics: Path
    rows: list[MetricsRow]
    final_eval: BoundEstimate


@dataclass
class _Window:
    q_losses: list[float] = field(default_factory=list)
    policy_losses: list[float] = field(default_factory=list)
    critic_losses: list[float] = field(default_factory=list)

    @staticmethod
    def _mean(values: list[float]) -> float:
        return float(np.mean(values)) if values else math.nan

    def summary(self) -> tuple[float, float, float]:
        return (
            self._mean(self.q_losses),
            self._mean(self.policy_losses),
            self._mean(self.critic_losses),
        )


class Trainer:
    """Alternates batched rollouts, TD3 updates from replay and InfoNCE critic updates."""

    def __init__(
        self, config: RunConfig, output_dir: Path | None = None, progress: bool = True
    ) -> None:
        self.config = config
        self.config_hash = config.config_hash()
        self.output_dir = output_dir if output_dir is not None else config.resolved_output_dir()
        self.progress = progress
        self.model = build_model(config.model.name, **config.model.params())
        self.horizon = config.horizon

        streams = np.random.default_rng(config.seed).spawn(len(_RNG_STREAMS))
        self.rngs: dict[str, np.random.Generator] = dict(zip(_RNG_STREAMS, streams, strict=True))

        tc = config.trainer
        init = self.rngs["init"]
        policy = PolicyNet.for_model(self.model, self.horizon, init, tc.hidden_dims)
        twin_q = TwinQ.for_policy(policy, init, tc.hidden_dims)
        self.agent = TD3Agent(
            policy,
            twin_q,
            TD3Hyperparameters(
                gamma=tc.gamma,
                tau=tc.tau,
                policy_noise=tc.policy_noise,
                noise_clip=tc.noise_clip,
                policy_update_frequency=tc.policy_update_frequency,
                batch_size=tc.batch_size,
                learning_rate=tc.learning_rate,
            ),
        )

        cc = config.critic
        self.critic = CriticNet.for_model(
            self.model,
            init,
            encoder=cc.encoder,
            embedding_dim=cc.embedding_dim,
            pair_hidden=cc.pair_hidden,
            theta_hidden=cc.theta_hidden,
        )
        self.target_critic: CriticNet = self.critic.clone()  # type: ignore[assignment]
        self.critic_optimizer = Adam(self.critic.parameters(), cc.learning_rate)
        self.reward: RewardStrategy = build_reward(
            config.reward_kind, critic=self.target_critic, model=self.model
        )

        self.buffer = ReplayBuffer(
            tc.replay_capacity, policy.state_dim, self.model.design_dim, self.rngs["replay"]
        )
        self.random_policy = RandomPolicy.for_model(self.model, self.horizon)
        self.env_steps = 0
        self.rollouts = 0
        self._window = _Window()
        self._started = time.perf_counter()

    # -- one iteration of the outer loop --------------------------------------

    def collect_rollout(self) -> tuple[Rollout, Array]:
        """Run ``parallel_envs`` trajectories to the horizon, pushing every transition to replay.

        Returns the rollout and its ``(B, T)`` rewards.
        """
        tc = self.config.trainer
        rng = self.rngs["rollout"]
        policy = self.agent.policy
        state = reset(
            self.model,
            tc.num_contrastive,
            rng,
            self.horizon,
            batch_size=tc.parallel_envs,
            first_trajectory_id=self.rollouts * tc.parallel_envs,
        )
        histories = [state.history]
        rewards = []
        for _ in range(self.horizon):
            previous = policy.encode(state.history)
            if self.env_steps < tc.initial_random_timesteps:
                design = self.random_policy.design(state.history, rng)
            else:
                design = select_action(policy, state.history, tc.exploration_noise, rng)
            state, reward, done = step(state, design, self.model, self.reward, rng)
            self.buffer.push_batch(
                previous,
                state.history.designs[:, -1],
                policy.encode(state.history),
                reward,
                np.full(reward.shape, done),
                state.trajectory_ids,
            )
            self.env_steps += tc.parallel_envs
            histories.append(state.history)
            rewards.append(reward)
            assert tc.updates_per_timestep is not None
            for _ in range(tc.updates_per_timestep):
                self.update_agent()
        self.rollouts += 1
        return Rollout(histories, state.thetas), np.stack(rewards, axis=1)

    def update_agent(self) -> None:
        if len(self.buffer) < self.agent.hyper.batch_size:
            return
        losses = td3_update(self.agent, self.buffer, self.agent.updates, self.rngs["update"])
        self._window.q_losses.append(losses.q_loss)
        if losses.policy_loss is not None:
            self._window.policy_losses.append(losses.policy_loss)

    def check_telescoping(self, rollout: Rollout, rewards: Array) -> None:
        final = self.reward.final_score(rollout.final, rollout.thetas)
        if not reward_totals_match(rewards, final, TELESCOPING_TOLERANCE):
            gap = float(np.max(np.abs(rewards.sum(axis=1) - final)))
            raise ContractError(f"reward sums drifted from the final score by {gap:.3g}")

    def update_critic(self, rollout: Rollout) -> float:
        """InfoNCE ascent on minibatches of the latest rollout, then a target-critic sync."""
        cc = self.config.critic
        rng = self.rngs["critic"]
        batch_size = min(cc.batch_size, rollout.thetas.batch_size)
        bounds = []
        for _ in range(cc.updates_per_rollout):
            index = rng.choice(rollout.thetas.batch_size, size=batch_size, replace=False)
            minibatch = Rollout([rollout.final.select(index)], rollout.thetas.select(index))
            bounds.append(train_critic_batch(self.critic, minibatch, self.critic_optimizer))
        target_sync(self.critic, self.target_critic, cc.tau)
        loss = -float(np.mean(bounds)) if bounds else math.nan
        self._window.critic_losses.append(loss)
        return loss

    def train_iteration(self) -> None:
        rollout, rewards = self.collect_rollout()
        self.check_telescoping(rollout, rewards)
        self.update_critic(rollout)

    # -- evaluation and artifacts ------------------------------------------------

    def evaluate(self) -> BoundEstimate:
        tc = self.config.trainer
        kind = BoundKind(self.config.estimator.bound_kind)
        return evaluate_policy(
            self.agent.policy,
            self.model,
            kind,
            tc.eval_contrastive,
            tc.eval_rollouts,
            self.rngs["eval"],
            critic=self.critic if kind is BoundKind.INFONCE else None,
        )

    def record_evaluation(self) -> tuple[MetricsRow, BoundEstimate]:
        estimate = self.evaluate()
        q_loss, policy_loss, critic_loss = self._window.summary()
        self._window = _Window()
        row: MetricsRow = {
            "step": self.env_steps,
            "q_loss": q_loss,
            "policy_loss": policy_loss,
            "critic_loss": critic_loss,
            "eval_bound": estimate.value,
            "eval_stderr": estimate.std_error,
            "wall_clock": round(time.perf_counter() - self._started, 3),
            "config_hash": self.config_hash,
        }
        logger.info(
            "step=%d %s=%.4f±%.4f q_loss=%.4g policy_loss=%.4g critic_loss=%.4g",
            self.env_steps,
            estimate.kind.value,
            estimate.value,
            estimate.std_error,
            q_loss,
            policy_loss,
            critic_loss,
        )
        return row, estimate

    def run(self) -> TrainingResult:
        tc = self.config.trainer
        self.output_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.output_dir / METRICS_NAME
        metrics_path.unlink(missing_ok=True)
        rows: list[MetricsRow] = []
        estimate: BoundEstimate | None = None
        next_eval = tc.eval_every
        show = self.progress and sys.stderr.isatty()
        with tqdm(total=tc.total_timesteps, unit="step", disable=not show) as bar:
            while self.env_steps < tc.total_timesteps:
                before = self.env_steps
                try:
                    self.train_iteration()
                except NumericError:
                    snapshot = self.save(self.output_dir / ABORT_SNAPSHOT_NAME, aborted=True)
                    logger.error(
                        "Numeric failure after %d environment steps; snapshot written to %s",
                        self.env_steps,
                        snapshot,
                    )
                    raise
                bar.update(min(self.env_steps, tc.total_timesteps) - before)
                if self.env_steps >= next_eval or self.env_steps >= tc.total_timesteps:
                    row, estimate = self.record_evaluation()
                    rows.append(row)
                    append_csv_rows(metrics_path, METRICS_COLUMNS, [row])
                    while next_eval <= self.env_steps:
                        next_eval += tc.eval_every
        assert estimate is not None
        checkpoint = self.save(self.output_dir / CHECKPOINT_NAME)
        return TrainingResult(checkpoint, metrics_path, rows, estimate)

    # -- persistence ---------------------------------------------------------------

    def _modules(self) -> dict[str, Module]:
        return {
            "policy": self.agent.policy,
            "twin_q": self.agent.twin_q,
            "target_policy": self.agent.target_policy,
            "target_q": self.agent.target_q,
            "critic": self.critic,
            "target_critic": self.target_critic,
        }

    def _optimizers(self) -> dict[str, Adam]:
        return {
            "policy": self.agent.policy_optimizer,
            "q": self.agent.q_optimizer,
            "critic": self.critic_optimizer,
        }

    def state_arrays(self) -> dict[str, Array]:
        arrays: dict[str, Array] = {}
        for prefix, module in self._modules().items():
            for name, value in module.state_dict().items():
                arrays[f"{prefix}.{name}"] = value
        for prefix, optimizer in self._optimizers().items():
            moments = zip(optimizer.state.first_moment, optimizer.state.second_moment, strict=True)
            for i, (first, second) in enumerate(moments):
                arrays[f"adam_{prefix}.m{i}"] = first.copy()
                arrays[f"adam_{prefix}.v{i}"] = second.copy()
        return arrays

    def meta(self, aborted: bool = False) -> dict[str, Any]:
        return {
            "producer": PRODUCER,
            "config": self.config.model_dump(mode="json"),
            "config_hash": self.config_hash,
            "model": self.model.name,
            "reward_kind": self.config.reward_kind,
            "env_steps": self.env_steps,
            "rollouts": self.rollouts,
            "td3_updates": self.agent.updates,
            "adam_steps": {name: opt.state.step for name, opt in self._optimizers().items()},
            "rng_state": {name: rng.bit_generator.state for name, rng in self.rngs.items()},
            "aborted": aborted,
        }

    def save(self, path: Path, aborted: bool = False) -> Path:
        return write_checkpoint(path, self.meta(aborted), self.state_arrays())

    def load_state(self, checkpoint: Checkpoint) -> None:
        for prefix, module in self._modules().items():
            module.load_state_dict(checkpoint.group(prefix))
        steps = checkpoint.meta["adam_steps"]
        for prefix, optimizer in self._optimizers().items():
            group = checkpoint.group(f"adam_{prefix}")
            slots = len(optimizer.state.first_moment)
            if len(group) != 2 * slots:
                raise CheckpointError(f"optimizer {prefix} expects {slots} moment pairs")
            optimizer.state.first_moment = [group[f"m{i}"].copy() for i in range(slots)]
            optimizer.state.second_moment = [group[f"v{i}"].copy() for i in range(slots)]
            optimizer.state.step = int(steps[prefix])
        for name, rng in self.rngs.items():
            rng.bit_generator.state = checkpoint.meta["rng_state"][name]
        self.env_steps = int(checkpoint.meta["env_steps"])
        self.rollouts = int(checkpoint.meta["rollouts"])
        self.agent.updates = int(checkpoint.meta["td3_updates"])

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> Trainer:
        checkpoint = read_checkpoint(path)
        config = RunConfig.from_mapping(checkpoint.meta["config"])
        if config.config_hash() != checkpoint.meta.get("config_hash"):
            raise CheckpointError(f"{path}: embedded config does not match its hash")
        trainer = cls(config, output_dir=Path(path).parent, progress=False)
        try:
            trainer.load_state(checkpoint)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: incompatible checkpoint contents ({exc})") from exc
        return trainer


def train(
    config: RunConfig,
    reward_kind: str | None = None,
    output_dir: Path | None = None,
    progress: bool = True,
) -> TrainingResult:
    if reward_kind is not None:
        config = RunConfig.from_mapping(
            {**config.model_dump(mode="json"), "reward_kind": reward_kind}
        )
    return Trainer(config, output_dir=output_dir, progress=progress).run()
