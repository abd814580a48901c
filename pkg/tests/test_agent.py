"""Design policies and the TD3 update."""

from __future__ import annotations

import dataclasses
import inspect
from collections.abc import Callable

import numpy as np
import pytest

from boedrl.agent import (
    FixedDesignPolicy,
    PolicyNet,
    RandomPolicy,
    TD3Agent,
    TD3Hyperparameters,
    TwinQ,
    select_action,
    td3_target,
    td3_update,
)
from boedrl.env import History, ReplayBuffer, Transition, TransitionBatch, encoded_dim
from boedrl.errors import ContractError, DimensionError
from boedrl.nn import Tensor, backward
from boedrl.simulators import LocationFindingModel


def _history(batch_size: int = 1) -> History:
    return History.empty(2, 2, 1, batch_size=batch_size)


def _centered(policy: PolicyNet) -> PolicyNet:
    """Zero the output layer so the policy proposes the middle of the design box."""
    last = policy.net.layers[-1]
    last.weight.data = np.zeros_like(last.weight.data)
    last.bias.data = np.zeros_like(last.bias.data)
    return policy


class TestPolicyNet:
    def test_designs_stay_in_the_box(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, _ = tiny_actor_critic(location_finding)
        history = History(2, rng.uniform(-4, 4, (50, 1, 2)), rng.normal(0, 20, (50, 1, 1)))
        designs = policy.design(history, rng)
        assert designs.shape == (50, 2)
        assert np.all((designs >= -4.0) & (designs <= 4.0))

    def test_state_is_the_padded_history_encoding(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
    ) -> None:
        policy, _ = tiny_actor_critic(location_finding, horizon=3)
        assert policy.state_dim == encoded_dim(3, 2, 1) == 10

    def test_rejects_histories_of_another_horizon(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, _ = tiny_actor_critic(location_finding, horizon=3)
        with pytest.raises(DimensionError):
            policy.design(_history(), rng)

    def test_parameters_never_reach_the_actor_or_critics(self) -> None:
        for function in (PolicyNet.design, PolicyNet.encode, TwinQ.__call__, select_action):
            names = inspect.signature(function).parameters
            assert not any("theta" in name for name in names)
        stored = {field.name for field in dataclasses.fields(TransitionBatch)}
        stored |= {field.name for field in dataclasses.fields(Transition)}
        assert not any("theta" in name for name in stored)


class TestSelectAction:
    def test_no_noise_is_deterministic(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
    ) -> None:
        policy, _ = tiny_actor_critic(location_finding)
        first = select_action(policy, _history(), 0.0, np.random.default_rng(1))
        second = select_action(policy, _history(), 0.0, np.random.default_rng(2))
        np.testing.assert_array_equal(first, second)

    def test_large_noise_is_clamped(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, _ = tiny_actor_critic(location_finding)
        designs = select_action(policy, _history(10_000), 5.0, rng)
        assert np.all((designs >= -4.0) & (designs <= 4.0))

    def test_noise_scale(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy = _centered(tiny_actor_critic(location_finding)[0])
        designs = select_action(policy, _history(10_000), 0.1, rng)
        np.testing.assert_allclose(designs.std(axis=0), 0.1, atol=0.01)
        np.testing.assert_allclose(designs.mean(axis=0), 0.0, atol=0.01)

    def test_negative_noise(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, _ = tiny_actor_critic(location_finding)
        with pytest.raises(ValueError):
            select_action(policy, _history(), -0.1, rng)


class TestBaselines:
    def test_random_policy_is_uniform_on_the_box(
        self, location_finding: LocationFindingModel, rng: np.random.Generator
    ) -> None:
        policy = RandomPolicy.for_model(location_finding, 2)
        designs = policy.design(_history(20_000), rng)
        assert np.all((designs >= -4.0) & (designs <= 4.0))
        np.testing.assert_allclose(designs.mean(axis=0), 0.0, atol=0.1)

    def test_fixed_policy_follows_its_schedule(self) -> None:
        policy = FixedDesignPolicy(np.array([[1.0, 2.0], [3.0, 4.0]]))
        history = _history(3)
        rng = np.random.default_rng()
        np.testing.assert_array_equal(policy.design(history, rng), [[1.0, 2.0]] * 3)
        longer = history.append(np.zeros((3, 2)), np.zeros((3, 1)))
        np.testing.assert_array_equal(policy.design(longer, rng), [[3.0, 4.0]] * 3)


def _batch(rng: np.random.Generator, state_dim: int, size: int, done: bool) -> TransitionBatch:
    return TransitionBatch(
        previous=rng.normal(size=(size, state_dim)),
        design=rng.uniform(-4, 4, size=(size, 2)),
        current=rng.normal(size=(size, state_dim)),
        reward=rng.normal(size=size),
        done=np.full(size, done),
        trajectory_id=np.arange(size),
    )


class TestTD3Target:
    def test_terminal_transitions_do_not_bootstrap(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, twin_q = tiny_actor_critic(location_finding)
        agent = TD3Agent(policy, twin_q, TD3Hyperparameters())
        batch = _batch(rng, policy.state_dim, 8, done=True)
        np.testing.assert_array_equal(td3_target(agent, batch, rng), batch.reward)

    def test_zero_discount(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, twin_q = tiny_actor_critic(location_finding)
        agent = TD3Agent(policy, twin_q, TD3Hyperparameters(gamma=0.0))
        batch = _batch(rng, policy.state_dim, 8, done=False)
        np.testing.assert_array_equal(td3_target(agent, batch, rng), batch.reward)

    def test_bootstraps_from_the_smaller_target_q(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, twin_q = tiny_actor_critic(location_finding)
        agent = TD3Agent(policy, twin_q, TD3Hyperparameters(gamma=0.5, policy_noise=0.0))
        batch = _batch(rng, policy.state_dim, 8, done=False)
        state = Tensor(batch.current)
        q1, q2 = agent.target_q(state, agent.target_policy(state))
        expected = batch.reward + 0.5 * np.minimum(q1.data, q2.data)
        np.testing.assert_allclose(td3_target(agent, batch, rng), expected, rtol=1e-12)


class TestTD3Update:
    def _filled_buffer(self, policy: PolicyNet, rng: np.random.Generator) -> ReplayBuffer:
        buffer = ReplayBuffer(4, policy.state_dim, policy.design_dim, np.random.default_rng(0))
        for index in range(2):
            buffer.push(
                Transition(
                    previous=rng.normal(size=policy.state_dim),
                    design=rng.uniform(-4, 4, size=2),
                    current=rng.normal(size=policy.state_dim),
                    reward=float(rng.normal()),
                    done=index == 1,
                    trajectory_id=index,
                )
            )
        return buffer

    def test_matches_a_scripted_step(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, twin_q = tiny_actor_critic(location_finding)
        hyper = TD3Hyperparameters(
            gamma=0.9,
            tau=0.1,
            policy_noise=0.0,
            policy_update_frequency=1,
            batch_size=2,
            learning_rate=1e-3,
        )
        agent = TD3Agent(policy, twin_q, hyper)
        buffer = self._filled_buffer(policy, rng)

        # scripted oracle on clones: one first Adam step moves each entry by lr * g / (|g| + eps)
        q_net, actor = twin_q.clone(), policy.clone()
        target_q, target_policy = agent.target_q.clone(), agent.target_policy.clone()
        assert isinstance(q_net, TwinQ) and isinstance(actor, PolicyNet)
        assert isinstance(target_q, TwinQ) and isinstance(target_policy, PolicyNet)
        index = np.random.default_rng(0).integers(0, 2, size=2)
        rows = [buffer.get(int(i)) for i in index]
        previous = np.stack([row.previous for row in rows])
        design = np.stack([row.design for row in rows])
        current = np.stack([row.current for row in rows])
        reward = np.array([row.reward for row in rows])
        not_done = np.array([0.0 if row.done else 1.0 for row in rows])

        next_design = np.clip(target_policy(Tensor(current)).data, -4.0, 4.0)
        t1, t2 = target_q(Tensor(current), Tensor(next_design))
        y = reward + 0.9 * not_done * np.minimum(t1.data, t2.data)
        q1, q2 = q_net(Tensor(previous), Tensor(design))
        backward(((q1 - y) ** 2).mean() + ((q2 - y) ** 2).mean())
        for p in q_net.parameters():
            p.data = p.data - 1e-3 * p.grad / (np.abs(p.grad) + 1e-8)
        state = Tensor(previous)
        backward(-q_net.q1_value(state, actor(state)).mean())
        for p in actor.parameters():
            p.data = p.data - 1e-3 * p.grad / (np.abs(p.grad) + 1e-8)

        old_target_q = agent.target_q.state_dict()
        losses = td3_update(agent, buffer, 0, np.random.default_rng(1))
        assert losses.policy_loss is not None

        for (name, value), expected in zip(
            agent.twin_q.state_dict().items(), q_net.parameters(), strict=True
        ):
            np.testing.assert_allclose(value, expected.data, rtol=0, atol=1e-10, err_msg=name)
        for value, expected in zip(
            agent.policy.state_dict().values(), actor.parameters(), strict=True
        ):
            np.testing.assert_allclose(value, expected.data, rtol=0, atol=1e-10)
        for name, value in agent.target_q.state_dict().items():
            blended = 0.9 * old_target_q[name] + 0.1 * agent.twin_q.state_dict()[name]
            np.testing.assert_allclose(value, blended, rtol=0, atol=1e-12)

    def test_actor_waits_for_its_turn(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, twin_q = tiny_actor_critic(location_finding)
        agent = TD3Agent(policy, twin_q, TD3Hyperparameters(batch_size=2))
        buffer = self._filled_buffer(policy, rng)
        before = agent.policy.state_dict()
        target_before = agent.target_q.state_dict()
        losses = td3_update(agent, buffer, 1, rng)
        assert losses.policy_loss is None
        assert agent.updates == 1
        for name, value in agent.policy.state_dict().items():
            np.testing.assert_array_equal(value, before[name])
        for name, value in agent.target_q.state_dict().items():
            np.testing.assert_array_equal(value, target_before[name])

    def test_empty_buffer(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, twin_q = tiny_actor_critic(location_finding)
        agent = TD3Agent(policy, twin_q, TD3Hyperparameters())
        with pytest.raises(ContractError):
            td3_update(agent, ReplayBuffer(4, policy.state_dim, 2, rng), 0, rng)

    def test_buffer_smaller_than_batch(
        self,
        location_finding: LocationFindingModel,
        tiny_actor_critic: Callable[..., tuple[PolicyNet, TwinQ]],
        rng: np.random.Generator,
    ) -> None:
        policy, twin_q = tiny_actor_critic(location_finding)
        agent = TD3Agent(policy, twin_q, TD3Hyperparameters(batch_size=3))
        with pytest.raises(ContractError, match="needs 3 transitions"):
            td3_update(agent, self._filled_buffer(policy, rng), 0, rng)
        assert agent.updates == 0
