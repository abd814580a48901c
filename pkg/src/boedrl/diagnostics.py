"""Property suites run by ``boedrl diag``: gradient checks and estimator invariants."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from boedrl.agent.policies import FixedDesignPolicy, PolicyNet, RandomPolicy, TwinQ
from boedrl.agent.td3 import q_loss
from boedrl.critic import CriticNet, OptimalCritic, infonce_loss
from boedrl.env import History, TransitionBatch, simulate_rollouts
from boedrl.estimators import (
    BoundKind,
    dense_rewards,
    estimate_bounds,
    g_score,
    marginal_eig_decomposition_check,
    sparse_rewards,
)
from boedrl.nn import (
    AttentionPool,
    AttentionPoolSpec,
    Lstm,
    LstmSpec,
    Mlp,
    MlpSpec,
    Tensor,
    finite_diff_check,
)
from boedrl.simulators import LinearGaussianModel, LocationFindingModel

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
EXACT_TOLERANCE = 1e-9


@dataclass(frozen=True, slots=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


Check = Callable[[np.random.Generator], PropertyResult]


# -- gradient checks -------------------------------------------------------------


def _gradient_result(name: str, error: float) -> PropertyResult:
    return PropertyResult(name, error < GRADIENT_TOLERANCE, f"max relative error {error:.2e}")


def check_mlp_gradients(rng: np.random.Generator) -> PropertyResult:
    net = Mlp(MlpSpec(3, 2, hidden_dims=(4, 4), hidden_activation="tanh"), rng)
    x = Tensor(rng.normal(size=(5, 3)))
    error = finite_diff_check(lambda: (net(x) ** 2).mean(), net.parameters())
    return _gradient_result("mlp", error)


def check_lstm_gradients(rng: np.random.Generator) -> PropertyResult:
    net = Lstm(LstmSpec(3, 4), rng)
    sequence = [Tensor(rng.normal(size=(2, 3))) for _ in range(3)]
    error = finite_diff_check(lambda: (net(sequence) ** 2).sum(), net.parameters())
    return _gradient_result("lstm", error)


def check_attention_gradients(rng: np.random.Generator) -> PropertyResult:
    net = AttentionPool(AttentionPoolSpec.build(3, 4, hidden_dims=(5,)), rng)
    elements = Tensor(rng.normal(size=(2, 4, 3)))
    error = finite_diff_check(lambda: (net.pool(elements) ** 2).sum(), net.parameters())
    return _gradient_result("attention_pool", error)


def check_critic_gradients(rng: np.random.Generator) -> PropertyResult:
    model = LocationFindingModel()
    rollout = simulate_rollouts(model, RandomPolicy.for_model(model, 3), 3, 4, rng)
    critic = CriticNet.for_model(
        model, rng, embedding_dim=4, pair_hidden=(5,), theta_hidden=(6,)
    )

    def loss() -> Tensor:
        return infonce_loss(critic, rollout.final, rollout.thetas)

    return _gradient_result("critic_infonce", finite_diff_check(loss, critic.parameters()))


def check_q_loss_gradients(rng: np.random.Generator) -> PropertyResult:
    model = LocationFindingModel()
    policy = PolicyNet.for_model(model, 2, rng, hidden_dims=(6,))
    twin_q = TwinQ.for_policy(policy, rng, hidden_dims=(6,))
    batch = TransitionBatch(
        previous=rng.normal(size=(4, policy.state_dim)),
        design=rng.uniform(-4.0, 4.0, size=(4, model.design_dim)),
        current=rng.normal(size=(4, policy.state_dim)),
        reward=rng.normal(size=4),
        done=np.zeros(4, dtype=bool),
        trajectory_id=np.arange(4),
    )
    target = rng.normal(size=4)
    error = finite_diff_check(lambda: q_loss(twin_q, batch, target), twin_q.parameters())
    return _gradient_result("td3_q_loss", error)


GRADIENT_CHECKS: tuple[Check, ...] = (
    check_mlp_gradients,
    check_lstm_gradients,
    check_attention_gradients,
    check_critic_gradients,
    check_q_loss_gradients,
)


# -- estimator invariants ----------------------------------------------------------


def check_telescoping(rng: np.random.Generator) -> PropertyResult:
    model = LocationFindingModel()
    worst = 0.0
    for _ in range(5):
        critic = CriticNet.for_model(model, rng, embedding_dim=8)
        rollout = simulate_rollouts(model, RandomPolicy.for_model(model, 4), 200, 8, rng)
        dense = dense_rewards(rollout.histories, rollout.thetas, critic)
        sparse = sparse_rewards(rollout.histories, rollout.thetas, critic)
        final = g_score(rollout.final, rollout.thetas, critic)
        worst = max(
            worst,
            float(np.max(np.abs(dense.sum(axis=1) - final))),
            float(np.max(np.abs(sparse.sum(axis=1) - dense.sum(axis=1)))),
        )
    return PropertyResult(
        "telescoping", worst < EXACT_TOLERANCE, f"max |sum dense - g(h_T)| {worst:.2e}"
    )


def check_bound_sandwich(rng: np.random.Generator) -> PropertyResult:
    model = LinearGaussianModel()
    policy = FixedDesignPolicy(np.array([[1.0]]))
    num_contrastive = 64
    bounds = estimate_bounds(
        model, policy, [BoundKind.SPCE, BoundKind.SNMC], num_contrastive, 512, rng
    )
    spce = bounds[BoundKind.SPCE].per_rollout
    snmc = bounds[BoundKind.SNMC].per_rollout
    # (L + 1) exp(-spce) = 1 + L exp(-snmc) holds for every rollout
    linked = np.logaddexp(0.0, math.log(num_contrastive) - snmc)
    gap = float(np.max(np.abs(linked - (math.log(num_contrastive + 1) - spce))))
    ordered = bool(spce.mean() <= snmc.mean())
    capped = bool(np.all(spce <= math.log(num_contrastive + 1) + EXACT_TOLERANCE))
    return PropertyResult(
        "bound_sandwich",
        ordered and capped and gap < EXACT_TOLERANCE,
        f"spce={spce.mean():.4f} snmc={snmc.mean():.4f} identity gap={gap:.2e} capped={capped}",
    )


def check_optimal_critic_equality(rng: np.random.Generator) -> PropertyResult:
    model = LocationFindingModel()
    policy = RandomPolicy.for_model(model, 10)
    offsets: dict[str, Callable[[History], np.ndarray]] = {
        "zero": lambda history: np.zeros(history.batch_size),
        "observation_sum": lambda history: history.observations.sum(axis=(1, 2)),
    }
    worst = 0.0
    seed = int(rng.integers(2**32))
    for offset in offsets.values():
        bounds = estimate_bounds(
            model,
            policy,
            [BoundKind.SPCE, BoundKind.INFONCE],
            255,
            512,
            np.random.default_rng(seed),
            critic=OptimalCritic(model, offset),
        )
        gap = np.abs(bounds[BoundKind.INFONCE].per_rollout - bounds[BoundKind.SPCE].per_rollout)
        worst = max(worst, float(gap.max()))
    return PropertyResult(
        "optimal_critic_equality",
        worst < EXACT_TOLERANCE,
        f"max per-rollout |InfoNCE - sPCE| {worst:.2e} over {len(offsets)} offsets",
    )


def check_eig_decomposition(rng: np.random.Generator) -> PropertyResult:
    model = LinearGaussianModel()
    check = marginal_eig_decomposition_check(
        model, FixedDesignPolicy(np.array([[1.0], [1.0]])), 2, 4000, rng, inner_samples=1024
    )
    passed = abs(check.diff) < 3.0 * check.std_error
    return PropertyResult(
        "eig_decomposition",
        passed,
        f"total={check.lhs:.4f} sum of marginals={check.rhs:.4f} se={check.std_error:.4f}",
    )


INVARIANT_CHECKS: tuple[Check, ...] = (
    check_telescoping,
    check_bound_sandwich,
    check_optimal_critic_equality,
    check_eig_decomposition,
)


def run_checks(checks: tuple[Check, ...], seed: int = 0) -> list[PropertyResult]:
    results = []
    for check, stream in zip(checks, np.random.default_rng(seed).spawn(len(checks)), strict=True):
        try:
            result = check(stream)
        except ArithmeticError as exc:
            result = PropertyResult(check.__name__.removeprefix("check_"), False, str(exc))
        level = logging.INFO if result.passed else logging.ERROR
        status = "ok" if result.passed else "FAILED"
        logger.log(level, "%s: %s (%s)", result.name, status, result.detail)
        results.append(result)
    return results
