"""Contrastive information bounds, rewards built from them, and self-normalized posteriors.

Everything runs in log space: likelihood products over a whole trajectory underflow long
before the contrastive averages are formed.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import TypeVar

import numpy as np
from scipy.special import logsumexp

from boedrl.config import get_settings
from boedrl.critic import Critic
from boedrl.env import (
    DesignPolicy,
    History,
    Rollout,
    ThetaBatch,
    history_log_likelihood,
    simulate_rollouts,
)
from boedrl.errors import ContractError, NumericError, UnsupportedCapabilityError
from boedrl.nn.tensor import Array
from boedrl.simulators import ImplicitModel

# caps the (chunk, L + 1) score matrices at a few tens of MB
_SCORE_BUDGET = 2_000_000

ChunkT = TypeVar("ChunkT")


class BoundKind(str, Enum):
    SPCE = "spce"
    SNMC = "snmc"
    INFONCE = "infonce"

    @property
    def needs_likelihood(self) -> bool:
        return self is not BoundKind.INFONCE


@dataclass(frozen=True)
class BoundEstimate:
    kind: BoundKind
    value: float
    std_error: float
    num_contrastive: int
    num_rollouts: int
    per_rollout: Array = field(repr=False, compare=False)

    @classmethod
    def from_samples(cls, kind: BoundKind, samples: Array, num_contrastive: int) -> BoundEstimate:
        samples = np.asarray(samples, dtype=np.float64)
        n = samples.size
        std_error = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(kind, float(samples.mean()), std_error, num_contrastive, n, samples)

    def as_record(self) -> dict[str, object]:
        return {
            "bound_kind": self.kind.value,
            "value": self.value,
            "std_error": self.std_error,
            "num_contrastive": self.num_contrastive,
            "num_rollouts": self.num_rollouts,
        }


# -- contrastive scores -------------------------------------------------------


def contrastive_score(scores: Array) -> Array:
    """``log[exp s_0 / ((1/M) sum_m exp s_m)]`` per row of ``(B, M)`` scores."""
    return scores[:, 0] - logsumexp(scores, axis=1) + math.log(scores.shape[1])


def _check_finite(scores: Array, what: str, history: History) -> None:
    if not np.all(np.isfinite(scores)):
        bad = int(np.count_nonzero(~np.isfinite(scores)))
        raise NumericError(
            f"non-finite {what}",
            {"non_finite": bad, "history_length": history.length, "shape": scores.shape},
        )


def g_score(history: History, thetas: ThetaBatch, critic: Critic) -> Array:
    """Contrastive score ``g(h_t)`` per trajectory; ``g(h_0) = 0`` without calling the critic."""
    if history.length == 0:
        return np.zeros(history.batch_size)
    scores = critic.score_all(history, thetas.all)
    _check_finite(scores, "critic output", history)
    return contrastive_score(scores)


def _check_consecutive(histories: Sequence[History]) -> None:
    if not histories or histories[0].length != 0:
        raise ContractError("history sequence must start at the empty history h_0")
    for before, after in zip(histories[:-1], histories[1:], strict=True):
        if after.length != before.length + 1:
            raise ContractError(
                f"histories of length {before.length} and {after.length} are not consecutive"
            )
        if not (
            np.array_equal(after.designs[:, : before.length], before.designs)
            and np.array_equal(after.observations[:, : before.length], before.observations)
        ):
            raise ContractError(f"history of length {after.length} does not extend its predecessor")


def dense_rewards(histories: Sequence[History], thetas: ThetaBatch, critic: Critic) -> Array:
    """``r_t = g(h_t) - g(h_{t-1})`` for ``t = 1..T``; shape ``(B, T)``."""
    _check_consecutive(histories)
    scores = np.stack([g_score(history, thetas, critic) for history in histories], axis=1)
    return np.diff(scores, axis=1)


def sparse_rewards(histories: Sequence[History], thetas: ThetaBatch, critic: Critic) -> Array:
    """Zero until the last step, which receives ``g(h_T)``; shape ``(B, T)``."""
    _check_consecutive(histories)
    rewards = np.zeros((histories[0].batch_size, len(histories) - 1))
    rewards[:, -1] = g_score(histories[-1], thetas, critic)
    return rewards


# -- Monte-Carlo bounds --------------------------------------------------------


def spce_values(model: ImplicitModel, rollout: Rollout) -> Array:
    log_lik = history_log_likelihood(model, rollout.thetas.all, rollout.final)
    return contrastive_score(log_lik)


def snmc_values(model: ImplicitModel, rollout: Rollout) -> Array:
    """Like sPCE but the contrastive average leaves the ground truth out."""
    log_lik = history_log_likelihood(model, rollout.thetas.all, rollout.final)
    others = log_lik[:, 1:]
    return log_lik[:, 0] - logsumexp(others, axis=1) + math.log(others.shape[1])


def infonce_values(critic: Critic, rollout: Rollout) -> Array:
    return g_score(rollout.final, rollout.thetas, critic)


def chunk_size_for(num_contrastive: int) -> int:
    return max(1, min(256, _SCORE_BUDGET // (num_contrastive + 1)))


def _map_chunks(
    worker: Callable[[int, np.random.Generator], ChunkT],
    sizes: list[int],
    rng: np.random.Generator,
) -> list[ChunkT]:
    streams = rng.spawn(len(sizes))
    threads = get_settings().threads
    if threads <= 1 or len(sizes) == 1:
        return [worker(size, stream) for size, stream in zip(sizes, streams, strict=True)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, sizes, streams))


def _chunk_sizes(total: int, chunk: int) -> list[int]:
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def estimate_bounds(
    model: ImplicitModel,
    policy: DesignPolicy,
    kinds: Sequence[BoundKind | str],
    num_contrastive: int,
    num_rollouts: int,
    rng: np.random.Generator,
    critic: Critic | None = None,
) -> dict[BoundKind, BoundEstimate]:
    """Estimate several bounds on the same simulated rollouts.

    Rollouts are generated in chunks, each from its own child stream of ``rng``, so results
    depend only on the seed and not on the worker count.
    """
    wanted = [BoundKind(kind) for kind in kinds]
    if num_rollouts < 1 or num_contrastive < 1:
        raise ContractError("need at least one rollout and one contrastive sample")
    if any(kind.needs_likelihood for kind in wanted) and not model.has_likelihood:
        raise UnsupportedCapabilityError(
            f"{model.name} has no likelihood; sPCE and sNMC need one, use InfoNCE"
        )
    if BoundKind.INFONCE in wanted and critic is None:
        raise ContractError("the InfoNCE bound needs a critic")

    def worker(size: int, stream: np.random.Generator) -> dict[BoundKind, Array]:
        rollout = simulate_rollouts(model, policy, size, num_contrastive, stream)
        out: dict[BoundKind, Array] = {}
        for kind in wanted:
            if kind is BoundKind.SPCE:
                out[kind] = spce_values(model, rollout)
            elif kind is BoundKind.SNMC:
                out[kind] = snmc_values(model, rollout)
            else:
                assert critic is not None
                out[kind] = infonce_values(critic, rollout)
        return out

    sizes = _chunk_sizes(num_rollouts, chunk_size_for(num_contrastive))
    chunks = _map_chunks(worker, sizes, rng)
    return {
        kind: BoundEstimate.from_samples(
            kind, np.concatenate([chunk[kind] for chunk in chunks]), num_contrastive
        )
        for kind in wanted
    }


def spce_bound(
    model: ImplicitModel,
    policy: DesignPolicy,
    num_contrastive: int,
    num_rollouts: int,
    rng: np.random.Generator,
) -> BoundEstimate:
    return estimate_bounds(model, policy, [BoundKind.SPCE], num_contrastive, num_rollouts, rng)[
        BoundKind.SPCE
    ]


def snmc_bound(
    model: ImplicitModel,
    policy: DesignPolicy,
    num_contrastive: int,
    num_rollouts: int,
    rng: np.random.Generator,
) -> BoundEstimate:
    return estimate_bounds(model, policy, [BoundKind.SNMC], num_contrastive, num_rollouts, rng)[
        BoundKind.SNMC
    ]


def infonce_bound(
    policy: DesignPolicy,
    critic: Critic,
    model: ImplicitModel,
    num_contrastive: int,
    num_rollouts: int,
    rng: np.random.Generator,
) -> BoundEstimate:
    return estimate_bounds(
        model, policy, [BoundKind.INFONCE], num_contrastive, num_rollouts, rng, critic=critic
    )[BoundKind.INFONCE]


# -- total EIG versus the sum of marginal gains --------------------------------


class _Truncated:
    def __init__(self, policy: DesignPolicy, horizon: int) -> None:
        self._policy = policy
        self.horizon = horizon

    def design(self, history: History, rng: np.random.Generator) -> Array:
        return self._policy.design(history, rng)


@dataclass(frozen=True)
class DecompositionCheck:
    total: BoundEstimate
    marginals: list[BoundEstimate]

    @property
    def lhs(self) -> float:
        return self.total.value

    @property
    def rhs(self) -> float:
        return float(sum(marginal.value for marginal in self.marginals))

    @property
    def diff(self) -> float:
        return self.lhs - self.rhs

    @property
    def std_error(self) -> float:
        variance = self.total.std_error**2 + sum(m.std_error**2 for m in self.marginals)
        return math.sqrt(variance)


def _nested_log_evidence(model: ImplicitModel, rollout: Rollout, length: int) -> Array:
    """``log (1/M) sum_m p(h_length | theta_m)`` over the contrastive (prior) draws."""
    if length == 0:
        return np.zeros(rollout.thetas.batch_size)
    log_lik = history_log_likelihood(model, rollout.thetas.contrastives, rollout.histories[length])
    return logsumexp(log_lik, axis=1) - math.log(log_lik.shape[1])


def information_gain_samples(
    model: ImplicitModel, rollout: Rollout, start: int, stop: int
) -> Array:
    """Nested estimates of what ``y_{start+1:stop}`` says about ``theta0`` given ``h_start``.

    The predictive density is averaged over the rollout's contrastive draws, which are prior
    samples independent of ``theta0``.
    """
    theta0 = rollout.thetas.theta0[:, None, :]
    own = history_log_likelihood(model, theta0, rollout.histories[stop])[:, 0]
    own_before = history_log_likelihood(model, theta0, rollout.histories[start])[:, 0]
    evidence = _nested_log_evidence(model, rollout, stop)
    evidence_before = _nested_log_evidence(model, rollout, start)
    return (own - own_before) - (evidence - evidence_before)


def _gain_estimate(
    model: ImplicitModel,
    policy: DesignPolicy,
    start: int,
    stop: int,
    samples: int,
    inner: int,
    rng: np.random.Generator,
) -> BoundEstimate:
    truncated = _Truncated(policy, stop)

    def worker(size: int, stream: np.random.Generator) -> Array:
        rollout = simulate_rollouts(model, truncated, size, inner, stream)
        return information_gain_samples(model, rollout, start, stop)

    chunks = _map_chunks(worker, _chunk_sizes(samples, chunk_size_for(inner)), rng)
    return BoundEstimate.from_samples(BoundKind.SNMC, np.concatenate(chunks), inner)


def marginal_eig_decomposition_check(
    model: ImplicitModel,
    policy: DesignPolicy,
    horizon: int,
    samples: int,
    rng: np.random.Generator,
    inner_samples: int = 2048,
) -> DecompositionCheck:
    """Nested Monte-Carlo estimates of ``I(theta; y_1:T)`` and of each marginal gain.

    The marginal gain of step ``t`` is ``E[log p(y_t | theta0, h_{t-1}) - log p(y_t | h_{t-1})]``;
    the total and every marginal are estimated on independent rollouts.
    """
    if not model.has_likelihood:
        raise UnsupportedCapabilityError(f"{model.name} has no likelihood for nested estimates")
    if horizon < 1 or samples < 2:
        raise ContractError("decomposition check needs a horizon and at least two samples")
    streams = rng.spawn(horizon + 1)
    total = _gain_estimate(model, policy, 0, horizon, samples, inner_samples, streams[0])
    if horizon == 1:
        return DecompositionCheck(total, [total])
    marginals = [
        _gain_estimate(model, policy, t - 1, t, samples, inner_samples, streams[t])
        for t in range(1, horizon + 1)
    ]
    return DecompositionCheck(total, marginals)


# -- self-normalized posterior ---------------------------------------------------


def _weighted_quantile(values: Array, weights: Array, q: float) -> float:
    order = np.argsort(values)
    cumulative = np.cumsum(weights[order])
    index = int(np.searchsorted(cumulative, q * cumulative[-1]))
    return float(values[order][min(index, values.size - 1)])


@dataclass(frozen=True)
class PosteriorSample:
    """Prior draws reweighted by ``exp U(h, theta)``."""

    thetas: Array
    weights: Array

    def mean(self) -> Array:
        return self.weights @ self.thetas

    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def quantile_box(self, lower: float = 0.25, upper: float = 0.75) -> tuple[Array, Array]:
        """Per-coordinate weighted quantiles ``(lows, highs)``."""
        lows = np.array([_weighted_quantile(col, self.weights, lower) for col in self.thetas.T])
        highs = np.array([_weighted_quantile(col, self.weights, upper) for col in self.thetas.T])
        return lows, highs

    def box_contains(self, point: Array, lower: float = 0.25, upper: float = 0.75) -> bool:
        lows, highs = self.quantile_box(lower, upper)
        point = np.asarray(point, dtype=np.float64)
        return bool(np.all((lows <= point) & (point <= highs)))


def posterior_estimate(
    history: History,
    critic: Critic,
    model: ImplicitModel,
    grid_size: int,
    rng: np.random.Generator,
) -> PosteriorSample:
    """Self-normalized posterior over ``grid_size`` prior draws for the first trajectory."""
    if grid_size < 1:
        raise ContractError(f"grid size must be at least 1, got {grid_size}")
    grid = model.sample_prior(grid_size, rng)
    single = history.select(slice(0, 1))
    scores = critic.score_all(single, grid[None])[0]
    _check_finite(scores, "critic output", single)
    log_weights = scores - logsumexp(scores)
    weights = np.exp(log_weights)
    total = weights.sum()
    if not total > 0.0:
        raise NumericError("posterior weights underflowed", {"grid_size": grid_size})
    return PosteriorSample(grid, weights / total)


def reward_totals_match(rewards: Array, final_scores: Array, tolerance: float = 1e-9) -> bool:
    """Whether per-trajectory reward sums equal the final contrastive scores."""
    return bool(np.all(np.abs(rewards.sum(axis=1) - final_scores) <= tolerance))

