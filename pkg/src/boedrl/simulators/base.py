from __future__ import annotations

import abc
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np

from boedrl.errors import ContractError, DimensionError, UnsupportedCapabilityError
from boedrl.nn.tensor import Array

logger = logging.getLogger(__name__)

Latent = Any


@dataclass
class ClampCounter:
    """Counts design rows pulled back inside the design box."""

    count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, rows: int, model_name: str) -> None:
        with self._lock:
            first = self.count == 0
            self.count += rows
        if first:
            logger.warning("%s: clamped out-of-bounds designs into the design box", model_name)


class ImplicitModel(abc.ABC):
    """Black-box simulator ``y ~ p(y | theta, design, history)``.

    Arrays are batched along the first axis: ``theta`` is ``(B, parameter_dim)``, ``design``
    is ``(B, design_dim)`` and observations come back as ``(B, observation_dim)``. Models whose
    experiments are not conditionally independent carry their per-trajectory hidden state in a
    ``latent`` value created by :meth:`init_latent` and threaded through :meth:`simulate`.
    """

    name: ClassVar[str]
    conditionally_independent: ClassVar[bool] = True

    def __init__(self, design_low: Array, design_high: Array) -> None:
        self.design_low = np.asarray(design_low, dtype=np.float64)
        self.design_high = np.asarray(design_high, dtype=np.float64)
        if not (np.all(np.isfinite(self.design_low)) and np.all(np.isfinite(self.design_high))):
            raise ValueError(f"{self.name}: design bounds must be finite")
        if np.any(self.design_low >= self.design_high):
            raise ValueError(f"{self.name}: design lower bound must be below the upper bound")
        self.clamps = ClampCounter()

    # -- shape metadata -----------------------------------------------------

    @property
    def design_dim(self) -> int:
        return int(self.design_low.size)

    @property
    @abc.abstractmethod
    def observation_dim(self) -> int: ...

    @property
    @abc.abstractmethod
    def parameter_dim(self) -> int: ...

    @property
    def parameter_names(self) -> list[str]:
        return [f"theta_{i}" for i in range(self.parameter_dim)]

    @property
    def design_scale(self) -> Array:
        """Per-dimension divisor mapping designs to roughly unit scale for network inputs."""
        return np.maximum(np.abs(self.design_low), np.abs(self.design_high))

    @property
    def observation_scale(self) -> Array:
        return np.ones(self.observation_dim)

    @property
    def has_likelihood(self) -> bool:
        return False

    # -- sampling -------------------------------------------------------------

    @abc.abstractmethod
    def _sample_prior(self, shape: tuple[int, ...], rng: np.random.Generator) -> Array: ...

    def sample_prior(self, count: int, rng: np.random.Generator) -> Array:
        """``count`` i.i.d. prior draws, shape ``(count, parameter_dim)``."""
        return self._sample_prior((count,), rng)

    def sample_prior_batch(self, batch: int, count: int, rng: np.random.Generator) -> Array:
        """Independent prior draws of shape ``(batch, count, parameter_dim)``."""
        return self._sample_prior((batch, count), rng)

    def init_latent(self, theta: Array, rng: np.random.Generator) -> Latent:
        """Per-trajectory hidden state for a batch of ground-truth parameters."""
        return None

    def clamp_design(self, design: Array) -> Array:
        design = np.asarray(design, dtype=np.float64)
        if design.shape[-1] != self.design_dim:
            raise DimensionError(
                f"{self.name}: expected design dim {self.design_dim}, got {design.shape}"
            )
        clamped = np.clip(design, self.design_low, self.design_high)
        moved = np.any(clamped != design, axis=-1)
        if np.any(moved):
            self.clamps.add(int(np.count_nonzero(moved)), self.name)
        return clamped

    def simulate(
        self,
        theta: Array,
        design: Array,
        rng: np.random.Generator,
        latent: Latent = None,
    ) -> tuple[Array, Latent]:
        """Draw one observation per trajectory; returns ``(observations, next_latent)``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1] != self.parameter_dim:
            raise DimensionError(
                f"{self.name}: expected parameter dim {self.parameter_dim}, got {theta.shape}"
            )
        design = self.clamp_design(design)
        if theta.shape[:-1] != design.shape[:-1]:
            raise DimensionError(
                f"{self.name}: theta batch {theta.shape} does not match design batch {design.shape}"
            )
        if latent is None and not self.conditionally_independent:
            raise ContractError(f"{self.name}: simulate needs the trajectory latent state")
        return self._simulate(theta, design, rng, latent)

    @abc.abstractmethod
    def _simulate(
        self, theta: Array, design: Array, rng: np.random.Generator, latent: Latent
    ) -> tuple[Array, Latent]: ...

    # -- likelihood -----------------------------------------------------------

    def log_likelihood(self, theta: Array, designs: Array, observations: Array) -> Array:
        """``sum_t log p(y_t | theta, design_t)`` for every parameter row.

        ``theta`` is ``(B, M, parameter_dim)``, ``designs`` ``(B, t, design_dim)`` and
        ``observations`` ``(B, t, observation_dim)``; the result is ``(B, M)``.
        """
        raise UnsupportedCapabilityError(f"{self.name} has no analytic likelihood")


class LikelihoodModel(ImplicitModel):
    """A simulator whose per-experiment observation density is available in closed form."""

    @property
    def has_likelihood(self) -> bool:
        return True

    @abc.abstractmethod
    def _step_log_likelihood(self, theta: Array, design: Array, observation: Array) -> Array:
        """``theta (B, M, p)``, ``design (B, d)``, ``observation (B, o)`` -> ``(B, M)``."""

    def log_likelihood(self, theta: Array, designs: Array, observations: Array) -> Array:
        theta = np.asarray(theta, dtype=np.float64)
        total = np.zeros(theta.shape[:-1])
        for t in range(designs.shape[1]):
            total += self._step_log_likelihood(theta, designs[:, t], observations[:, t])
        return total
