from __future__ import annotations

from typing import ClassVar

import numpy as np
from scipy.stats import norm

from boedrl.nn.tensor import Array

from .base import LikelihoodModel, Latent


class LocationFindingModel(LikelihoodModel):
    """Hidden point sources whose summed signal decays with squared distance.

    ``mu(theta, xi) = b + sum_k alpha / (m + |theta_k - xi|^2)`` and the observation is the
    log-signal ``log mu + sigma * eps``. The parameter vector is the flattened
    ``(num_sources, space_dim)`` source matrix with a standard normal prior.
    """

    name: ClassVar[str] = "location_finding"
    conditionally_independent: ClassVar[bool] = True

    def __init__(
        self,
        num_sources: int = 2,
        space_dim: int = 2,
        background: float = 0.1,
        max_signal: float = 1e-4,
        signal_scale: float = 1.0,
        noise: float = 0.5,
        bound: float = 4.0,
    ) -> None:
        if num_sources < 1 or space_dim < 1:
            raise ValueError("num_sources and space_dim must be positive")
        if background <= 0 or max_signal <= 0 or signal_scale < 0:
            raise ValueError("background and max_signal must be positive, signal_scale >= 0")
        if noise <= 0:
            raise ValueError("noise must be positive")
        super().__init__(np.full(space_dim, -bound), np.full(space_dim, bound))
        self.num_sources = num_sources
        self.space_dim = space_dim
        self.background = background
        self.max_signal = max_signal
        self.signal_scale = signal_scale
        self.noise = noise

    @property
    def observation_dim(self) -> int:
        return 1

    @property
    def parameter_dim(self) -> int:
        return self.num_sources * self.space_dim

    @property
    def parameter_names(self) -> list[str]:
        return [
            f"source{k}_x{n}" for k in range(self.num_sources) for n in range(self.space_dim)
        ]

    def _sample_prior(self, shape: tuple[int, ...], rng: np.random.Generator) -> Array:
        return rng.standard_normal((*shape, self.parameter_dim))

    def intensity(self, theta: Array, design: Array) -> Array:
        """Total signal for ``theta (..., p)`` at a design broadcastable to ``(..., N)``."""
        sources = theta.reshape(*theta.shape[:-1], self.num_sources, self.space_dim)
        sq_dist = ((sources - design[..., None, :]) ** 2).sum(axis=-1)
        return self.background + (self.signal_scale / (self.max_signal + sq_dist)).sum(axis=-1)

    def _simulate(
        self, theta: Array, design: Array, rng: np.random.Generator, latent: Latent
    ) -> tuple[Array, Latent]:
        mean = np.log(self.intensity(theta, design))
        noise = rng.standard_normal(mean.shape)
        return (mean + self.noise * noise)[..., None], latent

    def _step_log_likelihood(self, theta: Array, design: Array, observation: Array) -> Array:
        mean = np.log(self.intensity(theta, design[:, None, :]))
        return norm.logpdf(observation[:, None, 0], loc=mean, scale=self.noise)
