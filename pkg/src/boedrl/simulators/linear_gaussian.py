from __future__ import annotations

from typing import ClassVar

import numpy as np
from scipy.stats import norm

from boedrl.nn.tensor import Array

from .base import Latent, LikelihoodModel


class LinearGaussianModel(LikelihoodModel):
    """``y = theta * xi + eps`` with Gaussian prior and noise; everything is closed form."""

    name: ClassVar[str] = "linear_gaussian"
    conditionally_independent: ClassVar[bool] = True

    def __init__(
        self, prior_variance: float = 1.0, noise_variance: float = 1.0, bound: float = 5.0
    ) -> None:
        if prior_variance <= 0 or noise_variance <= 0:
            raise ValueError("prior_variance and noise_variance must be positive")
        super().__init__(np.array([-bound]), np.array([bound]))
        self.prior_variance = prior_variance
        self.noise_variance = noise_variance

    @property
    def observation_dim(self) -> int:
        return 1

    @property
    def parameter_dim(self) -> int:
        return 1

    def _sample_prior(self, shape: tuple[int, ...], rng: np.random.Generator) -> Array:
        return np.sqrt(self.prior_variance) * rng.standard_normal((*shape, 1))

    def _simulate(
        self, theta: Array, design: Array, rng: np.random.Generator, latent: Latent
    ) -> tuple[Array, Latent]:
        noise = np.sqrt(self.noise_variance) * rng.standard_normal(theta.shape)
        return theta * design + noise, latent

    def _step_log_likelihood(self, theta: Array, design: Array, observation: Array) -> Array:
        mean = theta[..., 0] * design[:, :1]
        return norm.logpdf(observation[:, :1], loc=mean, scale=np.sqrt(self.noise_variance))

    def analytic_eig(self, design: float) -> float:
        """Mutual information between theta and one observation at ``design``."""
        return 0.5 * float(np.log1p(design**2 * self.prior_variance / self.noise_variance))

    def posterior(self, designs: Array, observations: Array) -> tuple[Array, Array]:
        """Conjugate posterior ``(mean, variance)`` per trajectory of ``(B, t, 1)`` histories."""
        xi = designs[..., 0]
        y = observations[..., 0]
        precision = 1.0 / self.prior_variance + (xi**2).sum(axis=-1) / self.noise_variance
        mean = (xi * y).sum(axis=-1) / self.noise_variance / precision
        return mean, 1.0 / precision
