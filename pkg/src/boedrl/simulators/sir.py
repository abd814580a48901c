from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from boedrl.nn.tensor import Array

from .base import ImplicitModel, Latent


@dataclass
class EpidemicPath:
    """Susceptible/infected counts on the time grid for a batch of trajectories."""

    susceptible: Array
    infected: Array
    population: float

    @property
    def recovered(self) -> Array:
        return self.population - self.susceptible - self.infected


class SIRModel(ImplicitModel):
    """Stochastic SIR epidemic observed through noisy infected counts at chosen times.

    One latent path per trajectory is drawn with Euler-Maruyama on the diffusion
    approximation of the SIR jump process; every measurement in the trajectory reads from
    that shared path, so experiments are not conditionally independent.
    """

    name: ClassVar[str] = "sir"
    conditionally_independent: ClassVar[bool] = False

    def __init__(
        self,
        population: int = 500,
        initial_infected: int = 2,
        dt: float = 0.1,
        horizon: float = 100.0,
        beta_log_mean: float = float(np.log(0.5)),
        beta_log_std: float = 0.5,
        gamma_log_mean: float = float(np.log(0.1)),
        gamma_log_std: float = 0.5,
        observation_noise: float = 1.0,
    ) -> None:
        if population < 1 or not 0 <= initial_infected <= population:
            raise ValueError("need population >= 1 and 0 <= initial_infected <= population")
        if dt <= 0 or horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if observation_noise < 0:
            raise ValueError("observation_noise must be non-negative")
        super().__init__(np.array([0.0]), np.array([horizon]))
        self.population = float(population)
        self.initial_infected = float(initial_infected)
        self.dt = dt
        self.horizon = horizon
        self.num_points = int(round(horizon / dt)) + 1
        self.beta_log_mean = beta_log_mean
        self.beta_log_std = beta_log_std
        self.gamma_log_mean = gamma_log_mean
        self.gamma_log_std = gamma_log_std
        self.observation_noise = observation_noise

    @property
    def observation_dim(self) -> int:
        return 1

    @property
    def parameter_dim(self) -> int:
        return 2

    @property
    def parameter_names(self) -> list[str]:
        return ["beta", "gamma"]

    @property
    def observation_scale(self) -> Array:
        return np.array([self.population / 10.0])

    def _sample_prior(self, shape: tuple[int, ...], rng: np.random.Generator) -> Array:
        beta = rng.lognormal(self.beta_log_mean, self.beta_log_std, size=shape)
        gamma = rng.lognormal(self.gamma_log_mean, self.gamma_log_std, size=shape)
        return np.stack([beta, gamma], axis=-1)

    def init_latent(self, theta: Array, rng: np.random.Generator) -> EpidemicPath:
        theta = np.asarray(theta, dtype=np.float64)
        beta, gamma = theta[..., 0], theta[..., 1]
        batch = theta.shape[:-1]
        n = self.population
        s = np.full(batch, n - self.initial_infected)
        i = np.full(batch, self.initial_infected)
        susceptible = np.empty((*batch, self.num_points))
        infected = np.empty((*batch, self.num_points))
        susceptible[..., 0], infected[..., 0] = s, i
        for k in range(1, self.num_points):
            infection_rate = beta * s * i / n
            recovery_rate = gamma * i
            new_infections = infection_rate * self.dt + np.sqrt(
                infection_rate * self.dt
            ) * rng.standard_normal(batch)
            new_recoveries = recovery_rate * self.dt + np.sqrt(
                recovery_rate * self.dt
            ) * rng.standard_normal(batch)
            new_infections = np.clip(new_infections, 0.0, s)
            new_recoveries = np.clip(new_recoveries, 0.0, i)
            s = s - new_infections
            i = i + new_infections - new_recoveries
            susceptible[..., k], infected[..., k] = s, i
        return EpidemicPath(susceptible, infected, n)

    def grid_index(self, design: Array) -> Array:
        return np.clip(np.rint(design[..., 0] / self.dt), 0, self.num_points - 1).astype(int)

    def _simulate(
        self, theta: Array, design: Array, rng: np.random.Generator, latent: Latent
    ) -> tuple[Array, Latent]:
        path: EpidemicPath = latent
        index = self.grid_index(design)
        latent_count = np.take_along_axis(path.infected, index[..., None], axis=-1)
        noisy = latent_count + self.observation_noise * rng.standard_normal(latent_count.shape)
        return np.clip(np.rint(noisy), 0.0, self.population), latent
