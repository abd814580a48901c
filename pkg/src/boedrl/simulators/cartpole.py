from __future__ import annotations

from typing import ClassVar

import numpy as np

from boedrl.nn.tensor import Array

from .base import ImplicitModel, Latent

# state layout: cart position, cart velocity, pole angle, pole angular velocity
X, X_DOT, ANGLE, ANGLE_DOT = range(4)


class CartpoleModel(ImplicitModel):
    """Cart with a hinged pole; designs are horizontal impulses, parameters friction and pole mass.

    The pole is a uniform rod of half-length ``pole_length`` with viscous joint friction. Each
    experiment applies the impulse instantaneously, integrates ``substeps`` semi-implicit Euler
    steps over ``step_duration`` seconds and reports cart position, cart velocity and pole angle.
    The physical state carries over between experiments of one trajectory.
    """

    name: ClassVar[str] = "cartpole"
    conditionally_independent: ClassVar[bool] = False

    def __init__(
        self,
        cart_mass: float = 1.0,
        pole_length: float = 0.5,
        gravity: float = 9.81,
        step_duration: float = 1.0 / 6.0,
        substeps: int = 60,
        impulse_bound: float = 3.0,
        friction_range: tuple[float, float] = (0.0, 0.2),
        mass_range: tuple[float, float] = (0.5, 1.5),
        initial_angle: float = 0.1,
        observation_noise: float = 0.0,
    ) -> None:
        if cart_mass <= 0 or pole_length <= 0 or substeps < 1 or step_duration <= 0:
            raise ValueError("cart_mass, pole_length, substeps and step_duration must be positive")
        if friction_range[0] < 0 or mass_range[0] <= 0:
            raise ValueError("friction must be non-negative and pole mass positive")
        super().__init__(np.array([-impulse_bound]), np.array([impulse_bound]))
        self.cart_mass = cart_mass
        self.pole_length = pole_length
        self.gravity = gravity
        self.step_duration = step_duration
        self.substeps = substeps
        self.friction_range = friction_range
        self.mass_range = mass_range
        self.initial_angle = initial_angle
        self.observation_noise = observation_noise

    @property
    def observation_dim(self) -> int:
        return 3

    @property
    def parameter_dim(self) -> int:
        return 2

    @property
    def parameter_names(self) -> list[str]:
        return ["friction", "pole_mass"]

    def _sample_prior(self, shape: tuple[int, ...], rng: np.random.Generator) -> Array:
        friction = rng.uniform(*self.friction_range, size=shape)
        mass = rng.uniform(*self.mass_range, size=shape)
        return np.stack([friction, mass], axis=-1)

    def init_latent(self, theta: Array, rng: np.random.Generator) -> Array:
        state = np.zeros((*np.shape(theta)[:-1], 4))
        state[..., ANGLE] = self.initial_angle
        return state

    def _mass_matrix(self, pole_mass: Array, angle: Array) -> tuple[Array, Array, Array]:
        total = self.cart_mass + pole_mass
        coupling = pole_mass * self.pole_length * np.cos(angle)
        inertia = (4.0 / 3.0) * pole_mass * self.pole_length**2
        return total, coupling, inertia

    def _solve(
        self, pole_mass: Array, angle: Array, rhs_x: Array, rhs_angle: Array
    ) -> tuple[Array, Array]:
        a, b, d = self._mass_matrix(pole_mass, angle)
        det = a * d - b * b
        return (d * rhs_x - b * rhs_angle) / det, (a * rhs_angle - b * rhs_x) / det

    def apply_impulse(self, state: Array, pole_mass: Array, impulse: Array) -> Array:
        dv, dw = self._solve(pole_mass, state[..., ANGLE], impulse, np.zeros_like(impulse))
        state = state.copy()
        state[..., X_DOT] += dv
        state[..., ANGLE_DOT] += dw
        return state

    def advance(self, state: Array, friction: Array, pole_mass: Array) -> Array:
        """Integrate one experiment interval without external force."""
        state = state.copy()
        dt = self.step_duration / self.substeps
        ml = pole_mass * self.pole_length
        for _ in range(self.substeps):
            angle, angle_dot = state[..., ANGLE], state[..., ANGLE_DOT]
            rhs_x = ml * angle_dot**2 * np.sin(angle)
            rhs_angle = ml * self.gravity * np.sin(angle) - friction * angle_dot
            x_acc, angle_acc = self._solve(pole_mass, angle, rhs_x, rhs_angle)
            state[..., X_DOT] += dt * x_acc
            state[..., ANGLE_DOT] += dt * angle_acc
            state[..., X] += dt * state[..., X_DOT]
            state[..., ANGLE] += dt * state[..., ANGLE_DOT]
        return state

    def energy(self, state: Array, pole_mass: Array) -> Array:
        total, coupling, inertia = self._mass_matrix(pole_mass, state[..., ANGLE])
        v, w = state[..., X_DOT], state[..., ANGLE_DOT]
        kinetic = 0.5 * total * v**2 + coupling * v * w + 0.5 * inertia * w**2
        potential = pole_mass * self.gravity * self.pole_length * np.cos(state[..., ANGLE])
        return kinetic + potential

    def _simulate(
        self, theta: Array, design: Array, rng: np.random.Generator, latent: Latent
    ) -> tuple[Array, Latent]:
        friction, pole_mass = theta[..., 0], theta[..., 1]
        state = self.apply_impulse(latent, pole_mass, design[..., 0])
        state = self.advance(state, friction, pole_mass)
        observation = state[..., [X, X_DOT, ANGLE]]
        if self.observation_noise > 0:
            observation = observation + self.observation_noise * rng.standard_normal(
                observation.shape
            )
        return observation, state
