from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from boedrl.errors import ContractError, DimensionError, UnsupportedCapabilityError
from boedrl.simulators import (
    MODEL_REGISTRY,
    CartpoleModel,
    ImplicitModel,
    LinearGaussianModel,
    LocationFindingModel,
    SIRModel,
    build_model,
)


class TestPriors:
    def test_location_finding_prior_is_standard_normal(self, rng: np.random.Generator) -> None:
        draws = LocationFindingModel().sample_prior(100_000, rng)
        assert draws.shape == (100_000, 4)
        standard_error = draws.std(axis=0) / math.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0)) < 4 * standard_error)

    def test_cartpole_prior_stays_in_its_box(self, rng: np.random.Generator) -> None:
        draws = CartpoleModel().sample_prior(10_000, rng)
        assert np.all((draws[:, 0] >= 0.0) & (draws[:, 0] <= 0.2))
        assert np.all((draws[:, 1] >= 0.5) & (draws[:, 1] <= 1.5))

    def test_batched_draws_are_independent_per_trajectory(self, rng: np.random.Generator) -> None:
        draws = SIRModel().sample_prior_batch(3, 5, rng)
        assert draws.shape == (3, 5, 2)
        assert np.all(draws > 0)
        assert len(np.unique(draws[:, :, 0])) == 15


class TestSimulate:
    def test_location_finding_closed_form_intensity(self) -> None:
        model = LocationFindingModel()
        d = 0.7
        theta = np.array([d, 0.0, -d, 0.0])
        expected = model.background + 2 * model.signal_scale / (model.max_signal + d**2)
        np.testing.assert_allclose(model.intensity(theta, np.zeros(2)), expected, rtol=1e-14)

    def test_cartpole_equilibrium_is_preserved(self, rng: np.random.Generator) -> None:
        model = CartpoleModel(initial_angle=0.0)
        theta = np.array([[0.1, 1.0]])
        latent = model.init_latent(theta, rng)
        observation, latent = model.simulate(theta, np.zeros((1, 1)), rng, latent)
        np.testing.assert_array_equal(observation, 0.0)
        np.testing.assert_array_equal(latent, 0.0)

    def test_cartpole_state_carries_over(self, rng: np.random.Generator) -> None:
        model = CartpoleModel(initial_angle=0.0)
        theta = np.array([[0.1, 1.0]])
        latent = model.init_latent(theta, rng)
        _, latent = model.simulate(theta, np.ones((1, 1)), rng, latent)
        observation, _ = model.simulate(theta, np.zeros((1, 1)), rng, latent)
        assert observation[0, 0] > 0.0

    def test_sir_without_infections_stays_at_zero(self, rng: np.random.Generator) -> None:
        model = SIRModel(initial_infected=0, observation_noise=0.0)
        theta = model.sample_prior(4, rng)
        latent = model.init_latent(theta, rng)
        for time in (1.0, 25.0, 90.0):
            observation, latent = model.simulate(theta, np.full((4, 1), time), rng, latent)
            np.testing.assert_array_equal(observation, 0.0)

    def test_sir_counts_are_integers_within_population(self, rng: np.random.Generator) -> None:
        model = SIRModel()
        theta = model.sample_prior(16, rng)
        latent = model.init_latent(theta, rng)
        observation, _ = model.simulate(theta, np.full((16, 1), 20.0), rng, latent)
        assert np.all((observation >= 0) & (observation <= model.population))
        np.testing.assert_array_equal(observation, np.rint(observation))

    def test_sir_compartments_balance_along_the_path(self, rng: np.random.Generator) -> None:
        model = SIRModel(population=200, initial_infected=5)
        path = model.init_latent(model.sample_prior(64, rng), rng)
        susceptible, infected, recovered = path.susceptible, path.infected, path.recovered
        np.testing.assert_allclose(susceptible + infected + recovered, 200.0, rtol=0, atol=1e-9)
        assert np.all(susceptible >= 0.0)
        assert np.all(infected >= 0.0)
        assert np.all(recovered >= -1e-9)
        assert np.all(np.diff(susceptible, axis=-1) <= 0.0)

    def test_sir_measurements_share_one_latent_path(self, rng: np.random.Generator) -> None:
        model = SIRModel(observation_noise=0.0)
        theta = model.sample_prior(8, rng)
        path = model.init_latent(theta, rng)
        times = np.full((8, 1), 20.0)
        first, latent = model.simulate(theta, times, np.random.default_rng(1), path)
        second, latent = model.simulate(theta, times, np.random.default_rng(2), latent)
        assert latent is path
        np.testing.assert_array_equal(first, second)
        expected = np.rint(path.infected[:, model.grid_index(times)[0]])
        np.testing.assert_array_equal(first[:, 0], expected)

    def test_cartpole_energy_decays_without_an_impulse(self) -> None:
        model = CartpoleModel()
        state = np.array([[0.0, 0.5, 0.3, -1.5]] * 2)
        friction = np.array([0.1, 0.2])
        pole_mass = np.array([1.0, 0.7])
        before = model.energy(state, pole_mass)
        after = model.energy(model.advance(state, friction, pole_mass), pole_mass)
        assert np.all(after <= before)

    def test_cartpole_energy_is_nearly_kept_without_friction(self) -> None:
        model = CartpoleModel()
        state = np.array([[0.0, 0.5, 0.3, -1.5]])
        pole_mass = np.array([1.0])
        before = model.energy(state, pole_mass)
        after = model.energy(model.advance(state, np.zeros(1), pole_mass), pole_mass)
        np.testing.assert_allclose(after, before, rtol=0, atol=0.05)

    def test_models_with_memory_need_their_latent(self, rng: np.random.Generator) -> None:
        model = SIRModel()
        with pytest.raises(ContractError):
            model.simulate(model.sample_prior(1, rng), np.ones((1, 1)), rng)

    def test_parameter_dim_mismatch(self, rng: np.random.Generator) -> None:
        with pytest.raises(DimensionError):
            LocationFindingModel().simulate(np.zeros((1, 3)), np.zeros((1, 2)), rng)

    def test_out_of_bounds_designs_are_clamped_and_counted(
        self, rng: np.random.Generator, caplog: pytest.LogCaptureFixture
    ) -> None:
        model = LinearGaussianModel(bound=2.0)
        with caplog.at_level(logging.WARNING, logger="boedrl.simulators.base"):
            clamped = model.clamp_design(np.array([[3.0], [1.0], [-9.0]]))
            model.clamp_design(np.array([[5.0]]))
        np.testing.assert_array_equal(clamped, [[2.0], [1.0], [-2.0]])
        assert model.clamps.count == 3
        assert len([r for r in caplog.records if "clamped" in r.message]) == 1


class TestLikelihood:
    def test_empty_history_is_zero(self) -> None:
        model = LinearGaussianModel()
        result = model.log_likelihood(np.zeros((2, 3, 1)), np.zeros((2, 0, 1)), np.zeros((2, 0, 1)))
        np.testing.assert_array_equal(result, np.zeros((2, 3)))

    def test_linear_gaussian_density(self) -> None:
        model = LinearGaussianModel()
        result = model.log_likelihood(np.zeros((1, 1, 1)), np.ones((1, 1, 1)), np.zeros((1, 1, 1)))
        np.testing.assert_allclose(result, [[-0.5 * math.log(2 * math.pi)]], rtol=1e-14)

    def test_location_finding_is_additive(self, rng: np.random.Generator) -> None:
        model = LocationFindingModel()
        theta = model.sample_prior_batch(2, 3, rng)
        designs = rng.uniform(-4, 4, size=(2, 2, 2))
        observations = rng.normal(size=(2, 2, 1))
        both = model.log_likelihood(theta, designs, observations)
        first = model.log_likelihood(theta, designs[:, :1], observations[:, :1])
        second = model.log_likelihood(theta, designs[:, 1:], observations[:, 1:])
        np.testing.assert_allclose(both, first + second, rtol=1e-12)

    def test_location_finding_draws_follow_the_likelihood(self) -> None:
        model = LocationFindingModel()
        count = 100_000
        theta = np.tile([0.4, -0.3, -1.0, 1.2], (count, 1))
        design = np.tile([0.5, 0.5], (count, 1))
        draws, _ = model.simulate(theta, design, np.random.default_rng(4))
        expected_mean = math.log(model.intensity(theta[0], design[0]))
        standard_error = model.noise / math.sqrt(count)
        assert abs(draws.mean() - expected_mean) < 4 * standard_error
        assert draws.std() == pytest.approx(model.noise, rel=0.02)

        log_density = model.log_likelihood(theta[:, None], design[:, None], draws[:, None])
        # the average log density of its own draws is the negative Gaussian entropy
        entropy = 0.5 * math.log(2 * math.pi * math.e * model.noise**2)
        assert abs(log_density.mean() + entropy) < 4 * log_density.std() / math.sqrt(count)

    def test_location_finding_needs_observation_noise(self) -> None:
        with pytest.raises(ValueError, match="noise"):
            LocationFindingModel(noise=0.0)

    @pytest.mark.parametrize("model", [SIRModel(), CartpoleModel()], ids=["sir", "cartpole"])
    def test_implicit_models_have_no_likelihood(self, model: ImplicitModel) -> None:
        assert not model.has_likelihood
        with pytest.raises(UnsupportedCapabilityError):
            model.log_likelihood(np.zeros((1, 1, 2)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)))


class TestLinearGaussian:
    @pytest.mark.parametrize(
        ("design", "expected"), [(0.0, 0.0), (1.0, 0.3466), (3.0, 1.1513)]
    )
    def test_analytic_eig(self, design: float, expected: float) -> None:
        assert LinearGaussianModel().analytic_eig(design) == pytest.approx(expected, abs=1e-4)

    def test_posterior_after_one_observation(self) -> None:
        model = LinearGaussianModel()
        mean, variance = model.posterior(np.array([[[2.0]]]), np.array([[[3.0]]]))
        # precision 1 + 4 = 5, mean 2 * 3 / 5
        np.testing.assert_allclose(mean, [1.2])
        np.testing.assert_allclose(variance, [0.2])


class TestRegistry:
    def test_every_model_builds_with_defaults(self) -> None:
        for name in MODEL_REGISTRY:
            assert build_model(name).name == name

    def test_parameters_are_forwarded(self) -> None:
        model = build_model("location_finding", space_dim=5)
        assert isinstance(model, LocationFindingModel)
        assert model.design_dim == 5
        assert model.parameter_dim == 10

    def test_unknown_model(self) -> None:
        with pytest.raises(ValueError, match="Unknown model"):
            build_model("pendulum")
