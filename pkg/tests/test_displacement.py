"""
Tests for the block laws: ν(a) in closed form and by Monte Carlo, the
assumption checks and building models from config records.
"""
import math

import numpy as np
import pytest
from pytest import approx

import util
from algorithms.displacement import (
    DeterministicTwoPoint, GaussianBinary, GenericIID, OffspringLaw, StepLaw,
    model_from_spec, nu, nu_derivatives, nu_monte_carlo, sample, validate,
)
from errors import ConfigError, DomainError, InvalidModelError

LOG2 = math.log(2.0)


def _scipy_normal(draws=10 ** 5, seed=3):
    return GenericIID(offspring_law=OffspringLaw("constant", value=2),
                      step=StepLaw("scipy", name="norm", params=(("scale", 1.0),)),
                      draws=draws, seed=seed)


class TestNu:
    def test_gaussian_closed_form(self):
        assert nu(GaussianBinary(2.0), 0.5) == approx(LOG2 + 0.5)
        assert nu(GaussianBinary(1.0), 0.0) == approx(LOG2)

    def test_two_point_closed_form(self):
        model = DeterministicTwoPoint(1.0, -1.0)
        for a in (-1.5, 0.0, 0.3, 2.0):
            assert nu(model, a) == approx(math.log(2.0 * math.cosh(a)))

    def test_negative_argument_is_allowed(self):
        assert nu(GaussianBinary(1.0), -0.7) == approx(nu(GaussianBinary(1.0), 0.7))

    def test_generic_normal_step_matches_gaussian(self):
        model = GenericIID(offspring_law=OffspringLaw("constant", value=2), step=StepLaw("normal", mean=0.0, sd=2.0))
        assert nu(model, 0.5) == approx(nu(GaussianBinary(2.0), 0.5))

    def test_generic_adds_log_mean_offspring(self):
        model = GenericIID(offspring_law=OffspringLaw("shifted_poisson", rate=2.0),
                           step=StepLaw("constant", value=1.0))
        assert nu(model, 0.25) == approx(math.log(3.0) + 0.25)

    def test_monte_carlo_at_zero_is_log_mean_offspring(self):
        assert nu_monte_carlo(_scipy_normal(), 0.0).value == approx(LOG2)

    def test_monte_carlo_within_standard_errors(self):
        estimate = nu_monte_carlo(_scipy_normal(), 0.5)
        assert abs(estimate.value - (LOG2 + 0.125)) < 5 * estimate.stderr + 1e-3
        assert estimate.stderr > 0

    def test_monte_carlo_is_deterministic(self):
        model = _scipy_normal()
        assert nu(model, 0.4) == nu(model, 0.4)
        assert nu(model, 0.4) == nu(_scipy_normal(), 0.4)

    def test_derivatives_closed_form(self):
        value, slope, curvature = nu_derivatives(GaussianBinary(2.0), 0.5)
        assert value == approx(LOG2 + 0.5)
        assert slope == approx(2.0)
        assert curvature == approx(4.0)

    def test_derivatives_by_differences(self):
        _, slope, _ = nu_derivatives(_scipy_normal(), 0.5)
        assert slope == approx(0.5, abs=0.05)

    @pytest.mark.parametrize("model", [GaussianBinary(1.0), GaussianBinary(2.0), DeterministicTwoPoint(1.0, -1.0)])
    def test_slope_matches_central_difference(self, model):
        h = 1e-4
        for a in (-0.5, 0.5, 1.0, 2.0):
            difference = (nu(model, a + h) - nu(model, a - h)) / (2 * h)
            assert abs(difference - nu_derivatives(model, a)[1]) < 1e-6

    @pytest.mark.parametrize("model", [GaussianBinary(0.5), DeterministicTwoPoint(1.0, -1.0),
                                       DeterministicTwoPoint(0.5, -2.0)])
    def test_strictly_convex(self, model):
        for a in np.linspace(-3.0, 3.0, 25):
            assert nu_derivatives(model, a)[2] > 0

    def test_outside_domain(self):
        model = GenericIID(offspring_law=OffspringLaw("constant", value=2), step=StepLaw("normal"),
                           domain_bound=1.0)
        with pytest.raises(DomainError):
            nu(model, -2.0)
        with pytest.raises(DomainError):
            nu(GaussianBinary(1.0), float("nan"))


class TestSample:
    def test_gaussian_has_two_children(self):
        assert len(sample(GaussianBinary(1.0), util.stream(1))) == 2

    def test_gaussian_child_moments(self):
        rng = util.stream(12, 0, "tree")
        children = np.array([sample(GaussianBinary(1.0), rng) for _ in range(10 ** 5)]).ravel()
        assert -0.02 < children.mean() < 0.02
        assert 0.97 < children.var() < 1.03

    def test_two_point_is_deterministic(self):
        assert sample(DeterministicTwoPoint(0.5, -2.0), util.stream(1)) == [0.5, -2.0]

    def test_generation_shapes(self):
        model = GenericIID(offspring_law=OffspringLaw("shifted_poisson", rate=1.5), step=StepLaw("normal"))
        counts, steps = model.sample_generation(util.stream(4), 1000)
        assert counts.shape == (1000,)
        assert counts.min() >= 1
        assert steps.size == counts.sum()

    def test_same_stream_same_draws(self):
        a = sample(GaussianBinary(1.0), util.stream(9, 3, "tree"))
        b = sample(GaussianBinary(1.0), util.stream(9, 3, "tree"))
        c = sample(GaussianBinary(1.0), util.stream(9, 3, "leaf"))
        assert a == b
        assert a != c


class TestValidate:
    def test_gaussian_passes(self):
        report = validate(GaussianBinary(1.0))
        assert report.ok
        assert report.messages == ()

    def test_single_child(self):
        model = GenericIID(offspring_law=OffspringLaw("constant", value=1), step=StepLaw("normal"))
        report = validate(model)
        assert not report.a2_ok
        assert report.a2_clause == "P(N_i=1)<1"

    def test_extinction_possible(self):
        model = GenericIID(offspring_law=OffspringLaw("categorical", values=(0, 2), probs=(0.5, 0.5)),
                           step=StepLaw("normal"))
        assert validate(model).a2_clause == "P(N_i>=1)=1"

    def test_degenerate_displacements(self):
        report = validate(DeterministicTwoPoint(1.0, 1.0))
        assert not report.a2_ok
        assert report.a2_clause == "P(Z_i({a})=N_i)<1"

    def test_non_positive_domain(self):
        model = GenericIID(offspring_law=OffspringLaw("constant", value=2), step=StepLaw("normal"),
                           domain_bound=0.0)
        report = validate(model)
        assert not report.a1_ok
        assert not report.ok

    def test_poisson_moment_is_finite(self):
        model = GenericIID(offspring_law=OffspringLaw("shifted_poisson", rate=1.0), step=StepLaw("normal"))
        assert validate(model, p=1.0).a3_ok


class TestModelFromSpec:
    def test_gaussian(self):
        assert model_from_spec({"kind": "gaussian_binary", "sigma": 2}) == GaussianBinary(2.0)

    def test_generic(self):
        model = model_from_spec({"kind": "generic_iid",
                                 "offspring": {"kind": "categorical", "values": [1, 3], "probs": [0.5, 0.5]},
                                 "step": {"kind": "scipy", "name": "uniform", "params": {"loc": -1, "scale": 2}}})
        assert model.offspring().mean() == approx(2.0)
        assert model.log_mgf(0.1) is None
        assert model_from_spec(model.to_spec()) == model

    def test_unknown_kind(self):
        with pytest.raises(ConfigError) as e:
            model_from_spec({"kind": "levy"}, "models[1]")
        assert e.value.path == "models[1].kind"

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as e:
            model_from_spec({"kind": "gaussian_binary", "sigma": 1.0, "a": 2.0})
        assert e.value.path == "models[0].a"

    def test_missing_key(self):
        with pytest.raises(ConfigError) as e:
            model_from_spec({"kind": "deterministic_two_point", "a": 1.0}, "models[2]")
        assert e.value.path == "models[2].b"

    def test_nested_paths(self):
        record = {"kind": "generic_iid", "offspring": {"kind": "constant", "vale": 2}, "step": {"kind": "normal"}}
        with pytest.raises(ConfigError) as e:
            model_from_spec(record)
        assert e.value.path == "models[0].offspring.vale"

        record = {"kind": "generic_iid", "offspring": {"kind": "constant"}, "step": {"kind": "cauchy"}}
        with pytest.raises(ConfigError) as e:
            model_from_spec(record)
        assert e.value.path == "models[0].step.kind"

    def test_bad_parameter(self):
        with pytest.raises(ConfigError) as e:
            model_from_spec({"kind": "gaussian_binary", "sigma": -1.0}, "models[0]")
        assert e.value.path == "models[0]"

    def test_unknown_scipy_law(self):
        with pytest.raises(InvalidModelError):
            StepLaw("scipy", name="not_a_law")
