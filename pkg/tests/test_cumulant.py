import math

import pytest
from pytest import approx

from algorithms.cumulant import (
    SQRT_2LOG2, centering, centering_target, fz_constants, regime, sigma1_sq, tangency_gap, theta_star,
)
from algorithms.displacement import DeterministicTwoPoint, GaussianBinary, GenericIID, OffspringLaw, StepLaw
from algorithms.simulator import Schedule
from errors import InvalidModelError, RegimeError

LOG2 = math.log(2.0)


class TestThetaStar:
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_gaussian_closed_form(self, sigma):
        tilt = theta_star(GaussianBinary(sigma))
        assert abs(tilt.value - SQRT_2LOG2 / sigma) < 1e-8
        assert tilt.bracket[0] <= tilt.value <= tilt.bracket[1]
        assert tilt.residual < 1e-8

    def test_two_point_has_no_tangent(self):
        tilt = theta_star(DeterministicTwoPoint(1.0, -1.0))
        assert tilt.infinite
        assert tilt.certificate <= 0
        assert tilt.below(1e6)

    def test_generic_normal_step(self):
        model = GenericIID(offspring_law=OffspringLaw("constant", value=3), step=StepLaw("normal", sd=1.0))
        assert theta_star(model).value == approx(math.sqrt(2.0 * math.log(3.0)), abs=1e-8)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 4.0])
    def test_root_certificate(self, sigma):
        model = GaussianBinary(sigma)
        t, tol = theta_star(model).value, 1e-10
        assert tangency_gap(model, t - tol) * tangency_gap(model, t + tol) <= 0
        assert abs(tangency_gap(model, t)) < 10 * tol

    def test_scales_inversely_with_sigma(self):
        assert 4.0 * theta_star(GaussianBinary(4.0)).value == approx(theta_star(GaussianBinary(1.0)).value, abs=1e-8)

    def test_requires_a2(self):
        with pytest.raises(InvalidModelError):
            theta_star(DeterministicTwoPoint(1.0, 1.0))

    def test_gap_sign(self):
        model = GaussianBinary(1.0)
        assert tangency_gap(model, 0.0) == approx(-LOG2)
        assert tangency_gap(model, 0.5) < 0 < tangency_gap(model, 2.0)


class TestRegime:
    def test_classification(self):
        models = (GaussianBinary(2.0), GaussianBinary(1.0))
        theta1 = theta_star(models[0]).value
        assert regime(models, 0.5) == "subcritical"
        assert regime(models, theta1) == "critical"
        assert regime(models, 1.0) == "above-boundary"

    def test_later_block_below_first(self):
        # the second block's tilt is below the first one's, so θ_(1) is not critical
        models = (GaussianBinary(1.0), GaussianBinary(2.0))
        assert regime(models, theta_star(models[0]).value) == "above-boundary"


class TestCentering:
    def test_subcritical_terms(self):
        models = (GaussianBinary(2.0), GaussianBinary(1.0))
        spec = centering(models, Schedule((8, 8)), 0.5)
        assert spec.terms == approx((8 * (LOG2 + 0.5) / 0.5, 8 * (LOG2 + 0.125) / 0.5))
        assert spec.total == approx(sum(spec.terms))
        assert spec.n == 16
        assert not spec.critical

    def test_additive_over_blocks(self):
        models = (GaussianBinary(2.0), GaussianBinary(1.0), GaussianBinary(1.5))
        joint = centering(models, Schedule((5, 3, 4)), 0.4)
        parts = [centering((m,), Schedule((q,)), 0.4).total for m, q in zip(models, (5, 3, 4))]
        assert joint.terms == tuple(parts)
        assert joint.total == sum(parts)

    def test_root_only(self):
        assert centering((GaussianBinary(1.0),), Schedule((0,)), 0.5).total == 0.0

    def test_critical_log_correction(self):
        models = (GaussianBinary(2.0), GaussianBinary(1.0))
        theta1 = theta_star(models[0]).value
        spec = centering(models, Schedule((10, 10)), theta1, critical=True)
        assert spec.log_correction == approx(-math.log(10) / (2 * theta1))
        assert spec.total == approx(sum(spec.terms) + spec.log_correction)

    def test_regime_mismatch(self):
        models = (GaussianBinary(2.0), GaussianBinary(1.0))
        with pytest.raises(RegimeError):
            centering(models, Schedule((8, 8)), 0.5, critical=True)
        with pytest.raises(RegimeError):
            centering(models, Schedule((8, 8)), theta_star(models[0]).value)

    def test_block_count_mismatch(self):
        with pytest.raises(RegimeError):
            centering((GaussianBinary(1.0),), Schedule((4, 4)), 0.5)

    def test_lln_target(self):
        models = (GaussianBinary(2.0), GaussianBinary(1.0))
        assert centering_target(models, (0.5, 0.5), 0.5) == approx(2.0112940, abs=1e-6)


class TestSigma1Sq:
    def test_gaussian_exact(self):
        for sigma in (0.5, 1.0, 2.0):
            model = GaussianBinary(sigma)
            estimate = sigma1_sq(model, theta_star(model).value)
            assert estimate.value == approx(2 * LOG2)
            assert estimate.stderr == 0.0

    def test_gaussian_monte_carlo(self):
        model = GaussianBinary(1.0)
        estimate = sigma1_sq(model, theta_star(model).value, method="monte_carlo")
        assert estimate.value == approx(2 * LOG2, rel=0.03)
        assert estimate.stderr > 0

    def test_generic_normal_exact(self):
        model = GenericIID(offspring_law=OffspringLaw("constant", value=2), step=StepLaw("normal", sd=1.0))
        assert sigma1_sq(model, theta_star(model).value).value == approx(2 * LOG2)

    def test_budget_too_small(self):
        model = GaussianBinary(1.0)
        with pytest.raises(ValueError):
            sigma1_sq(model, theta_star(model).value, mc_budget=100, method="monte_carlo")

    def test_away_from_critical_warns(self, caplog):
        sigma1_sq(GaussianBinary(1.0), 0.3)
        assert "away from the critical tilt" in caplog.text


class TestFzConstants:
    def test_reference_decimals(self):
        c = fz_constants(2.0, 1.0)
        assert c.lpm_linear == approx(1.9132913, abs=1e-6)
        assert c.lpm_log == approx(0.8493218, abs=1e-6)
        assert c.fz_linear == approx(1.7661151, abs=1e-6)
        assert c.fz_log == approx(3.8219481, abs=1e-6)

    def test_offset_matches_generic_centering(self):
        models = (GaussianBinary(2.0), GaussianBinary(1.0))
        c = fz_constants(2.0, 1.0)
        theta1 = theta_star(models[0]).value
        for n in (8, 16, 40):
            spec = centering(models, Schedule((n // 2, n // 2)), theta1, critical=True)
            assert spec.total == approx(n * c.lpm_linear - math.log(n) * c.lpm_log + c.offset, abs=1e-7)

    @pytest.mark.parametrize("sigmas", [(1.0, 1.0), (1.0, 2.0), (1.0, 0.0)])
    def test_ordering(self, sigmas):
        with pytest.raises(RegimeError):
            fz_constants(*sigmas)
