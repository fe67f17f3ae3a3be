"""
Tests for schedules, run configs and the depth-first simulation.
The deterministic two-point walk pins exact values; Gaussian walks check
reproducibility and the coupling identity.
"""
import math

import numpy as np
import pandas as pd
import pytest
from pytest import approx

import util
from algorithms.cumulant import centering
from algorithms.displacement import DeterministicTwoPoint, GaussianBinary, GenericIID, OffspringLaw, StepLaw, nu
from algorithms.simulator import (
    RunConfig, Schedule, batch, centered_r_star, coupled_batch, coupled_rightmost, simulate, to_table,
)
from errors import BudgetExceededError, InvalidModelError, RegimeError
from metrics import coupling_residual_test, ks_two_sample

TWO_POINT = DeterministicTwoPoint(1.0, -1.0)
PAIR = (GaussianBinary(2.0), GaussianBinary(1.0))


class TestSchedule:
    def test_proportional_even(self):
        assert Schedule.proportional((0.5, 0.5), 32).q == (16, 16)

    def test_remainder_goes_last(self):
        assert Schedule.proportional((0.5, 0.5), 33).q == (16, 17)
        assert Schedule.proportional((0.3, 0.3, 0.4), 10).q == (3, 3, 4)

    def test_slow_first(self):
        assert Schedule.slow_first((1.0,), 100).q == (10, 90)
        assert Schedule.slow_first((0.5, 0.5), 20).q == (4, 8, 8)

    def test_sums_to_n(self):
        for n in range(2, 60):
            assert Schedule.proportional((0.2, 0.35, 0.45), n).n == n
            assert Schedule.slow_first((0.7, 0.3), n).n == n

    def test_infeasible_alpha(self):
        with pytest.raises(ValueError):
            Schedule.proportional((0.5, 0.6), 10)

    def test_block_of(self):
        schedule = Schedule((3, 2))
        assert schedule.boundaries == (0, 3, 5)
        assert [schedule.block_of(g) for g in range(1, 6)] == [0, 0, 0, 1, 1]

    def test_empty_first_block(self):
        assert Schedule((0, 5)).block_of(1) == 1


class TestRunConfig:
    def test_model_count(self):
        with pytest.raises(InvalidModelError):
            RunConfig(PAIR, Schedule((4,)), 0.5)

    def test_theta_positive(self):
        with pytest.raises(RegimeError):
            RunConfig(PAIR, Schedule((4, 4)), 0.0)

    def test_assumptions(self):
        with pytest.raises(InvalidModelError):
            RunConfig((DeterministicTwoPoint(1.0, 1.0),), Schedule((4,)), 0.5)
        RunConfig((DeterministicTwoPoint(1.0, 1.0),), Schedule((4,)), 0.5, waive_assumptions=True)

    def test_expected_particles(self):
        config = RunConfig(PAIR, Schedule((3, 2)), 0.5)
        assert config.expected_particles() == 63
        with pytest.raises(BudgetExceededError):
            RunConfig(PAIR, Schedule((15, 15)), 0.5)


class TestSimulate:
    def test_two_point_exact(self):
        config = RunConfig((TWO_POINT, TWO_POINT), Schedule((3, 2)), 0.5)
        result = simulate(config, util.ReplicateSeed(1, 0))
        assert result.leaf_count == 32
        assert result.r_n == 5.0
        assert result.log_w == approx(5 * nu(TWO_POINT, 0.5))
        assert result.first_block_log_w == approx(3 * nu(TWO_POINT, 0.5))
        assert result.m_share == approx(math.exp(1.5 - 3 * nu(TWO_POINT, 0.5)))
        assert math.isnan(result.d_stat)

    def test_root_only(self):
        config = RunConfig((GaussianBinary(1.0),), Schedule((0,)), 0.5)
        result = simulate(config, util.ReplicateSeed(3, 0))
        e = util.stream(3, 0, "leaf").exponential(size=1)[0]
        assert result.r_n == 0.0
        assert result.log_w == approx(0.0, abs=1e-15)
        assert result.leaf_count == 1
        assert result.r_star == approx(-math.log(e) / 0.5)
        assert centered_r_star(result, centering(config.models, config.schedule, 0.5)) == result.r_star

    def test_small_chunks_visit_every_leaf(self):
        config = RunConfig((TWO_POINT,), Schedule((6,)), 0.5, chunk_size=3)
        result = simulate(config, 2)
        assert result.leaf_count == 64
        assert result.log_w == approx(6 * nu(TWO_POINT, 0.5))

    def test_top_scores(self):
        config = RunConfig(PAIR, Schedule((3, 3)), 0.5, topk=8)
        result = simulate(config, util.ReplicateSeed(3, 1))
        assert len(result.top_scores) == 8
        assert list(result.top_scores) == sorted(result.top_scores, reverse=True)
        assert result.top_scores[0] == approx(0.5 * result.r_star)

    def test_fewer_leaves_than_topk(self):
        config = RunConfig((GaussianBinary(1.0),), Schedule((2,)), 0.5, topk=8)
        result = simulate(config, 0)
        assert len(result.top_scores) == 4
        table = to_table([result], 8)
        assert table["top_4"].notna().all()
        assert table["top_5"].isna().all()

    def test_reproducible(self):
        config = RunConfig(PAIR, Schedule((4, 4)), 0.5)
        assert simulate(config, util.ReplicateSeed(5, 2)) == simulate(config, util.ReplicateSeed(5, 2))
        assert simulate(config, util.ReplicateSeed(5, 2)) != simulate(config, util.ReplicateSeed(5, 3))

    def test_first_block_derivative_statistic(self):
        config = RunConfig(PAIR, Schedule((4, 4)), 0.5)
        result = simulate(config, 7)
        assert np.isfinite(result.d_stat)
        assert 0.0 < result.m_share <= 1.0

    def test_dies_out(self):
        dead = GenericIID(offspring_law=OffspringLaw("constant", value=0), step=StepLaw("normal"))
        config = RunConfig((dead,), Schedule((3,)), 0.5, record_first_block=False, waive_assumptions=True)
        with pytest.raises(InvalidModelError):
            simulate(config, 0)


class TestBatch:
    def test_worker_count_does_not_change_results(self):
        config = RunConfig(PAIR, Schedule((4, 4)), 0.5)
        serial = to_table(batch(config, 6, master_seed=11, workers=1), 8)
        parallel = to_table(batch(config, 6, master_seed=11, workers=2), 8)
        pd.testing.assert_frame_equal(serial, parallel)

    def test_first_rep_offsets_replicates(self):
        config = RunConfig(PAIR, Schedule((3, 3)), 0.5)
        tail = batch(config, 2, master_seed=4, first_rep=3)
        assert tail[0] == simulate(config, util.ReplicateSeed(4, 3))
        assert list(to_table(tail, 8, first_rep=3)["rep"]) == [3, 4]


class TestCoupling:
    def test_coupled_rightmost(self):
        stream = util.stream(9, 0, "coupling")
        e = util.stream(9, 0, "coupling").exponential()
        assert coupled_rightmost(2.0, 0.5, stream) == approx((2.0 - math.log(e)) / 0.5)

    def test_coupling_identity(self):
        config = RunConfig((GaussianBinary(1.0),), Schedule((5,)), 0.5)
        direct = batch(config, 400, master_seed=21)
        trees = batch(config, 400, master_seed=21, first_rep=400)
        coupled = coupled_batch(trees, 0.5, 21, first_rep=400)
        assert ks_two_sample([r.r_star for r in direct], coupled, alpha=0.001).passed
        assert coupling_residual_test(direct, alpha=0.001).passed


class TestCentered:
    def test_mismatch(self):
        config = RunConfig(PAIR, Schedule((3, 3)), 0.5)
        result = simulate(config, 0)
        assert centered_r_star(result, centering(PAIR, Schedule((3, 3)), 0.5)) == approx(
            result.r_star - 3 * (nu(PAIR[0], 0.5) + nu(PAIR[1], 0.5)) / 0.5)
        with pytest.raises(RegimeError):
            centered_r_star(result, centering(PAIR, Schedule((4, 4)), 0.5))
        with pytest.raises(RegimeError):
            centered_r_star(result, centering(PAIR, Schedule((3, 3)), 0.4))
