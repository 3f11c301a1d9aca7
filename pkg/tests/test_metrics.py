"""Quadrature norms against closed forms, and the log-log rate fit."""
import math

import numpy as np
import pytest

from korobov.corpus import make_poly_bubble, make_sine_product
from korobov.errors import DimensionMismatch, DomainError
from korobov.grid import hierarchize
from korobov.metrics import (Field, QuadratureConfig, QuadratureMode, RateReport, error_split, fit_rate, lp_error,
                             w1p_error)
from korobov.net import zero_network

ZERO = Field(lambda x: np.zeros(len(x)), lambda x: np.zeros((len(x), 1)), 1)
ZERO_2D = Field(lambda x: np.zeros(len(x)), lambda x: np.zeros((len(x), 2)), 2)


class TestNorms:
    def test_bubble_l2(self):
        est = lp_error(make_poly_bubble(1), ZERO, 2.0, QuadratureConfig(QuadratureMode.GRID, 1 << 14))
        assert est.value == pytest.approx(1.0 / math.sqrt(30.0), rel=1e-3)
        assert est.samples == 1 << 14
        assert est.spread < 1e-6

    def test_bubble_w12(self):
        est = w1p_error(make_poly_bubble(1), ZERO, 2.0, QuadratureConfig(QuadratureMode.GRID, 1 << 14))
        assert est.value == pytest.approx(math.sqrt(11.0 / 30.0), rel=1e-3)

    def test_zero_network_is_the_zero_function(self):
        f = make_sine_product(2)
        est = lp_error(f, zero_network(2), 2.0, QuadratureConfig(QuadratureMode.GRID, 256))
        assert est.value == pytest.approx(0.5, rel=1e-3)

    def test_monte_carlo(self):
        est = lp_error(make_poly_bubble(2), ZERO_2D, 2.0, QuadratureConfig(QuadratureMode.MC, 100_000, seed=5))
        assert est.value == pytest.approx(1.0 / 30.0, rel=0.03)
        assert est.spread > 0.0

    @pytest.mark.parametrize('seed', [3, 11])
    def test_monte_carlo_agrees_with_the_grid(self, seed):
        f = make_sine_product(2)
        interp = hierarchize(f, 3, 2, 2)
        grid = lp_error(f, interp, 2.0, QuadratureConfig(QuadratureMode.GRID, 512))
        mc = lp_error(f, interp, 2.0, QuadratureConfig(QuadratureMode.MC, 200_000, seed=seed))
        assert grid.spread < 1e-3 * grid.value
        assert abs(mc.value - grid.value) <= 4.0 * (mc.spread + grid.spread)
        assert w1p_error(f, interp, 2.0, QuadratureConfig(QuadratureMode.GRID, 512)).value > grid.value

    def test_p_must_be_finite(self):
        with pytest.raises(DomainError):
            lp_error(make_poly_bubble(1), ZERO, math.inf)
        with pytest.raises(DomainError):
            lp_error(make_poly_bubble(1), ZERO, 0.5)

    def test_gradient_required_for_sobolev(self):
        with pytest.raises(DomainError):
            w1p_error(make_poly_bubble(1), Field(lambda x: np.zeros(len(x)), None, 1))


class TestErrorSplit:
    def test_chain_of_differences(self):
        f = make_poly_bubble(1)
        q = QuadratureConfig(QuadratureMode.GRID, 1 << 12)
        e0, e1 = error_split([f, ZERO, ZERO], 2.0, q)
        assert e0.value == pytest.approx(1.0 / math.sqrt(30.0), rel=1e-3)
        assert e1.value == 0.0

    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatch):
            error_split([make_poly_bubble(1), make_poly_bubble(2)], 2.0)
        with pytest.raises(DomainError):
            error_split([lambda x: x[:, 0], lambda x: x[:, 0]], 2.0)


class TestQuadratureConfig:
    def test_grid_points(self):
        q = QuadratureConfig(QuadratureMode.GRID, 8)
        pts = q.points(2)
        assert pts.shape == (64, 2)
        assert pts.min() > 0.0 and pts.max() < 1.0
        # shifted midpoints never land on a dyadic node
        assert not np.any(np.isclose((pts * 16) % 1.0, 0.0))

    @pytest.mark.parametrize('bits', range(1, 15))
    def test_grid_points_keep_clear_of_dyadic_breakpoints(self, bits):
        x = QuadratureConfig(QuadratureMode.GRID, 2 ** bits).points(1)[:, 0]
        for level in range(1, 25):
            scaled = x * 2.0 ** level
            assert np.min(np.abs(scaled - np.rint(scaled))) * 2.0 ** -level > 1e-9

    def test_mc_points_follow_the_seed(self):
        a = QuadratureConfig('mc', 100, seed=3).points(3)
        b = QuadratureConfig('mc', 100, seed=3).points(3)
        assert a.shape == (100, 3)
        assert np.array_equal(a, b)

    def test_validation(self):
        with pytest.raises(DomainError):
            QuadratureConfig(QuadratureMode.GRID, 1)
        with pytest.raises(DomainError):
            QuadratureConfig(QuadratureMode.GRID, 16, offset=0.5)
        with pytest.raises(ValueError):
            QuadratureConfig('sobol', 16)

    def test_defaults(self):
        assert QuadratureConfig.default_for(1).resolution == 1 << 14
        assert QuadratureConfig.default_for(3).mode is QuadratureMode.MC
        assert QuadratureConfig(QuadratureMode.GRID, 9).halved().resolution == 4


class TestRateFit:
    def test_exact_power_law(self):
        fit = fit_rate([(w, 3.0 * w ** -2.0) for w in (1, 2, 4, 8)])
        assert fit.slope == pytest.approx(-2.0)
        assert fit.intercept == pytest.approx(math.log(3.0))
        assert fit.r2 == pytest.approx(1.0)
        assert fit.count == 4

    def test_needs_three_records(self):
        with pytest.raises(DomainError):
            fit_rate([(1, 1.0), (2, 0.5)])

    def test_rejects_zero_error(self):
        with pytest.raises(DomainError):
            fit_rate([(1, 1.0), (2, 0.0), (3, 0.1)])

    def test_report_skips_failed_rows(self):
        report = RateReport()
        for w, err in [(1, 1.0), (2, None), (2, 0.25), (4, 0.0625), (8, 'nan')]:
            report.add({'W': w, 'error': err})
        fit = report.fit_on(lambda r: r['W'])
        assert fit.count == 3
        assert fit.slope == pytest.approx(-2.0)
        assert len(report.to_frame()) == 5

    def test_report_without_enough_rows(self):
        report = RateReport([{'W': 1, 'error': 0.5}])
        assert report.fit_on(lambda r: r['W']) is None
