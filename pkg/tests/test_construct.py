import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from korobov.construct import (BlockPlan, TrimmedRegion, assemble_blocks, block_bound, build_block, build_psi_k,
                               build_theorem1, build_theorem2, choose_epsilon, choose_n, default_fitter_order,
                               index_encoder, linear_index, partition_period, theorem1_budget)
from korobov.corpus import make_poly_bubble, make_sine_product
from korobov.errors import DimensionMismatch, DomainError
from korobov.gadgets import OmegaK, partition_g
from korobov.grid import SparseInterpolant, hierarchize
from korobov.metrics import QuadratureConfig, QuadratureMode, fit_rate, lp_error, w1p_error
from korobov.net import AffineLayer, ReluNetwork, assert_budget


class TestParameters:
    def test_choose_n(self):
        assert [choose_n(W, 1) for W in (1, 2, 3, 4)] == [2, 4, 6, 6]
        assert choose_n(2, 2) == 6
        with pytest.raises(DomainError):
            choose_n(0, 1)

    def test_choose_epsilon_is_capped(self):
        assert choose_epsilon(3, 2.0, 1, 1.0, 1e-9) == 2.0 ** -7
        eps = choose_epsilon(3, 2.0, 2, 1e-6, 1.0)
        assert eps == pytest.approx(1e-12 / (2 * 2 ** 5 * 5 ** 2))

    def test_default_fitter_order(self):
        assert default_fitter_order(2, 3) == 3
        assert default_fitter_order(3, 2) == 9

    def test_partition_period(self):
        assert partition_period(4) == 8

    def test_trimmed_region_validation(self):
        with pytest.raises(DomainError):
            TrimmedRegion(2, 0.1)
        with pytest.raises(DomainError):
            TrimmedRegion(2, 0.01, (3,))


class TestIndexEncoder:
    def test_linear_index_first_coordinate_fastest(self):
        assert linear_index((2, 3), (3, 5)) == 1 + 2 * 2
        assert linear_index((3,), (7,)) == 3

    def test_encoder_matches_cell_linearization(self):
        level, eps = (2, 2), 2.0 ** -7
        region = TrimmedRegion(3, eps, level)
        pts = region.sample(2, 400, seed=3)
        cells = np.floor(pts * 2).astype(int)
        expected = cells[:, 0] + 2 * cells[:, 1]
        net = index_encoder(level, 1, 1, eps)
        assert_allclose(net.evaluate(pts)[:, 0], expected, atol=1e-9)
        assert assert_budget(net).ok

    def test_capacity_check(self):
        with pytest.raises(DomainError):
            index_encoder((4, 1), 1, 1, 2.0 ** -9)


class TestBlocks:
    def _reference(self, plan):
        interp = SparseInterpolant(plan.order, plan.n, plan.d, {plan.level: plan.coefficients})
        return interp.evaluate

    def test_hat_block_within_bound(self, rng):
        plan = BlockPlan((3,), rng.uniform(-1.0, 1.0, 4), 2, 1, 3.0, 2, 4, 2.0 ** -9)
        net, bound = build_block(plan)
        pts = TrimmedRegion(4, plan.eps, plan.level).sample(1, 2000, seed=1)
        err = np.max(np.abs(net.evaluate(pts)[:, 0] - self._reference(plan)(pts)))
        assert err <= bound
        assert bound == block_bound(plan)
        assert assert_budget(net).ok

    def test_two_dimensional_hat_block(self, rng):
        plan = BlockPlan((2, 1), rng.uniform(-1.0, 1.0, 2), 2, 1, 3.0, 2, 2, 2.0 ** -5)
        net, bound = build_block(plan)
        pts = TrimmedRegion(2, plan.eps, plan.level).sample(2, 2000, seed=2)
        err = np.max(np.abs(net.evaluate(pts)[:, 0] - self._reference(plan)(pts)))
        assert err <= bound

    def test_quadratic_block_within_bound(self, rng):
        plan = BlockPlan((2,), rng.uniform(-1.0, 1.0, 2), 2, 1, default_fitter_order(3, 1), 3, 4, 2.0 ** -9)
        net, bound = build_block(plan)
        pts = TrimmedRegion(4, plan.eps, plan.level).sample(1, 2000, seed=4)
        err = np.max(np.abs(net.evaluate(pts)[:, 0] - self._reference(plan)(pts)))
        assert err <= bound + 1e-7

    def test_coefficients_must_be_normalized(self):
        plan = BlockPlan((1,), [1.5], 1, 1, 3.0, 2, 2, 2.0 ** -5)
        with pytest.raises(DomainError):
            build_block(plan)

    def test_shifted_candidates_double_the_patterns(self):
        plan = BlockPlan((2,), [0.5, -0.5], 2, 1, 3.0, 2, 4, 1.0 / 64, shifts=(5.0 / 64,), candidates=((0, -1),))
        assert plan.patterns == [(0,), (-1,)]


class TestAssembly:
    def test_assemble_blocks_grid(self, rng):
        nets = []
        for _ in range(5):
            layers = [AffineLayer(rng.normal(size=(3, 1)), rng.normal(size=3))]
            layers += [AffineLayer(rng.normal(size=(3, 3)), rng.normal(size=3)) for _ in range(2)]
            layers.append(AffineLayer(rng.normal(size=(1, 3)), rng.normal(size=1)))
            nets.append(ReluNetwork(layers))
        net, grid = assemble_blocks(nets, 1, 7)
        assert grid == (3, 2)
        x = rng.random((40, 1))
        assert_allclose(net.evaluate(x), sum(n.evaluate(x) for n in nets), rtol=1e-10, atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            build_theorem1(make_sine_product(2), 2, 1, 1, 1)


class TestTheorem1:
    def test_small_network_report(self):
        f = make_sine_product(1)
        net, report = build_theorem1(f, 2, 1, 1, 1)
        assert report.n == 2
        assert report.budget_ok
        assert (net.width, net.depth) == (report.width, report.depth)
        assert report.budget == theorem1_budget(2, 1, 1, 1)
        doc = report.to_dict()
        assert doc['grid'] == list(report.grid)
        assert len(doc['blocks']) == 2

    @pytest.mark.slow
    def test_rate_and_error_control(self):
        f = make_sine_product(1)
        q = QuadratureConfig(QuadratureMode.GRID, 1 << 12)
        records = []
        for W in (1, 2, 3, 4):
            net, report = build_theorem1(f, 2, W, 1, 1)
            err = lp_error(f, net, 2.0, q).value
            interp_err = lp_error(f, hierarchize(f, report.n, 2, 1), 2.0, q).value
            assert report.budget_ok
            assert err <= interp_err + report.bound_sum + 1e-6
            records.append((W, err))
        # W = 3 and W = 4 share n = 6
        assert records[0][1] > records[1][1] > records[2][1]
        assert fit_rate(records).slope <= -3.0

    @pytest.mark.slow
    def test_quadratic_order_two_dimensions(self):
        f = make_sine_product(2)
        q = QuadratureConfig(QuadratureMode.GRID, 128)
        net, report = build_theorem1(f, 3, 1, 1, 2)
        interp_err = lp_error(f, hierarchize(f, report.n, 3, 2), 2.0, q).value
        assert lp_error(f, net, 2.0, q).value <= interp_err + report.bound_sum + 1e-6


class TestPsi:
    @pytest.mark.parametrize('k', [(1,), (2,)])
    def test_reproduces_the_interpolant_on_its_family(self, k, rng):
        f = make_sine_product(1)
        net, report = build_psi_k(f, 2, 1, 1, 1, 2.0, k)
        K = report.extras['K']
        assert K == partition_period(report.n) == 2
        assert report.extras['k'] == list(k)
        assert report.budget_ok
        interp = hierarchize(f, report.n, 2, 1)
        x = rng.random((4000, 1))
        inside = x[OmegaK(K, k).contains(x)]
        assert len(inside) > 1000
        assert np.max(np.abs(net.evaluate(inside)[:, 0] - interp.evaluate(inside))) <= report.bound_sum + 1e-7
        assert np.max(np.abs(net.gradient(inside)[:, 0, :] - interp.gradient(inside))) <= report.bound_sum + 1e-6
        assert np.max(np.abs(net.evaluate(x)[:, 0])) <= report.extras['sup_bound'] + 1e-9

    def test_shared_interpolant_and_bad_family(self):
        f = make_poly_bubble(2)
        interp = hierarchize(f, choose_n(1, 1), 2, 2)
        _, report = build_psi_k(f, 2, 1, 1, 2, 2.0, (2, 1), interp=interp)
        assert report.extras['k'] == [2, 1]
        assert len(report.blocks) == len(interp.levels)
        with pytest.raises(DomainError):
            build_psi_k(f, 2, 1, 1, 2, 2.0, (1, 3), interp=interp)


class TestTheorem2:
    def test_partition_identity(self, rng):
        x = rng.random((10_000, 1))
        K = partition_period(4)
        assert_allclose(partition_g(K, 1, (1,))(x) + partition_g(K, 1, (2,))(x), 1.0, atol=1e-12)

    @pytest.mark.slow
    def test_sobolev_rate(self):
        f = make_poly_bubble(1)
        q = QuadratureConfig(QuadratureMode.GRID, 1 << 12)
        records = []
        for W in (2, 3, 4):
            net, report = build_theorem2(f, 2, W, 1, 1, quadrature=q)
            records.append((W, w1p_error(f, net, 2.0, q).value))
            assert {'E0', 'E1', 'E2'} <= set(report.extras)
            assert report.extras['E0'] > 0.0
        assert fit_rate(records).slope <= -1.5
        assert math.isfinite(records[-1][1])
