import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from korobov.errors import DomainError
from korobov.gadgets import (CHECK_SLACK, Box, GadgetContract, Norm, OmegaK, TrimmedGrid, box_points, check_contract,
                             check_product_perturbation, fitter_error_bound, partition_error_bound, partition_g,
                             partition_g_gradient, partition_net, point_fitter, product2, product_multi, step_carry,
                             step_network, support_localization_check)
from korobov.net import assert_budget, scale_output


class TestRegions:
    def test_trimmed_grid(self):
        grid = TrimmedGrid(4, 0.05)
        assert grid.safe_intervals()[0] == pytest.approx((0.0, 0.2))
        assert grid.safe_intervals()[-1] == pytest.approx((0.75, 1.0))
        assert list(grid.contains(np.array([0.1, 0.22, 0.99]))) == [True, False, True]

    def test_trim_width_range(self):
        with pytest.raises(DomainError):
            TrimmedGrid(4, 0.1)

    def test_omega_families(self):
        assert list(OmegaK(1, (1,)).contains(np.array([[0.5], [0.8]]))) == [True, False]
        assert list(OmegaK(1, (2,)).contains(np.array([[0.1], [0.3], [0.6]]))) == [True, False, True]
        with pytest.raises(DomainError):
            OmegaK(2, (3,))

    def test_contract_bound_is_finite_and_non_negative(self):
        for bad in (-1.0, float('nan'), float('inf')):
            with pytest.raises(DomainError):
                GadgetContract('x', None, bad, Norm.SUP, Box.cube(1))
        assert GadgetContract('x', None, 0.0, Norm.SUP, Box.cube(1)).error_bound == 0.0

    @pytest.mark.parametrize('K,eps', [(3, 0.1), (8, 0.02), (16, 1 / 48)])
    def test_trim_band_sits_below_every_interior_breakpoint(self, K, eps):
        grid = TrimmedGrid(K, eps)
        pts, cells = grid.sample(25)
        assert grid.contains(pts).all()
        assert_array_equal(cells, np.minimum(np.floor(pts * K), K - 1))
        for k in range(K - 1):
            band = np.linspace((k + 1) / K - eps, (k + 1) / K, 7)[1:-1]
            assert not grid.contains(band).any()
            assert grid.contains(np.array([(k + 1) / K]))[0]
        # the last cell keeps its right end
        assert grid.contains(np.array([1.0 - eps / 2, 1.0])).all()
        assert sum(hi - lo for lo, hi in grid.safe_intervals()) == pytest.approx(1.0 - (K - 1) * eps)

    def test_box_points_stay_off_diagonals_and_dyadics(self):
        box = Box((-1.0, 0.0, 0.0), (1.0, 1.0, 2.0))
        pts = box_points(box, 12)
        assert pts.shape == (12 ** 3, 3)
        assert np.all(pts > np.array(box.lower)) and np.all(pts < np.array(box.upper))
        unit = box_points(Box.cube(3), 64)
        for i, j in itertools.combinations(range(3), 2):
            assert np.min(np.abs(unit[:, i] - unit[:, j])) > 1e-3
            assert np.min(np.abs(unit[:, i] + unit[:, j] - 1.0)) > 1e-3
        for level in range(1, 7):
            scaled = unit * 2 ** level
            assert np.min(np.abs(scaled - np.rint(scaled))) > 1e-6


class TestStepNetwork:
    @pytest.mark.parametrize('W,L', [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1)])
    def test_exact_on_safe_intervals(self, W, L):
        K = W * W * L * L
        net, contract = step_network(K, W, L, 1.0 / (4 * K))
        pts, cells = contract.region.sample(33)
        assert_allclose(net.evaluate(pts[:, None])[:, 0], cells, rtol=0, atol=1e-9)
        assert assert_budget(net, contract.size).ok

    @pytest.mark.parametrize('K,W,L', [(4, 2, 1), (7, 3, 1), (9, 3, 1), (16, 2, 2)])
    def test_monotone_on_the_safe_set(self, K, W, L, rng):
        grid = TrimmedGrid(K, 1.0 / (4 * K))
        net, _ = step_network(K, W, L, grid.eps)
        x = rng.random(4000)
        x = np.sort(x[grid.contains(x)])
        out = net.evaluate(x[:, None])[:, 0]
        assert np.all(np.diff(out) >= -1e-9)
        assert np.max(out) <= K - 1 + 1e-9

    def test_partial_last_block(self):
        # K = 7 with two-scale blocks of 6 exercises the clamp layer
        net, contract = step_network(7, 3, 1, 0.02)
        pts, cells = contract.region.sample(20)
        assert_allclose(net.evaluate(pts[:, None])[:, 0], cells, atol=1e-9)

    def test_carry_returns_input(self, rng):
        net = step_carry(4, 2, 1, 0.05)
        x = TrimmedGrid(4, 0.05).sample(10)[0]
        out = net.evaluate(x[:, None])
        assert_allclose(out[:, 1], x, atol=1e-12)

    def test_capacity(self):
        with pytest.raises(DomainError):
            step_network(5, 1, 2, 0.01)


class TestPointFitter:
    @pytest.mark.parametrize('W,L,s', [(1, 1, 1), (2, 1, 3), (2, 2, 1), (3, 2, 2), (3, 3, 1)])
    def test_exhaustive_error(self, W, L, s, rng):
        K = W * W * L * L
        xi = rng.random(K)
        net, contract = point_fitter(xi, W, L, s)
        out = net.evaluate(np.arange(K, dtype=float)[:, None])[:, 0]
        assert np.max(np.abs(out - xi)) <= fitter_error_bound(W, L, s)
        assert assert_budget(net, contract.size).ok

    def test_output_stays_in_unit_interval(self, rng):
        net, _ = point_fitter(rng.random(16), 2, 2, 1)
        out = net.evaluate(rng.uniform(-3.0, 20.0, size=(200, 1)))[:, 0]
        assert np.all(out >= -1e-12) and np.all(out <= 1.0 + 1e-12)

    def test_rejects_bad_samples(self):
        with pytest.raises(DomainError):
            point_fitter([0.5, 1.5], 2, 1, 1)
        with pytest.raises(DomainError):
            point_fitter(np.zeros(5), 1, 2, 1)


class TestProducts:
    @pytest.mark.parametrize('W,L,a', [(1, 1, 2.0), (2, 2, 2.0), (3, 2, 4.0), (2, 3, 3.0)])
    def test_product2_contract(self, W, L, a):
        net, contract = product2(W, L, a)
        check = check_contract(net, contract, box_points(contract.region, 64), lambda x: x[:, 0] * x[:, 1],
                               lambda x: x[:, ::-1])
        assert check.passed, check.to_row()

    def test_zero_slice(self):
        net, _ = product2(3, 3, 2.0)
        ys = np.linspace(-1.99, 1.99, 301)
        out = net.evaluate(np.column_stack([np.zeros_like(ys), ys]))[:, 0]
        assert np.max(np.abs(out)) <= 1e-12

    def test_product2_needs_a_at_least_two(self):
        with pytest.raises(DomainError):
            product2(2, 1, 1.5)

    def test_product_multi_contract(self, rng):
        net, contract = product_multi(3, 3.0, 1, 1)
        lo, hi = np.array(contract.region.lower), np.array(contract.region.upper)
        pts = lo + (hi - lo) * rng.random((1500, 3))
        grad = lambda x: np.stack([x[:, 1] * x[:, 2], x[:, 0] * x[:, 2], x[:, 0] * x[:, 1]], axis=1)
        check = check_contract(net, contract, pts, lambda x: np.prod(x, axis=1), grad)
        assert check.passed, check.to_row()

    def test_product_multi_arguments(self):
        with pytest.raises(DomainError):
            product_multi(2, 3.0, 1, 1)
        with pytest.raises(DomainError):
            product_multi(3, 2.0, 1, 1)

    def test_faulty_network_fails_its_contract(self):
        net, contract = product2(3, 3, 2.0)
        check = check_contract(scale_output(net, 1.5), contract, box_points(contract.region, 64),
                               lambda x: x[:, 0] * x[:, 1])
        assert not check.passed
        assert check.margin < 0.0

    def test_bounds_follow_the_stated_formulas(self):
        _, shallow = product2(2, 2, 2.0)
        assert shallow.error_bound == 6.0 * 4.0 * 2.0 ** -2
        _, deep = product2(2, 30, 2.0)
        assert deep.error_bound == pytest.approx(24.0 * 2.0 ** -30, rel=1e-12)
        _, multi = product_multi(3, 3.0, 2, 1)
        assert multi.error_bound == pytest.approx(14.0 * 8.0 ** 4 * 3.0 ** -14, rel=1e-12)
        assert fitter_error_bound(4, 3, 2) == pytest.approx(12.0 ** -4, rel=1e-12)
        assert fitter_error_bound(40, 40, 3) == pytest.approx(1600.0 ** -6, rel=1e-12)
        assert partition_error_bound(9, 2, 2, 1, 4) == pytest.approx(50.0 * 2 ** 2.5 * 3.0 ** -32, rel=1e-12)
        assert partition_error_bound(9, 2, 2, 1, 4) == partition_error_bound(1, 2, 2, 1, 4)

    @pytest.mark.parametrize('arity,W,L', [(3, 1, 1), (3, 3, 2), (4, 2, 2)])
    def test_product_multi_meets_its_exact_bound(self, arity, W, L, rng):
        net, contract = product_multi(arity, 3.0, W, L)
        lo, hi = np.array(contract.region.lower), np.array(contract.region.upper)
        pts = lo + (hi - lo) * rng.random((800, arity))

        def grad(x):
            return np.stack([np.prod(np.delete(x, j, axis=1), axis=1) for j in range(arity)], axis=1)

        check = check_contract(net, contract, pts, lambda x: np.prod(x, axis=1), grad)
        assert check.passed, check.to_row()
        assert check.measured <= contract.error_bound + CHECK_SLACK

    @pytest.mark.parametrize('m', range(1, 7))
    def test_perturbation_bound(self, m):
        for eps in (1e-2, 1e-4):
            worst, bound = check_product_perturbation(m, eps, 10_000, seed=m)
            assert worst <= bound


class TestPartition:
    def test_partition_of_unity(self, rng):
        x = rng.random((10_000, 2))
        for K in (1, 3, 8):
            total = sum(partition_g(K, 2, k)(x) for k in itertools.product((1, 2), repeat=2))
            assert_allclose(total, 1.0, rtol=0, atol=1e-12)

    @pytest.mark.parametrize('K', [1, 2, 4, 9])
    def test_one_dimensional_net_is_exact(self, K):
        x = box_points(Box.cube(1), 4096)
        for kind in (1, 2):
            net, contract = partition_net(K, 1, (kind,), 2, 1, 4)
            assert_allclose(net.evaluate(x)[:, 0], partition_g(K, 1, (kind,))(x), atol=1e-12)
            assert_allclose(net.gradient(x)[:, 0, :], partition_g_gradient(K, 1, (kind,))(x), atol=1e-9)
            assert assert_budget(net, contract.size).ok

    @pytest.mark.parametrize('k', [(1, 1), (1, 2), (2, 1), (2, 2)])
    @pytest.mark.parametrize('K,W,n', [(1, 1, 2), (4, 2, 4)])
    def test_two_dimensional_contract(self, K, W, n, k):
        net, contract = partition_net(K, 2, k, W, 1, n)
        check = check_contract(net, contract, box_points(contract.region, 96), partition_g(K, 2, k),
                               partition_g_gradient(K, 2, k))
        assert check.passed, check.to_row()

    def test_gradient_matches_finite_differences(self, rng):
        grad = partition_g_gradient(3, 2, (2, 1))
        g = partition_g(3, 2, (2, 1))
        x = box_points(Box.cube(2), 40)
        h = 1e-7
        fd = np.stack([(g(x + h * e) - g(x - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
        assert_allclose(grad(x), fd, atol=1e-5)

    @pytest.mark.parametrize('kind', [1, 2])
    def test_support_localization(self, kind):
        net, _ = partition_net(4, 1, (kind,), 1, 1, 2)
        assert support_localization_check(net, lambda x: np.sin(np.pi * x[:, 0]), OmegaK(4, (kind,)))
