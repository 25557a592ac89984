"""Projection kernel: biorthogonal route, CD route, and their agreement."""

import math

import numpy as np
import pytest

from mixedmop import (DegeneratePair, DiagonalRegion, MultiIndexPair, Weight,
                      WeightFamily, build_biorthogonal, build_cd_data,
                      kernel_cd, kernel_cd_diagonal, kernel_cd_grid,
                      kernel_direct, kernel_direct_grid, kernel_routes_report,
                      transition_weight)
from mixedmop.kernel import (cd_numerator, idempotence_residual,
                             relative_discrepancy, trace_quadrature)
from mixedmop.rh import richardson_extrapolate

from conftest import monic_orthogonal_oracle, random_balanced_parts, \
    random_gaussian_families

SQRT_PI = math.sqrt(math.pi)


def rank_one_system(unit_gaussian):
    fam = WeightFamily([unit_gaussian])
    pair = MultiIndexPair.balanced([1], [1])
    return build_biorthogonal(pair, fam, fam)


class TestBiorthogonal:
    def test_frozen_gram_and_inverse(self, unit_gaussian):
        sys = rank_one_system(unit_gaussian)
        np.testing.assert_allclose(sys.gram, [[SQRT_PI]], rtol=1e-12)
        np.testing.assert_allclose(sys.transform, [[1.0 / SQRT_PI]],
                                   rtol=1e-12)

    def test_inverse_identity_random_configs(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            p, q = rng.integers(1, 4, size=2)
            total = int(rng.integers(max(p, q), 9))
            n = random_balanced_parts(rng, p, total)
            m = random_balanced_parts(rng, q, total)
            w1, w2 = random_gaussian_families(rng, p, q)
            sys = build_biorthogonal(MultiIndexPair.balanced(n, m), w1, w2)
            eye = sys.transform @ sys.gram
            assert np.max(np.abs(eye - np.eye(total))) < 1e-12

    def test_duplicated_weights_degenerate(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian, unit_gaussian])
        pair = MultiIndexPair.balanced([1, 1], [2])
        w2 = WeightFamily([Weight.gaussian(0.0, 1.0, 1.0)])
        with pytest.raises(DegeneratePair) as info:
            build_biorthogonal(pair, fam, w2)
        assert info.value.report is not None

    def test_dimension_and_layouts(self):
        rng = np.random.default_rng(9)
        w1, w2 = random_gaussian_families(rng, 2, 2)
        pair = MultiIndexPair.balanced([2, 1], [1, 2])
        sys = build_biorthogonal(pair, w1, w2)
        assert sys.dimension == 3
        assert len(sys.f_layout) == len(sys.g_layout) == 3

    def test_kernel_ignores_basis_order(self):
        rng = np.random.default_rng(13)
        w1, w2 = random_gaussian_families(rng, 2, 1)
        pair = MultiIndexPair.balanced([2, 2], [4])
        sys = build_biorthogonal(pair, w1, w2)
        shuffled = build_biorthogonal(pair, w1, w2,
                                      f_order=[3, 0, 2, 1],
                                      g_order=[1, 3, 0, 2])
        xs = np.linspace(-2.0, 2.0, 7)
        A = kernel_direct_grid(sys, xs, xs)
        B = kernel_direct_grid(shuffled, xs, xs)
        assert np.max(np.abs(A - B)) < 1e-12


class TestKernelDirect:
    def test_rank_one_closed_form(self, unit_gaussian):
        sys = rank_one_system(unit_gaussian)
        for x, y in ((0.0, 0.0), (0.7, -0.3), (1.5, 1.5)):
            expect = math.exp(-0.5 * x * x) * math.exp(-0.5 * y * y) / SQRT_PI
            assert kernel_direct(sys, x, y) == pytest.approx(expect,
                                                            rel=1e-12)

    def test_value_at_origin(self, unit_gaussian):
        sys = rank_one_system(unit_gaussian)
        assert kernel_direct(sys, 0.0, 0.0) == pytest.approx(1.0 / SQRT_PI,
                                                             rel=1e-12)

    def test_grid_matches_pointwise(self, unit_gaussian):
        rng = np.random.default_rng(17)
        w1, w2 = random_gaussian_families(rng, 1, 2)
        pair = MultiIndexPair.balanced([3], [2, 1])
        sys = build_biorthogonal(pair, w1, w2)
        xs = np.linspace(-1.5, 1.5, 5)
        ys = np.linspace(-1.0, 2.0, 4)
        K = kernel_direct_grid(sys, xs, ys)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                assert K[i, j] == pytest.approx(kernel_direct(sys, x, y),
                                                rel=1e-13, abs=1e-15)

    def test_trace_equals_dimension(self):
        rng = np.random.default_rng(19)
        for p, q, total in ((1, 1, 3), (2, 2, 5)):
            n = random_balanced_parts(rng, p, total)
            m = random_balanced_parts(rng, q, total)
            w1, w2 = random_gaussian_families(rng, p, q)
            sys = build_biorthogonal(MultiIndexPair.balanced(n, m), w1, w2)
            trace, err = trace_quadrature(sys)
            assert abs(trace - total) < max(1e-8, 10.0 * err)

    def test_reproducing_property(self):
        rng = np.random.default_rng(21)
        w1, w2 = random_gaussian_families(rng, 2, 1)
        sys = build_biorthogonal(MultiIndexPair.balanced([2, 1], [3]), w1, w2)
        xs = np.linspace(-1.0, 1.0, 4)
        resid, quad_est = idempotence_residual(sys, xs, xs)
        assert resid < 1e-8
        assert quad_est < 1e-10


class TestCdRoute:
    def test_solve_count_rank_one(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        data = build_cd_data(MultiIndexPair.balanced([1], [1]), fam, fam)
        assert (len(data.x_type2), len(data.x_type1)) == (1, 1)
        assert (len(data.y_type1), len(data.y_type2)) == (1, 1)

    def test_solve_count_one_two(self):
        rng = np.random.default_rng(25)
        w1, w2 = random_gaussian_families(rng, 1, 2)
        data = build_cd_data(MultiIndexPair.balanced([3], [2, 1]), w1, w2)
        total = (len(data.x_type2) + len(data.x_type1)
                 + len(data.y_type1) + len(data.y_type2))
        assert total == 6
        assert (data.p, data.q) == (1, 2)

    def test_transition_weight_solves_clean(self):
        # two starting and two ending points, four walkers
        w1 = WeightFamily([transition_weight(0.5, a, 4) for a in (-1.0, 1.0)])
        w2 = WeightFamily([transition_weight(0.5, b, 4) for b in (-0.5, 1.5)])
        data = build_cd_data(MultiIndexPair.balanced([2, 2], [2, 2]), w1, w2)
        assert data.max_residual() < 1e-8

    def test_agrees_with_direct_off_diagonal(self, unit_gaussian):
        sys = rank_one_system(unit_gaussian)
        data = build_cd_data(sys.pair, sys.w1, sys.w2)
        for x, y in ((0.4, -0.2), (1.0, 0.0), (-1.3, 0.9)):
            assert kernel_cd(data, x, y) == pytest.approx(
                kernel_direct(sys, x, y), rel=1e-10, abs=1e-13)

    def test_agrees_with_direct_mixed_config(self):
        rng = np.random.default_rng(27)
        w1, w2 = random_gaussian_families(rng, 2, 2)
        pair = MultiIndexPair.balanced([2, 2], [3, 1])
        sys = build_biorthogonal(pair, w1, w2)
        data = build_cd_data(pair, w1, w2)
        xs = np.linspace(-1.8, 1.8, 9)
        ys = xs + 0.37  # keep clear of the diagonal band
        Kd = np.array([[kernel_direct(sys, x, y) for y in ys] for x in xs])
        Kc = np.array([[kernel_cd(data, x, y) for y in ys] for x in xs])
        assert relative_discrepancy(Kd, Kc) < 1e-9

    def test_diagonal_band_raises(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        data = build_cd_data(MultiIndexPair.balanced([2], [2]), fam, fam)
        with pytest.raises(DiagonalRegion):
            kernel_cd(data, 0.3, 0.3 + 0.1 * data.delta_diag)

    def test_grid_handles_band_entries(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.balanced([3], [3])
        sys = build_biorthogonal(pair, fam, fam)
        data = build_cd_data(pair, fam, fam)
        delta = data.delta_diag
        xs = np.array([-1.0, 0.0, 0.5, 0.5 + 0.5 * delta, 1.2])
        K = kernel_cd_grid(data, xs, xs)
        assert np.all(np.isfinite(K))
        Kd = kernel_direct_grid(sys, xs, xs)
        assert relative_discrepancy(Kd, K) < 1e-9

    def test_numerator_swap_antisymmetry(self):
        rng = np.random.default_rng(33)
        w1, w2 = random_gaussian_families(rng, 2, 1)
        pair = MultiIndexPair.balanced([2, 1], [3])
        data = build_cd_data(pair, w1, w2)
        swapped = build_cd_data(MultiIndexPair.balanced([3], [2, 1]), w2, w1)
        for x, y in ((0.3, -0.8), (1.1, 0.2)):
            a = float(cd_numerator(data, x, y))
            b = float(cd_numerator(swapped, y, x))
            assert a == pytest.approx(-b, rel=1e-10, abs=1e-13)
            # the same value read through either orientation of the kernel
            assert kernel_cd(data, x, y) == pytest.approx(
                kernel_cd(swapped, y, x), rel=1e-10, abs=1e-13)

    def test_reduces_to_orthogonal_polynomials(self):
        # both families the same single gaussian: the kernel collapses to
        # w1(x) w2(y) sum_j P_j(x) P_j(y) / h_j with P_j monic orthogonal
        # for the product weight
        w = Weight.gaussian(0.0, 1.0, 1.0)
        fam = WeightFamily([w])
        count = 3
        pair = MultiIndexPair.balanced([count], [count])
        sys = build_biorthogonal(pair, fam, fam)
        product = Weight.gaussian(0.0, 0.5, 1.0)
        coeffs, hs = monic_orthogonal_oracle(product, (-9.0, 9.0), count)
        for x, y in ((0.0, 0.0), (0.8, -0.4), (-1.2, 1.7)):
            series = sum(
                np.polynomial.polynomial.polyval(x, coeffs[j])
                * np.polynomial.polynomial.polyval(y, coeffs[j]) / hs[j]
                for j in range(count))
            expect = w(x) * w(y) * series
            assert kernel_direct(sys, x, y) == pytest.approx(expect, rel=1e-8,
                                                             abs=1e-12)

    def test_diagonal_against_direct_grid(self, unit_gaussian):
        rng = np.random.default_rng(35)
        w1, w2 = random_gaussian_families(rng, 1, 2)
        pair = MultiIndexPair.balanced([4], [2, 2])
        sys = build_biorthogonal(pair, w1, w2)
        data = build_cd_data(pair, w1, w2)
        xs = np.linspace(-2.0, 2.0, 50)
        diag_cd = kernel_cd_diagonal(data, xs)
        diag_direct = np.array([kernel_direct(sys, x, x) for x in xs])
        assert relative_discrepancy(diag_direct, diag_cd) < 1e-7

    def test_diagonal_against_finite_difference(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        data = build_cd_data(MultiIndexPair.balanced([3], [3]), fam, fam)
        x = 0.6
        hs = (0.2, 0.1, 0.05, 0.025)
        vals = [kernel_cd(data, x + h, x - h) for h in hs]
        # equal families make K symmetric, so the centered values are even
        # in h: extrapolate the ladder in h^2
        extr = richardson_extrapolate(vals, [h * h for h in hs])
        assert complex(extr).imag == 0.0
        assert complex(extr).real == pytest.approx(
            kernel_cd_diagonal(data, x), abs=1e-8)

    def test_diagonal_value_at_origin(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        data = build_cd_data(MultiIndexPair.balanced([1], [1]), fam, fam)
        assert kernel_cd_diagonal(data, 0.0) == pytest.approx(1.0 / SQRT_PI,
                                                              rel=1e-10)


class TestRoutesReport:
    def test_report_keys_and_health(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.balanced([2], [2])
        sys = build_biorthogonal(pair, fam, fam)
        data = build_cd_data(pair, fam, fam)
        xs = np.linspace(-1.5, 1.5, 7)
        rep = kernel_routes_report(sys, data, xs, xs)
        for key in ("dimension", "trace", "trace_deviation",
                    "idempotence_residual", "gram_condition",
                    "max_solve_residual", "direct_vs_cd"):
            assert key in rep
        assert rep["dimension"] == 2
        assert rep["trace_deviation"] < 1e-8
        assert rep["direct_vs_cd"] < 1e-10
        assert "direct_vs_rh" not in rep

    def test_report_includes_rh_grid_when_given(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.balanced([1], [1])
        sys = build_biorthogonal(pair, fam, fam)
        data = build_cd_data(pair, fam, fam)
        xs = np.linspace(-1.0, 1.0, 3)
        fake = kernel_direct_grid(sys, xs, xs)
        rep = kernel_routes_report(sys, data, xs, xs, rh_grid=fake)
        assert rep["direct_vs_rh"] == 0.0
        assert rep["cd_vs_rh"] < 1e-10
