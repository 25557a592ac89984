"""Multi-index pairs, the orthogonality system, solves, and normality."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from mixedmop import (MultiIndex, MultiIndexPair, Normalization,
                      NotNormalizable, Weight, WeightFamily, check_normality,
                      moment_table_for, solve_mixed, solve_type1_classical,
                      solve_type2_classical)
from mixedmop.mop import (assemble_orthogonality_matrix, numerical_rank,
                          shifted_to_monomial)
from mixedmop.weights import build_moment_table

from conftest import nullspace_oracle, random_balanced_parts, \
    random_gaussian_families

SQRT_PI = math.sqrt(math.pi)


class TestMultiIndex:
    def test_size_and_bump(self):
        n = MultiIndex((2, 3))
        assert n.size == 5
        assert n.bumped(1, 1).parts == (2, 4)
        assert n.bumped(0, -1).parts == (1, 3)

    def test_rejects_negative_parts(self):
        with pytest.raises(ValueError):
            MultiIndex((1, -1))

    def test_pair_relations(self):
        assert MultiIndexPair.defining([2], [1]).relation == "defining"
        assert MultiIndexPair.balanced([2, 1], [3]).relation == "balanced"

    def test_pair_rejects_wrong_totals(self):
        with pytest.raises(ValueError):
            MultiIndexPair.defining([2], [2])
        with pytest.raises(ValueError):
            MultiIndexPair.balanced([2], [1])

    def test_balanced_rejects_zero_parts(self):
        with pytest.raises(ValueError):
            MultiIndexPair.balanced([2, 0], [1, 1])
        with pytest.raises(ValueError):
            MultiIndexPair.balanced([1, 1], [2, 0])

    def test_defining_allows_zero_condition_side(self):
        pair = MultiIndexPair.defining([1], [0])
        assert pair.m.parts == (0,)

    def test_first_index_parts_stay_positive(self):
        with pytest.raises(ValueError):
            MultiIndexPair.defining([0, 1], [0])


class TestOrthogonalityMatrix:
    def test_frozen_one_by_two(self, unit_gaussian):
        # n=(2), m=(1): single row of zeroth and first product moments
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.defining([2], [1])
        table = moment_table_for(pair, fam, fam)
        M = assemble_orthogonality_matrix(pair, table)
        assert M.shape == (1, 2)
        np.testing.assert_allclose(M, [[SQRT_PI, 0.0]], atol=1e-14)

    def test_shape_counts_conditions_and_coefficients(self):
        rng = np.random.default_rng(7)
        w1, w2 = random_gaussian_families(rng, 2, 2)
        pair = MultiIndexPair.defining([2, 2], [2, 1])
        table = moment_table_for(pair, w1, w2)
        M = assemble_orthogonality_matrix(pair, table)
        assert M.shape == (3, 4)

    def test_two_weight_row_contains_cross_moments(self):
        w1 = WeightFamily([Weight.gaussian(-1.0, 1.0, 1.0),
                           Weight.gaussian(1.0, 1.0, 1.0)])
        w2 = WeightFamily([Weight.gaussian(0.0, 1.0, 1.0)])
        pair = MultiIndexPair.defining([1, 1], [1])
        table = moment_table_for(pair, w1, w2)
        M = assemble_orthogonality_matrix(pair, table)
        assert M.shape == (1, 2)
        for col, j in ((0, 0), (1, 1)):
            expect, _ = quad(lambda x: w1[j](x) * w2[0](x), -14, 14,
                             limit=300, epsabs=1e-13)
            assert M[0, col] == pytest.approx(expect, rel=1e-10)


class TestSolveMixed:
    def test_degree_one_solution_is_x(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.defining([2], [1])
        table = moment_table_for(pair, fam, fam)
        sol = solve_mixed(pair, table, Normalization.type2(0))
        np.testing.assert_allclose(sol.polynomials_original()[0], [0.0, 1.0],
                                   atol=1e-14)

    def test_empty_condition_set_gives_constant_one(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.defining([1], [0])
        table = moment_table_for(pair, fam, fam)
        sol = solve_mixed(pair, table, Normalization.type2(0))
        np.testing.assert_allclose(sol.polynomials_original()[0], [1.0])

    def test_residual_small_for_mixed_two_by_two(self):
        w1 = WeightFamily([Weight.gaussian(-1.0, 1.0, 1.0),
                           Weight.gaussian(1.0, 1.0, 1.0)])
        w2 = WeightFamily([Weight.gaussian(-0.5, 1.0, 1.0),
                           Weight.gaussian(0.5, 1.0, 1.0)])
        pair = MultiIndexPair.defining([2, 2], [2, 1])
        table = moment_table_for(pair, w1, w2)
        sol = solve_mixed(pair, table, Normalization.type2(0))
        assert sol.residual < 1e-10

    def test_against_nullspace_oracle(self):
        # the solved direction must align with the one-dimensional null space
        rng = np.random.default_rng(11)
        for _ in range(6):
            p, q = rng.integers(1, 3, size=2)
            total = int(rng.integers(max(p, q) + 1, 7))
            n = random_balanced_parts(rng, p, total)
            m = random_balanced_parts(rng, q, total - 1)
            w1, w2 = random_gaussian_families(rng, p, q)
            pair = MultiIndexPair.defining(n, m)
            table = moment_table_for(pair, w1, w2)
            M = assemble_orthogonality_matrix(pair, table)
            ns = nullspace_oracle(M)
            if ns.shape[1] != 1:
                continue
            sol = solve_mixed(pair, table, Normalization.type2(0))
            vec = np.concatenate(sol.coeffs)
            cosang = abs(ns[:, 0] @ vec) / (np.linalg.norm(vec))
            assert 1.0 - cosang < 1e-8

    def test_orthogonality_by_independent_quadrature(self):
        rng = np.random.default_rng(23)
        w1, w2 = random_gaussian_families(rng, 2, 1)
        pair = MultiIndexPair.defining([2, 1], [2])
        table = moment_table_for(pair, w1, w2)
        sol = solve_mixed(pair, table, Normalization.type1(0))
        scale = max(np.max(np.abs(np.concatenate(sol.coeffs))), 1.0)
        for j in range(2):
            val, _ = quad(lambda x: float(sol.form(x)) * x ** j * w2[0](x),
                          -16, 16, limit=400, epsabs=1e-13)
            assert abs(val) / scale < 1e-8

    def test_type1_normalization_integral_is_one(self):
        rng = np.random.default_rng(29)
        w1, w2 = random_gaussian_families(rng, 1, 2)
        pair = MultiIndexPair.defining([3], [1, 1])
        table = moment_table_for(pair, w1, w2)
        for k in range(2):
            sol = solve_mixed(pair, table, Normalization.type1(k))
            power = pair.m.parts[k]
            val, _ = quad(lambda x: float(sol.form(x)) * x ** power * w2[k](x),
                          -16, 16, limit=400, epsabs=1e-13)
            assert val == pytest.approx(1.0, abs=1e-8)

    def test_type2_leading_coefficient_exact(self):
        w1 = WeightFamily([Weight.gaussian(-2.0, 0.7, 1.0),
                           Weight.gaussian(1.5, 1.3, 0.8)])
        w2 = WeightFamily([Weight.gaussian(0.3, 1.1, 1.2)])
        pair = MultiIndexPair.defining([3, 2], [4])
        table = moment_table_for(pair, w1, w2)
        for k in range(2):
            sol = solve_mixed(pair, table, Normalization.type2(k))
            poly = sol.polynomials_original()[k]
            assert poly[-1] == 1.0
            assert len(poly) - 1 == pair.n.parts[k] - 1

    def test_two_normalizations_are_proportional(self, unit_gaussian):
        fam2 = WeightFamily([Weight.gaussian(0.0, 1.0, 1.0),
                             Weight.gaussian(1.0, 1.0, 1.0)])
        fam1 = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.defining([3], [1, 1])
        table = moment_table_for(pair, fam1, fam2)
        a = np.concatenate(solve_mixed(pair, table,
                                       Normalization.type2(0)).coeffs)
        b = np.concatenate(solve_mixed(pair, table,
                                       Normalization.type1(1)).coeffs)
        cosang = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert 1.0 - cosang < 1e-10

    def test_not_normalizable_carries_report(self):
        w = Weight.gaussian(0.5, 1.0, 1.0)
        w1 = WeightFamily([Weight.gaussian(-1.0, 1.0, 1.0),
                           Weight.gaussian(1.0, 1.0, 1.0)])
        w2 = WeightFamily([w, w])  # duplicated second-family weight
        pair = MultiIndexPair.defining([2, 1], [1, 1])
        table = moment_table_for(pair, w1, w2)
        with pytest.raises(NotNormalizable) as info:
            solve_mixed(pair, table, Normalization.type2(0))
        assert info.value.report is not None
        assert info.value.report.kernel_dimension >= 2

    def test_extended_precision_agrees_with_double(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.defining([4], [3])
        table = moment_table_for(pair, fam, fam)
        d = solve_mixed(pair, table, Normalization.type2(0))
        e = solve_mixed(pair, table, Normalization.type2(0),
                        precision="extended")
        np.testing.assert_allclose(np.concatenate(e.coeffs),
                                   np.concatenate(d.coeffs),
                                   rtol=1e-12, atol=1e-14)
        assert e.precision == "extended"


class TestClassicalReductions:
    def test_type1_single_gaussian_constant(self, squared_exp_gaussian):
        # weight e^{-x^2}: normalized constant form 1/sqrt(pi) e^{-x^2}
        sol = solve_type1_classical(WeightFamily([squared_exp_gaussian]), [1])
        np.testing.assert_allclose(sol.polynomials_original()[0],
                                   [1.0 / SQRT_PI], rtol=1e-12)

    def test_type1_even_weight_parity(self, unit_gaussian):
        sol = solve_type1_classical(WeightFamily([unit_gaussian]), [2])
        coeffs = sol.polynomials_original()[0]
        # degree-1 polynomial for an even weight: odd part only
        assert abs(coeffs[0]) < 1e-12 * max(abs(coeffs[1]), 1.0)

    def test_type1_two_weight_solvable(self):
        fam = WeightFamily([Weight.gaussian(-2.0, 0.5, 1.0),
                            Weight.gaussian(2.0, 0.5, 1.0)])
        sol = solve_type1_classical(fam, [2, 2])
        assert sol.residual < 1e-10

    def test_type2_degree_one(self, squared_exp_gaussian):
        sol = solve_type2_classical(WeightFamily([squared_exp_gaussian]), [1])
        np.testing.assert_allclose(sol.polynomials_original()[0], [0.0, 1.0],
                                   atol=1e-13)

    def test_type2_degree_two_frozen(self, squared_exp_gaussian):
        # Gram-Schmidt on moments {sqrt(pi), 0, sqrt(pi)/2}: x^2 - 1/2
        sol = solve_type2_classical(WeightFamily([squared_exp_gaussian]), [2])
        np.testing.assert_allclose(sol.polynomials_original()[0],
                                   [-0.5, 0.0, 1.0], atol=1e-12)

    def test_type2_duplicated_weights_degenerate(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian, unit_gaussian])
        with pytest.raises(NotNormalizable):
            solve_type2_classical(fam, [1, 1])


class TestNormality:
    def test_simple_gaussian_pair_is_normal(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.defining([2], [1])
        table = moment_table_for(pair, fam, fam)
        rep = check_normality(pair, table)
        assert rep.normal
        assert rep.kernel_dimension == 1
        assert all(rep.typeI_admissible) and all(rep.typeII_admissible)

    def test_duplicated_weight_not_normal(self):
        w = Weight.gaussian(0.5, 1.0, 1.0)
        w1 = WeightFamily([Weight.gaussian(-1.0, 1.0, 1.0),
                           Weight.gaussian(1.0, 1.0, 1.0)])
        w2 = WeightFamily([w, w])
        pair = MultiIndexPair.defining([2, 1], [1, 1])
        table = moment_table_for(pair, w1, w2)
        rep = check_normality(pair, table)
        assert not rep.normal
        assert rep.kernel_dimension >= 2

    def test_rank_invariant_under_basis_change(self):
        rng = np.random.default_rng(31)
        w1, w2 = random_gaussian_families(rng, 2, 1)
        pair = MultiIndexPair.defining([2, 2], [3])
        kmax = moment_table_for(pair, w1, w2).kmax
        for center, scale in ((0.0, 1.0), (0.5, 2.0), (-1.0, 3.0)):
            table = build_moment_table(w1, w2, kmax, center=center,
                                       scale=scale)
            rep = check_normality(pair, table)
            assert rep.kernel_dimension == 1

    def test_report_serializes(self, unit_gaussian):
        fam = WeightFamily([unit_gaussian])
        pair = MultiIndexPair.defining([2], [1])
        table = moment_table_for(pair, fam, fam)
        d = check_normality(pair, table).to_json_dict()
        assert d["kernel_dimension"] == 1
        assert isinstance(d["typeI_admissible"], list)


class TestBasisConversion:
    def test_shifted_to_monomial_round_trip(self):
        rng = np.random.default_rng(3)
        coeffs = rng.standard_normal(5)
        c, s = 0.7, 2.3
        mono = shifted_to_monomial(coeffs, c, s)
        xs = np.linspace(-2, 2, 9)
        u = (xs - c) / s
        np.testing.assert_allclose(np.polynomial.polynomial.polyval(xs, mono),
                                   np.polynomial.polynomial.polyval(u, coeffs),
                                   rtol=1e-12)

    def test_numerical_rank_thresholds(self):
        M = np.diag([1.0, 1e-6, 1e-14])
        rank, _ = numerical_rank(M)
        assert rank == 2
