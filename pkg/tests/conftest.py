"""Shared fixtures and independent oracles.

The oracles deliberately avoid the library's own quadrature and solver
paths: product moments come from scipy's adaptive quadrature, monic
orthogonal polynomials from a Hankel-system Gram-Schmidt construction,
Cauchy transforms from the Faddeeva function, and null spaces from an SVD
performed outside the solver.
"""

import math

import numpy as np
import pytest
from scipy import integrate, linalg, special

from mixedmop import Weight, WeightFamily


# ---------------------------------------------------------------------------
# Quadrature oracle for product moments


def quad_product_moment(w1: Weight, w2: Weight, k: int) -> float:
    """integral x^k w1 w2 dx by scipy adaptive quadrature."""
    lo1, hi1 = w1.interval()
    lo2, hi2 = w2.interval()
    lo, hi = max(lo1, lo2), min(hi1, hi2)
    if hi <= lo:
        return 0.0
    val, _ = integrate.quad(lambda x: x ** k * w1(x) * w2(x), lo, hi,
                            limit=400, epsabs=1e-13, epsrel=1e-12)
    return val


# ---------------------------------------------------------------------------
# Gram-Schmidt oracle for classical monic orthogonal polynomials


def monic_orthogonal_oracle(weight, interval, count):
    """Monic orthogonal polynomials P_0..P_{count} and norms h_j for a
    scalar weight callable, via moment Hankel systems.

    Returns (coeff_list, h_list) with coefficients in ascending monomial
    order and h_j = integral P_j x^j w dx.
    """
    lo, hi = interval
    mom = []
    for j in range(2 * count + 2):
        v, _ = integrate.quad(lambda x, j=j: x ** j * weight(x), lo, hi,
                              limit=400, epsabs=1e-12, epsrel=1e-12)
        mom.append(v)
    mom = np.array(mom)
    coeffs = []
    hs = []
    for deg in range(count + 1):
        if deg == 0:
            c = np.array([1.0])
        else:
            H = np.array([[mom[i + j] for i in range(deg)] for j in range(deg)])
            rhs = -np.array([mom[deg + j] for j in range(deg)])
            c = np.concatenate([np.linalg.solve(H, rhs), [1.0]])
        coeffs.append(c)
        hs.append(float(sum(ci * mom[i + deg] for i, ci in enumerate(c))))
    return coeffs, hs


# ---------------------------------------------------------------------------
# Faddeeva-function oracle for Cauchy transforms of polynomial x Gaussian


def _gauss_line_moments(count):
    # integral u^j e^{-u^2} du over the real line
    out = [math.sqrt(math.pi), 0.0]
    for j in range(2, count + 1):
        out.append(0.5 * (j - 1) * out[j - 2])
    return out


def faddeeva_cauchy_gaussian(poly_coeffs, center, variance, amplitude,
                             z: complex) -> complex:
    """integral (sum_i c_i x^i) * amp * e^{-(x-center)^2/(2 variance)} / (x-z) dx
    via the Faddeeva function w(zeta) and the moment recursion
    C_j = G_{j-1} + zeta C_{j-1}."""
    s = math.sqrt(2.0 * variance)
    zeta = (z - center) / s
    if zeta.imag > 0:
        C0 = 1j * math.pi * special.wofz(zeta)
    else:
        C0 = np.conj(1j * math.pi * special.wofz(np.conj(zeta)))
    deg = len(poly_coeffs) - 1
    G = _gauss_line_moments(max(deg, 1))
    C = [C0]
    for j in range(1, deg + 1):
        C.append(G[j - 1] + zeta * C[j - 1])
    total = 0.0 + 0.0j
    for i, ci in enumerate(poly_coeffs):
        if ci == 0.0:
            continue
        # x^i = (center + s u)^i expanded binomially; the s du from the
        # substitution cancels against the 1/(s (u - zeta)) in the kernel
        for j in range(i + 1):
            total += (ci * math.comb(i, j) * center ** (i - j) * s ** j
                      * C[j])
    return amplitude * total


# ---------------------------------------------------------------------------
# Null-space oracle


def nullspace_oracle(M: np.ndarray) -> np.ndarray:
    return linalg.null_space(M, rcond=1e-10)


# ---------------------------------------------------------------------------
# Shared configurations


@pytest.fixture
def unit_gaussian():
    return Weight.gaussian(0.0, 1.0, 1.0)


@pytest.fixture
def squared_exp_gaussian():
    # the weight e^{-x^2}
    return Weight.gaussian(0.0, 0.5, 1.0)


def random_gaussian_families(rng, p, q):
    """Well-separated random Gaussian families for property tests."""
    def fam(count, base):
        ws = []
        for i in range(count):
            center = base + 1.6 * i + rng.uniform(-0.3, 0.3)
            variance = rng.uniform(0.5, 1.4)
            amplitude = rng.uniform(0.6, 1.4)
            ws.append(Weight.gaussian(center, variance, amplitude))
        return WeightFamily(ws)
    return fam(p, rng.uniform(-1.0, -0.5)), fam(q, rng.uniform(-0.6, 0.2))


def random_balanced_parts(rng, count, total):
    """count positive integers summing to total."""
    cuts = np.sort(rng.choice(np.arange(1, total), size=count - 1,
                              replace=False)) if count > 1 else np.array([], int)
    parts = np.diff(np.concatenate([[0], cuts, [total]]))
    return [int(v) for v in parts]
