"""Mixed-type multiple orthogonal polynomials: assembly, solving, normality.

A solve looks for polynomials A_1..A_p with deg A_l <= n_l - 1 such that the
linear form Q(x) = sum_l A_l(x) w1_l(x) is orthogonal to x^j w2_k(x) for
j < m_k, k = 1..q.  With |n| = |m| + 1 that is |m| homogeneous conditions on
|n| coefficients; one normalization row (type I: a unit weighted moment,
type II: a monic leading coefficient) closes the square system.  All linear
algebra runs in the table's shifted-scaled monomial basis; everything the
caller sees is in the original variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .weights import (ProductMomentTable, Weight, WeightFamily,
                      build_moment_table)

# Singular values below max(rows, cols) * s_max * RANK_RTOL count as zero.
RANK_RTOL = 1e-10
EXTENDED_RANK_RTOL = 1e-25
EXTENDED_DPS = 60


class NotNormalizable(RuntimeError):
    """The requested pair/normalization admits no (unique) solution.

    Carries the NormalityReport explaining which rank condition failed, and,
    when raised while building derived data, the offending (orientation, k).
    """

    def __init__(self, message: str, report: "NormalityReport | None" = None,
                 context: tuple | None = None):
        super().__init__(message)
        self.report = report
        self.context = context


@dataclass(frozen=True)
class MultiIndex:
    """An ordered tuple of polynomial-degree budgets, one per weight."""

    parts: tuple[int, ...]

    def __post_init__(self):
        parts = tuple(int(v) for v in self.parts)
        object.__setattr__(self, "parts", parts)
        if len(parts) == 0:
            raise ValueError("a multi-index needs at least one part")
        if any(v < 0 for v in parts):
            raise ValueError("multi-index parts must be >= 0")

    @property
    def size(self) -> int:
        return sum(self.parts)

    def __len__(self) -> int:
        return len(self.parts)

    def __getitem__(self, k: int) -> int:
        return self.parts[k]

    def bumped(self, k: int, step: int) -> "MultiIndex":
        parts = list(self.parts)
        parts[k] += step
        return MultiIndex(tuple(parts))


@dataclass(frozen=True)
class MultiIndexPair:
    """A pair (n, m) of multi-indices with its defining/balanced relation.

    Positive parts are required in n always, and in m as well for balanced
    pairs; a defining pair may carry zero parts in m (a weight contributing
    no orthogonality conditions), which is exactly what the neighbor solves
    of the kernel construction produce.
    """

    n: MultiIndex
    m: MultiIndex

    def __post_init__(self):
        n = self.n if isinstance(self.n, MultiIndex) else MultiIndex(tuple(self.n))
        m = self.m if isinstance(self.m, MultiIndex) else MultiIndex(tuple(self.m))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        if n.size == m.size + 1:
            rel = "defining"
        elif n.size == m.size:
            rel = "balanced"
        else:
            raise ValueError(
                f"|n|={n.size} and |m|={m.size} fit neither |n|=|m|+1 nor |n|=|m|")
        object.__setattr__(self, "_relation", rel)
        if any(v < 1 for v in n.parts):
            raise ValueError("first multi-index must have parts >= 1")
        if rel == "balanced" and any(v < 1 for v in m.parts):
            raise ValueError("balanced pairs need parts >= 1 on both sides")

    @property
    def relation(self) -> str:
        return self._relation

    @staticmethod
    def defining(n: Sequence[int], m: Sequence[int]) -> "MultiIndexPair":
        pair = MultiIndexPair(MultiIndex(tuple(n)), MultiIndex(tuple(m)))
        if pair.relation != "defining":
            raise ValueError("pair is not defining: need |n| = |m| + 1")
        return pair

    @staticmethod
    def balanced(n: Sequence[int], m: Sequence[int]) -> "MultiIndexPair":
        pair = MultiIndexPair(MultiIndex(tuple(n)), MultiIndex(tuple(m)))
        if pair.relation != "balanced":
            raise ValueError("pair is not balanced: need |n| = |m|")
        return pair

    def to_json_dict(self) -> dict:
        return {"n": list(self.n.parts), "m": list(self.m.parts)}


@dataclass(frozen=True)
class Normalization:
    """Which closing row to append: type I (unit moment against x^{m_k} w2_k)
    or type II (A_k monic of degree n_k - 1)."""

    kind: Literal["I", "II"]
    index: int

    def __post_init__(self):
        if self.kind not in ("I", "II"):
            raise ValueError("normalization kind must be 'I' or 'II'")
        if self.index < 0:
            raise ValueError("normalization index must be >= 0")

    @staticmethod
    def type1(k: int) -> "Normalization":
        return Normalization("I", k)

    @staticmethod
    def type2(k: int) -> "Normalization":
        return Normalization("II", k)


# ---------------------------------------------------------------------------
# Enumeration and assembly


def column_layout(n_parts: Sequence[int]) -> list[tuple[int, int]]:
    """Unknown order: (weight l, shifted power i), i < n_l, l-major."""
    return [(l, i) for l, deg in enumerate(n_parts) for i in range(deg)]


def row_layout(m_parts: Sequence[int]) -> list[tuple[int, int]]:
    """Condition order: (weight k, shifted power j), j < m_k, k-major."""
    return [(k, j) for k, deg in enumerate(m_parts) for j in range(deg)]


def _matrix_for_parts(n_parts: Sequence[int], m_parts: Sequence[int],
                      entry: Callable[[int, int, int], float]) -> np.ndarray:
    cols = column_layout(n_parts)
    rows = row_layout(m_parts)
    M = np.empty((len(rows), len(cols)))
    for r, (k, j) in enumerate(rows):
        for c, (l, i) in enumerate(cols):
            M[r, c] = entry(l, k, i + j)
    return M


def assemble_orthogonality_matrix(pair: MultiIndexPair,
                                  table: ProductMomentTable) -> np.ndarray:
    """The |m| x |n| matrix of the orthogonality conditions.

    Row (k, j) tests against u^j w2_k; column (l, i) multiplies coefficient
    i of A_l; the entry is the table moment of order i + j for the pair
    (w1_l, w2_k).
    """
    need = (max(pair.n.parts) - 1) + max(max(pair.m.parts) - 1, 0)
    if need > table.kmax:
        raise ValueError(f"table kmax={table.kmax} too small, need {need}")
    if len(pair.n) != len(table.w1) or len(pair.m) != len(table.w2):
        raise ValueError("pair length does not match the table's families")
    return _matrix_for_parts(pair.n.parts, pair.m.parts, table.entry)


def moment_table_for(pair: MultiIndexPair, w1: WeightFamily, w2: WeightFamily,
                     *, margin: int = 4, center: float | None = None,
                     scale: float | None = None) -> ProductMomentTable:
    """A table sized for the pair, its +-e_k neighbors, and normalization rows."""
    kmax = max(pair.n.parts) + max(pair.m.parts) + margin
    return build_moment_table(w1, w2, kmax, center=center, scale=scale)


def _normalization_row(pair: MultiIndexPair, table: ProductMomentTable,
                       normalization: Normalization) -> tuple[np.ndarray, float]:
    cols = column_layout(pair.n.parts)
    row = np.zeros(len(cols))
    c, s = table.center, table.scale
    if normalization.kind == "II":
        k = normalization.index
        if k >= len(pair.n):
            raise ValueError("type II index out of range")
        target = cols.index((k, pair.n[k] - 1))
        row[target] = 1.0
        return row, s ** (pair.n[k] - 1)
    k = normalization.index
    if k >= len(pair.m):
        raise ValueError("type I index out of range")
    mk = pair.m[k]
    # integral Q x^{m_k} w2_k dx = 1, with x^{m_k} expanded in the shifted basis.
    for cidx, (l, i) in enumerate(cols):
        acc = 0.0
        for t in range(mk + 1):
            acc += math.comb(mk, t) * c ** (mk - t) * s**t * table.entry(l, k, i + t)
        row[cidx] = acc
    return row, 1.0


@dataclass(frozen=True)
class MixedMopSolution:
    """Solved coefficients of the form Q(x) = sum_l A_l(x) w1_l(x).

    coeffs are per-weight arrays in the shifted-scaled basis of (center,
    scale); residual is the scale-normalized max violation of the solved
    linear system recomputed after any exactness post-processing.
    """

    pair: MultiIndexPair
    normalization: Normalization
    weights: WeightFamily
    center: float
    scale: float
    coeffs: tuple[np.ndarray, ...]
    residual: float
    precision: str = "double"

    def _u(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def poly_values(self, x) -> np.ndarray:
        """A_l(x) for every l, stacked; accepts real or complex input."""
        x = np.asarray(x)
        u = (x - self.center) / self.scale
        return np.stack([P.polyval(u, cf) for cf in self.coeffs])

    def form(self, x) -> np.ndarray:
        """Q(x) = sum_l A_l(x) w1_l(x) on real input."""
        x = np.asarray(x, dtype=float)
        u = self._u(x)
        out = np.zeros_like(u)
        for cf, w in zip(self.coeffs, self.weights):
            out = out + P.polyval(u, cf) * w(x)
        return out

    def form_derivative(self, x) -> np.ndarray:
        """d/dx of the form; needs gaussian weights (analytic derivative)."""
        x = np.asarray(x, dtype=float)
        u = self._u(x)
        out = np.zeros_like(u)
        for cf, w in zip(self.coeffs, self.weights):
            dcf = P.polyder(cf) if len(cf) > 1 else np.zeros(1)
            out = out + (P.polyval(u, dcf) / self.scale) * w(x)
            out = out + P.polyval(u, cf) * w.log_derivative_factor(x)
        return out

    def polynomials_original(self) -> list[np.ndarray]:
        """Coefficient arrays of A_l in the plain monomial basis.

        The type II contract makes the selected polynomial monic exactly;
        the basis change can smudge the leading 1 by a rounding ulp, so it
        is reinstated here.
        """
        out = [shifted_to_monomial(cf, self.center, self.scale)
               for cf in self.coeffs]
        if self.normalization.kind == "II":
            k = self.normalization.index
            if len(out[k]) > 0:
                out[k][-1] = 1.0
        return out

    def to_json_dict(self) -> dict:
        return {
            "pair": self.pair.to_json_dict(),
            "normalization": {"kind": self.normalization.kind,
                              "index": self.normalization.index},
            "basis": {"center": self.center, "scale": self.scale},
            "coefficients_original": [list(map(float, cf))
                                      for cf in self.polynomials_original()],
            "coefficients_shifted": [list(map(float, cf)) for cf in self.coeffs],
            "residual": self.residual,
            "precision": self.precision,
        }


def shifted_to_monomial(coeffs: np.ndarray, center: float, scale: float) -> np.ndarray:
    """Rewrite sum_i c_i ((x-center)/scale)^i as plain monomial coefficients."""
    lin = np.array([-center / scale, 1.0 / scale])
    out = np.zeros(1)
    for c in reversed(np.asarray(coeffs, dtype=float)):
        out = P.polyadd(P.polymul(out, lin), [c])
    return out


def numerical_rank(M: np.ndarray, *, rtol: float = RANK_RTOL) -> tuple[int, np.ndarray]:
    """(rank, singular values) with the max(shape)*s_max*rtol threshold."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0, np.zeros(0)
    svals = np.linalg.svd(M, compute_uv=False)
    tau = max(M.shape) * svals[0] * rtol
    return int(np.sum(svals > tau)), svals


def solve_mixed(pair: MultiIndexPair, table: ProductMomentTable,
                normalization: Normalization, *,
                precision: str = "double") -> MixedMopSolution:
    """Solve the square (conditions + normalization) system for the pair.

    Raises NotNormalizable, carrying a NormalityReport, when the system is
    singular at the working rank threshold.  precision='extended' reruns
    moments and the solve in high-precision arithmetic (gaussian families
    only) with the tighter threshold.
    """
    if pair.relation != "defining":
        raise ValueError("solve_mixed needs a defining pair (|n| = |m| + 1)")
    if precision not in ("double", "extended"):
        raise ValueError("precision must be 'double' or 'extended'")
    if precision == "extended":
        return _solve_mixed_extended(pair, table, normalization)

    M = assemble_orthogonality_matrix(pair, table)
    row, rhs_last = _normalization_row(pair, table, normalization)
    A = np.vstack([M, row[None, :]])
    b = np.zeros(A.shape[0])
    b[-1] = rhs_last

    U, svals, Vt = np.linalg.svd(A)
    tau = max(A.shape) * svals[0] * RANK_RTOL
    if svals[-1] <= tau:
        report = check_normality(pair, table)
        raise NotNormalizable(
            f"singular system for pair n={pair.n.parts} m={pair.m.parts} "
            f"({normalization.kind}, k={normalization.index})", report=report)
    x = Vt.T @ ((U.T @ b) / svals)
    r = b - A @ x
    x = x + Vt.T @ ((U.T @ r) / svals)

    cols = column_layout(pair.n.parts)
    if normalization.kind == "II":
        k = normalization.index
        lead = cols.index((k, pair.n[k] - 1))
        x = x * (rhs_last / x[lead])
        x[lead] = rhs_last
    scale_res = max(1.0, float(np.max(np.abs(A))) * float(np.max(np.abs(x))))
    residual = float(np.max(np.abs(A @ x - b))) / scale_res

    coeffs = _split_coefficients(x, pair.n.parts)
    return MixedMopSolution(pair=pair, normalization=normalization,
                            weights=table.w1, center=table.center,
                            scale=table.scale, coeffs=coeffs,
                            residual=residual, precision="double")


def _split_coefficients(x: np.ndarray, n_parts: Sequence[int]) -> tuple[np.ndarray, ...]:
    out = []
    pos = 0
    for deg in n_parts:
        out.append(np.array(x[pos:pos + deg], dtype=float))
        pos += deg
    return tuple(out)


# ---------------------------------------------------------------------------
# Extended precision


def _mp_entry_provider(w1: WeightFamily, w2: WeightFamily, kmax: int,
                       center: float, scale: float):
    import mpmath

    if not (w1.all_gaussian and w2.all_gaussian):
        raise ValueError("extended precision requires all-gaussian families")

    cache: dict[tuple[int, int], list] = {}

    def moments(j: int, l: int) -> list:
        key = (j, l)
        if key not in cache:
            a, b = w1[j], w2[l]
            v1, v2 = mpmath.mpf(a.variance), mpmath.mpf(b.variance)
            c1, c2 = mpmath.mpf(a.center), mpmath.mpf(b.center)
            v = v1 + v2
            var = v1 * v2 / v
            mean = (c1 * v2 + c2 * v1) / v
            amp = mpmath.mpf(a.amplitude) * mpmath.mpf(b.amplitude) * \
                mpmath.e**(-(c1 - c2)**2 / (2 * v))
            mu = (mean - mpmath.mpf(center)) / mpmath.mpf(scale)
            sig2 = var / mpmath.mpf(scale)**2
            vals = [amp * mpmath.mpf(scale) * mpmath.sqrt(2 * mpmath.pi * sig2)]
            if kmax >= 1:
                vals.append(mu * vals[0])
            for k in range(2, kmax + 1):
                vals.append(mu * vals[k - 1] + (k - 1) * sig2 * vals[k - 2])
            cache[key] = vals
        return cache[key]

    def entry(l: int, k: int, power: int):
        return moments(l, k)[power]

    return entry


def _solve_mixed_extended(pair: MultiIndexPair, table: ProductMomentTable,
                          normalization: Normalization) -> MixedMopSolution:
    import mpmath

    with mpmath.workdps(EXTENDED_DPS):
        c, s = table.center, table.scale
        kmax = max(pair.n.parts) + max(pair.m.parts) + 2
        entry = _mp_entry_provider(table.w1, table.w2, kmax, c, s)
        cols = column_layout(pair.n.parts)
        rows = row_layout(pair.m.parts)
        size = len(cols)
        A = mpmath.zeros(size, size)
        b = mpmath.matrix(size, 1)
        for r, (k, j) in enumerate(rows):
            for cc, (l, i) in enumerate(cols):
                A[r, cc] = entry(l, k, i + j)
        if normalization.kind == "II":
            k = normalization.index
            A[size - 1, cols.index((k, pair.n[k] - 1))] = mpmath.mpf(1)
            b[size - 1] = mpmath.mpf(s) ** (pair.n[k] - 1)
        else:
            k = normalization.index
            mk = pair.m[k]
            for cc, (l, i) in enumerate(cols):
                acc = mpmath.mpf(0)
                for t in range(mk + 1):
                    acc += (mpmath.binomial(mk, t) * mpmath.mpf(c) ** (mk - t)
                            * mpmath.mpf(s) ** t * entry(l, k, i + t))
                A[size - 1, cc] = acc
            b[size - 1] = mpmath.mpf(1)

        svals = mpmath.svd_r(A.copy(), compute_uv=False)
        smax = max(svals[i] for i in range(size))
        smin = min(svals[i] for i in range(size))
        if smin <= size * smax * mpmath.mpf(EXTENDED_RANK_RTOL):
            report = check_normality(pair, table)
            raise NotNormalizable(
                f"singular system (extended) for pair n={pair.n.parts} "
                f"m={pair.m.parts}", report=report)
        x = mpmath.lu_solve(A, b)
        resid = A * x - b
        scale_res = max(mpmath.mpf(1), smax * mpmath.norm(x, p=mpmath.inf))
        residual = float(mpmath.norm(resid, p=mpmath.inf) / scale_res)
        xs = np.array([float(x[i]) for i in range(size)])

    coeffs = _split_coefficients(xs, pair.n.parts)
    return MixedMopSolution(pair=pair, normalization=normalization,
                            weights=table.w1, center=table.center,
                            scale=table.scale, coeffs=coeffs,
                            residual=residual, precision="extended")


# ---------------------------------------------------------------------------
# Normality


@dataclass(frozen=True)
class NormalityReport:
    """Rank-based answers to which solves the pair admits.

    kernel_dimension is dim(F_n intersect G_m-perp); a defining pair is
    normal exactly when it equals 1.  The admissibility flags test the
    shifted pairs whose triviality licenses each normalization.
    """

    pair: MultiIndexPair
    f_dimension_ok: bool
    kernel_dimension: int
    orthogonality_rank: int
    typeI_admissible: tuple[bool, ...]
    typeII_admissible: tuple[bool, ...]
    condition_estimate: float

    @property
    def normal(self) -> bool:
        return self.kernel_dimension == 1

    def to_json_dict(self) -> dict:
        return {
            "pair": self.pair.to_json_dict(),
            "f_dimension_ok": self.f_dimension_ok,
            "kernel_dimension": self.kernel_dimension,
            "orthogonality_rank": self.orthogonality_rank,
            "normal": self.normal,
            "typeI_admissible": list(self.typeI_admissible),
            "typeII_admissible": list(self.typeII_admissible),
            "condition_estimate": self.condition_estimate,
        }


def _table_with_kmax(table: ProductMomentTable, kmax: int) -> ProductMomentTable:
    if table.kmax >= kmax:
        return table
    return build_moment_table(table.w1, table.w2, kmax,
                              center=table.center, scale=table.scale)


def check_normality(pair: MultiIndexPair, table: ProductMomentTable) -> NormalityReport:
    """Rank tests behind normality and both normalization admissibilities."""
    need = max(pair.n.parts) + max(pair.m.parts) + 2
    table = _table_with_kmax(table, need)

    M = _matrix_for_parts(pair.n.parts, pair.m.parts, table.entry)
    rank, svals = numerical_rank(M)
    kernel_dim = pair.n.size - rank
    if svals.size and svals[-1] > 0 and rank == min(M.shape):
        cond = float(svals[0] / svals[min(M.shape) - 1])
    elif svals.size:
        cond = math.inf
    else:
        cond = 1.0

    # F_n must be |n|-dimensional: Gram matrix of the raw basis u^i w1_l.
    gram_kmax = 2 * max(pair.n.parts)
    ftable = build_moment_table(table.w1, table.w1, gram_kmax,
                                center=table.center, scale=table.scale)
    G = _matrix_for_parts(pair.n.parts, pair.n.parts, ftable.entry)
    grank, _ = numerical_rank(G)
    f_ok = grank == pair.n.size

    typeI = []
    for k in range(len(pair.m)):
        m_aug = list(pair.m.parts)
        m_aug[k] += 1
        aug = _matrix_for_parts(pair.n.parts, m_aug, table.entry)
        r, _ = numerical_rank(aug)
        typeI.append(r == pair.n.size)

    typeII = []
    for k in range(len(pair.n)):
        n_red = list(pair.n.parts)
        n_red[k] -= 1
        red = _matrix_for_parts(n_red, pair.m.parts, table.entry)
        r, _ = numerical_rank(red)
        typeII.append(r == pair.n.size - 1)

    return NormalityReport(pair=pair, f_dimension_ok=f_ok,
                           kernel_dimension=kernel_dim,
                           orthogonality_rank=rank,
                           typeI_admissible=tuple(typeI),
                           typeII_admissible=tuple(typeII),
                           condition_estimate=cond)


# ---------------------------------------------------------------------------
# Classical reductions (single-weight-side specializations)


def _lebesgue_box(families: Sequence[WeightFamily]) -> Weight:
    """The constant weight 1 truncated where the gaussian mass lives."""
    from .weights import basis_center_scale
    c, s = basis_center_scale(*families)
    lo, hi = c - 12.0 * s, c + 12.0 * s

    def box(x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= lo) & (x <= hi), 1.0, 0.0)

    return Weight.tabulated(box, (lo, hi))


def solve_type1_classical(weights: WeightFamily, n: Sequence[int]) -> MixedMopSolution:
    """Type I multiple orthogonality against plain monomials.

    Q = sum_l A_l w_l with deg A_l <= n_l - 1, integral Q x^j dx = 0 for
    j <= |n| - 2, and integral Q x^{|n|-1} dx = 1.  Realized as a mixed
    solve against a single truncated-constant test weight.
    """
    weights = weights if isinstance(weights, WeightFamily) else WeightFamily(weights)
    n = MultiIndex(tuple(n))
    box = WeightFamily([_lebesgue_box([weights])])
    pair = MultiIndexPair.defining(n.parts, (n.size - 1,))
    table = moment_table_for(pair, weights, box)
    return solve_mixed(pair, table, Normalization.type1(0))


def solve_type2_classical(weights: WeightFamily, m: Sequence[int]) -> MixedMopSolution:
    """The monic type II multiple orthogonal polynomial for the index m.

    P monic of degree |m| with integral P(x) x^j w_k(x) dx = 0 for j < m_k.
    Returned as a mixed solution whose single polynomial is P (the constant
    box weight carries it); .polynomials_original()[0] are its coefficients.
    """
    weights = weights if isinstance(weights, WeightFamily) else WeightFamily(weights)
    m = MultiIndex(tuple(m))
    box = WeightFamily([_lebesgue_box([weights])])
    pair = MultiIndexPair.defining((m.size + 1,), m.parts)
    table = moment_table_for(pair, box, weights)
    return solve_mixed(pair, table, Normalization.type2(0))
