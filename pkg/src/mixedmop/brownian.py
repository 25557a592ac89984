"""Non-intersecting Brownian motions with several starting and ending points.

Walkers start at points a_j (multiplicity n_j), end at b_k (multiplicity
m_k), and are observed at an intermediate time t.  The positions form a
determinantal process whose kernel is the projection kernel of the mixed
orthogonality problem with Gaussian transition weights.  This module wires
the configuration to the weight families, provides the joint density in
Karlin-McGregor form with a certified normalization constant, the m-point
correlation functions, and two Monte Carlo validators: a Metropolis sampler
of the joint density and a bridge simulator with grid non-intersection
rejection.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .kernel import BiorthogonalSystem, build_biorthogonal, kernel_direct_grid
from .mop import MultiIndexPair
from .weights import (AccuracyError, WeightFamily, _leggauss,
                      product_moment, transition_weight)

MAX_QUADRATURE_WALKERS = 4
MCMC_BURN_IN = 10_000
MCMC_THIN = 10
MCMC_CHAINS = 4
ACCEPTANCE_WINDOW = (0.23, 0.40)
PSRF_LIMIT = 1.05
PATH_MIN_GRID = 64
PATH_MIN_ACCEPTANCE = 1e-5


@dataclass(frozen=True)
class BrownianConfig:
    """Start/end points with multiplicities, observation time, and the
    variance convention (True scales the transition variance by 1/n)."""

    starts: tuple[tuple[float, int], ...]
    ends: tuple[tuple[float, int], ...]
    time: float
    variance_scaling: bool = True

    def __post_init__(self):
        starts = tuple((float(a), int(k)) for a, k in self.starts)
        ends = tuple((float(b), int(k)) for b, k in self.ends)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "ends", ends)
        if not starts or not ends:
            raise ValueError("starts and ends must be nonempty")
        for label, pts in (("starts", starts), ("ends", ends)):
            if any(k < 1 for _, k in pts):
                raise ValueError(f"{label} multiplicities must be >= 1")
            xs = [a for a, _ in pts]
            if any(x2 <= x1 for x1, x2 in zip(xs, xs[1:])):
                raise ValueError(f"{label} points must be strictly increasing")
        if sum(k for _, k in starts) != sum(k for _, k in ends):
            raise ValueError("total start and end multiplicities must agree "
                             "(paths are conserved)")
        if not 0.0 < self.time < 1.0:
            raise ValueError("observation time must lie strictly in (0, 1)")

    @property
    def walkers(self) -> int:
        return sum(k for _, k in self.starts)

    @property
    def n_scale(self) -> int:
        return self.walkers if self.variance_scaling else 1

    @property
    def distinct(self) -> bool:
        return all(k == 1 for _, k in self.starts + self.ends)

    def flat_starts(self) -> np.ndarray:
        return np.repeat([a for a, _ in self.starts],
                         [k for _, k in self.starts]).astype(float)

    def flat_ends(self) -> np.ndarray:
        return np.repeat([b for b, _ in self.ends],
                         [k for _, k in self.ends]).astype(float)

    def bridge_sd(self) -> float:
        t = self.time
        return math.sqrt(t * (1.0 - t) / self.n_scale)

    def bridge_box(self, sigmas: float = 8.0) -> tuple[float, float]:
        """Box containing the observed positions to the stated number of
        bridge standard deviations (i-th ordered start pairs with i-th end)."""
        t = self.time
        means = (1.0 - t) * self.flat_starts() + t * self.flat_ends()
        sd = self.bridge_sd()
        return float(means.min() - sigmas * sd), float(means.max() + sigmas * sd)

    @classmethod
    def from_json_dict(cls, d: dict) -> "BrownianConfig":
        try:
            starts = tuple((float(a), int(k)) for a, k in d["starts"])
            ends = tuple((float(b), int(k)) for b, k in d["ends"])
            t = float(d["t"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"invalid brownian config: {exc}") from exc
        scaling = bool(d.get("n_scaling", True))
        return cls(starts=starts, ends=ends, time=t, variance_scaling=scaling)

    def to_json_dict(self) -> dict:
        return {
            "starts": [[a, k] for a, k in self.starts],
            "ends": [[b, k] for b, k in self.ends],
            "t": self.time,
            "n_scaling": self.variance_scaling,
        }


def config_to_weights(config: BrownianConfig
                      ) -> tuple[WeightFamily, WeightFamily, MultiIndexPair]:
    """Gaussian transition weights at the observation time: p weights
    centered at the starts with variance t/n_scale, q at the ends with
    variance (1-t)/n_scale, and the balanced multi-index pair of
    multiplicities."""
    t = config.time
    ns = config.n_scale
    w1 = WeightFamily([transition_weight(t, a, ns) for a, _ in config.starts])
    w2 = WeightFamily([transition_weight(1.0 - t, b, ns) for b, _ in config.ends])
    pair = MultiIndexPair.balanced([k for _, k in config.starts],
                                   [k for _, k in config.ends])
    return w1, w2, pair


# ---------------------------------------------------------------------------
# Karlin-McGregor joint density


@dataclass(frozen=True)
class KarlinMcGregorDensity:
    """Joint position density (1/Z) det[w1_j(x_k)] det[w2_j(x_k)].

    The determinant product is permutation-symmetric, so evaluation accepts
    coordinates in any order.  z_n comes from tensorized quadrature on the
    bridge box; z_n_gram is the independent cross-check n! det[int w1_i w2_j].
    """

    config: BrownianConfig
    w1: WeightFamily
    w2: WeightFamily
    z_n: float
    z_n_accuracy: float
    z_n_gram: float
    box: tuple[float, float]

    @property
    def walkers(self) -> int:
        return self.config.walkers

    def _dets(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        flat = X.reshape(-1)
        W1 = self.w1.values(flat).reshape(len(self.w1), *X.shape)
        W2 = self.w2.values(flat).reshape(len(self.w2), *X.shape)
        # (batch, row j, column k) = weight_j(x_k)
        d1 = np.linalg.det(np.moveaxis(W1, 0, -2))
        d2 = np.linalg.det(np.moveaxis(W2, 0, -2))
        return d1, d2

    def density(self, positions) -> float | np.ndarray:
        X = np.asarray(positions, dtype=float)
        scalar = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[-1] != self.walkers:
            raise ValueError(f"expected {self.walkers} coordinates")
        d1, d2 = self._dets(X)
        vals = d1 * d2 / self.z_n
        return float(vals[0]) if scalar else vals

    def log_eval(self, positions) -> float:
        X = np.asarray(positions, dtype=float)
        if X.ndim != 1 or X.size != self.walkers:
            raise ValueError(f"expected {self.walkers} coordinates")
        W1 = self.w1.values(X)
        W2 = self.w2.values(X)
        s1, l1 = np.linalg.slogdet(W1.T)
        s2, l2 = np.linalg.slogdet(W2.T)
        if s1 * s2 <= 0.0:
            return -math.inf
        return float(l1 + l2 - math.log(self.z_n))

    __call__ = density


def _det_on_grid(values_1d: np.ndarray) -> np.ndarray:
    """det[f_i(x_{j_i})] on the tensor grid, by signed permutation sums.

    values_1d has shape (n, d); the result has shape (d,) * n.  Practical
    only for the small n this module supports.
    """
    n, d = values_1d.shape
    letters = "abcdefgh"[:n]
    spec = ",".join(letters) + "->" + letters
    out = np.zeros((d,) * n)
    for perm in itertools.permutations(range(n)):
        sign = _permutation_sign(perm)
        out += sign * np.einsum(spec, *[values_1d[perm[j]] for j in range(n)])
    return out


def _permutation_sign(perm: Sequence[int]) -> float:
    sign = 1.0
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _tensor_normalization(w1: WeightFamily, w2: WeightFamily,
                          box: tuple[float, float], n: int, *,
                          rel_tol: float = 1e-9) -> tuple[float, float]:
    """integral over box^n of det[w1_i(x_j)] det[w2_i(x_j)], by per-axis
    Gauss-Legendre with degree doubling until the value settles."""
    lo, hi = box
    degrees = (16, 32, 48) if n == 4 else (16, 32, 64, 128)
    prev = None
    for d in degrees:
        nodes, wts = _leggauss(d)
        xs = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes
        scale = (0.5 * (hi - lo)) ** n
        F = _det_on_grid(w1.values(xs))
        G = _det_on_grid(w2.values(xs))
        M = F * G
        for _ in range(n):
            M = np.tensordot(wts, M, axes=(0, 0))
        value = float(M) * scale
        if prev is not None and abs(value - prev) <= rel_tol * max(abs(value), 1e-300):
            return value, abs(value - prev)
        prev = value
    achieved = abs(value - prev) if prev is not None else math.inf
    raise AccuracyError("normalization quadrature did not settle",
                        value=value, achieved=achieved)


def gram_normalization(w1: WeightFamily, w2: WeightFamily, n: int) -> float:
    """n! det[ integral w1_i w2_j ], the Andreief identity route."""
    G = np.array([[product_moment(wa, wb, 0).value for wb in w2] for wa in w1])
    return float(math.factorial(n) * np.linalg.det(G))


def km_density(config: BrownianConfig, *, rel_tol: float = 1e-9
               ) -> KarlinMcGregorDensity:
    """Joint density for distinct points.  The normalization is computed by
    tensor quadrature (n <= 4) and cross-checked against the Gram route."""
    if not config.distinct:
        raise ValueError("the Karlin-McGregor determinant form needs all "
                         "multiplicities equal to 1; use the kernel for "
                         "confluent configurations")
    n = config.walkers
    if n > MAX_QUADRATURE_WALKERS:
        raise AccuracyError(
            f"normalization quadrature is certified only for n <= "
            f"{MAX_QUADRATURE_WALKERS} walkers (got {n}); larger n would "
            "need importance sampling with a reported error")
    w1, w2, _ = config_to_weights(config)
    box = config.bridge_box()
    z, z_acc = _tensor_normalization(w1, w2, box, n, rel_tol=rel_tol)
    z_gram = gram_normalization(w1, w2, n)
    if z <= 0.0:
        raise AccuracyError(f"normalization came out nonpositive ({z:.3e})")
    return KarlinMcGregorDensity(config=config, w1=w1, w2=w2, z_n=z,
                                 z_n_accuracy=z_acc, z_n_gram=z_gram, box=box)


# ---------------------------------------------------------------------------
# Correlation kernel and m-point functions


def correlation_kernel(config: BrownianConfig) -> BiorthogonalSystem:
    """Projection kernel of the position process (multiplicities allowed)."""
    w1, w2, pair = config_to_weights(config)
    return build_biorthogonal(pair, w1, w2)


def r_m(system: BiorthogonalSystem, points) -> float:
    """m-point correlation function det[K(x_i, x_j)], m <= total walkers."""
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.size > system.dimension:
        raise ValueError(f"at most {system.dimension} points")
    K = kernel_direct_grid(system, pts, pts)
    if pts.size == 1:
        return float(K[0, 0])
    return float(np.linalg.det(K))


def r1_grid(system: BiorthogonalSystem, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    F = system.f_values(xs)
    G = system.g_values(xs)
    return np.einsum("an,ab,bn->n", F, system.transform.T, G)


# ---------------------------------------------------------------------------
# Metropolis sampling of the joint density


@dataclass(frozen=True)
class PositionSamples:
    """Draws from the joint density with the chain diagnostics attached."""

    samples: np.ndarray
    acceptance_rate: float
    proposal_scale: np.ndarray
    psrf: tuple[float, ...]
    converged: bool
    seed: int
    chains: int
    burn_in: int
    thinning: int

    @property
    def warning(self) -> bool:
        return not self.converged


def _chain_blocks(seed: int, chains: int, dim: int):
    """Per-chain RNG streams from one seed; each yields (steps, normal
    proposals, uniform thresholds) blocks in lockstep order."""
    streams = [np.random.Generator(np.random.PCG64(s))
               for s in np.random.SeedSequence(seed).spawn(chains)]

    def draw(n_steps: int):
        props = np.stack([g.standard_normal((n_steps, dim)) for g in streams],
                         axis=1)
        us = np.stack([g.uniform(size=n_steps) for g in streams], axis=1)
        return props, us

    return draw


def sample_positions(density: KarlinMcGregorDensity, count: int, seed: int, *,
                     burn_in: int = MCMC_BURN_IN, thinning: int = MCMC_THIN,
                     chains: int = MCMC_CHAINS) -> PositionSamples:
    """Random-walk Metropolis on the symmetrized joint density.

    The chains run in lockstep as one vectorized walk; proposal scales adapt
    per chain during burn-in toward the acceptance window, then freeze.
    Convergence is judged by split-chain potential scale reduction on the
    sorted coordinates (sorting removes the label-switching symmetry).
    """
    n = density.walkers
    cfg = density.config
    t = cfg.time
    means = (1.0 - t) * cfg.flat_starts() + t * cfg.flat_ends()
    sd = cfg.bridge_sd()

    per_chain = -(-count // chains)
    keep_steps = per_chain * thinning
    total_steps = burn_in + keep_steps
    draw = _chain_blocks(seed, chains, n)

    X = means[None, :] + 0.4 * sd * draw(1)[0][0]
    dens = density.density(X)
    scale = np.full(chains, sd, dtype=float)

    kept = np.empty((per_chain, chains, n))
    accepted_tail = 0
    window_acc = np.zeros(chains)
    window_len = 0
    step = 0
    kept_i = 0
    while step < total_steps:
        block = min(512, total_steps - step)
        props, us = draw(block)
        for b in range(block):
            prop = X + scale[:, None] * props[b]
            pdens = density.density(prop)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(dens > 0.0, pdens / dens, np.inf)
            take = us[b] < ratio
            X = np.where(take[:, None], prop, X)
            dens = np.where(take, pdens, dens)
            window_acc += take
            window_len += 1
            if step < burn_in:
                if window_len == 200:
                    rate = window_acc / window_len
                    lo, hi = ACCEPTANCE_WINDOW
                    adjust = np.exp(0.6 * (rate - 0.5 * (lo + hi)))
                    scale = np.clip(scale * adjust, 1e-4 * sd, 50.0 * sd)
                    window_acc[:] = 0.0
                    window_len = 0
            else:
                accepted_tail += int(take.sum())
                if (step - burn_in) % thinning == thinning - 1:
                    kept[kept_i] = X
                    kept_i += 1
            step += 1
            if step == burn_in:
                window_acc[:] = 0.0
                window_len = 0

    acc_rate = accepted_tail / (keep_steps * chains)
    psrf = _split_chain_psrf(np.sort(kept, axis=-1))
    samples = kept.reshape(per_chain * chains, n)[:count]
    converged = all(r <= PSRF_LIMIT for r in psrf)
    if not converged:
        warnings.warn(f"position sampler may not have converged: "
                      f"max PSRF {max(psrf):.4f} > {PSRF_LIMIT}")
    return PositionSamples(samples=samples, acceptance_rate=float(acc_rate),
                           proposal_scale=scale, psrf=psrf, converged=converged,
                           seed=int(seed), chains=chains, burn_in=burn_in,
                           thinning=thinning)


def _split_chain_psrf(kept_sorted: np.ndarray) -> tuple[float, ...]:
    """Potential scale reduction per coordinate, each chain split in half."""
    steps, chains, n = kept_sorted.shape
    half = steps // 2
    if half < 2:
        # too few draws to estimate within-segment variance
        return tuple(math.inf for _ in range(n))
    segs = np.concatenate([kept_sorted[:half], kept_sorted[half:2 * half]],
                          axis=1)
    m, length = segs.shape[1], segs.shape[0]
    out = []
    for j in range(n):
        x = segs[:, :, j]
        seg_means = x.mean(axis=0)
        seg_vars = x.var(axis=0, ddof=1)
        W = seg_vars.mean()
        B = length * seg_means.var(ddof=1)
        var_plus = (length - 1) / length * W + B / length
        out.append(float(math.sqrt(var_plus / W)) if W > 0 else math.inf)
    return tuple(out)


# ---------------------------------------------------------------------------
# Bridge simulation with grid non-intersection


@dataclass(frozen=True)
class PathBundles:
    """Accepted bridge bundles on the time grid (bundle, walker, time)."""

    times: np.ndarray
    paths: np.ndarray
    acceptance_rate: float
    attempted: int
    seed: int

    @property
    def count(self) -> int:
        return self.paths.shape[0]


def sample_paths(config: BrownianConfig, time_grid, count: int, seed: int
                 ) -> PathBundles:
    """Independent Brownian bridges kept only when strictly ordered at every
    grid time.  This is a grid approximation of non-intersection: crossings
    between grid times go undetected, so the positions sampler remains the
    authoritative validator.
    """
    if not config.distinct:
        raise ValueError("bridge sampling needs distinct start and end points")
    n = config.walkers
    if n > MAX_QUADRATURE_WALKERS:
        raise ValueError(f"at most {MAX_QUADRATURE_WALKERS} walkers")
    times = np.asarray(time_grid, dtype=float)
    if times.ndim != 1 or times.size < PATH_MIN_GRID:
        raise ValueError(f"time grid needs at least {PATH_MIN_GRID} points")
    if times[0] != 0.0 or times[-1] != 1.0 or np.any(np.diff(times) <= 0.0):
        raise ValueError("time grid must increase strictly from 0 to 1")

    a = config.flat_starts()
    b = config.flat_ends()
    dts = np.diff(times)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    accepted = []
    attempted = 0
    batch = max(64, 4 * count)
    while sum(x.shape[0] for x in accepted) < count:
        incr = rng.standard_normal((batch, n, dts.size)) * np.sqrt(
            dts / config.n_scale)
        W = np.concatenate([np.zeros((batch, n, 1)), np.cumsum(incr, axis=-1)],
                           axis=-1)
        drift = W[:, :, -1:] - (b - a)[None, :, None]
        paths = a[None, :, None] + W - times[None, None, :] * drift
        ok = np.all(np.diff(paths, axis=1) > 0.0, axis=(1, 2)) if n > 1 \
            else np.ones(batch, dtype=bool)
        attempted += batch
        accepted.append(paths[ok])
        got = sum(x.shape[0] for x in accepted)
        rate = got / attempted
        if attempted >= 200_000 and rate < PATH_MIN_ACCEPTANCE:
            raise AccuracyError(
                f"bundle acceptance rate {rate:.2e} is below "
                f"{PATH_MIN_ACCEPTANCE:.0e}; starting or ending points are "
                "probably too close together for grid rejection to work")
    total_ok = sum(x.shape[0] for x in accepted)
    paths = np.concatenate(accepted, axis=0)[:count]
    return PathBundles(times=times, paths=paths,
                       acceptance_rate=total_ok / attempted,
                       attempted=attempted, seed=int(seed))


# ---------------------------------------------------------------------------
# Goodness of fit against the kernel route


def equal_mass_bins(system: BiorthogonalSystem, box: tuple[float, float],
                    bins: int = 40, resolution: int = 4096) -> np.ndarray:
    """Bin edges carrying equal r1/n mass, from a dense trapezoid CDF.

    Outer edges are pushed to +-inf so every draw lands in some bin.
    """
    lo, hi = box
    xs = np.linspace(lo, hi, resolution)
    dens = np.maximum(r1_grid(system, xs), 0.0)
    cdf = np.concatenate([[0.0], np.cumsum(
        0.5 * (dens[1:] + dens[:-1]) * np.diff(xs))])
    cdf /= cdf[-1]
    qs = np.arange(1, bins) / bins
    inner = np.interp(qs, cdf, xs)
    return np.concatenate([[-np.inf], inner, [np.inf]])


def chi_square_report(samples: np.ndarray, system: BiorthogonalSystem,
                      box: tuple[float, float], bins: int = 40) -> dict:
    """Chi-squared comparison of pooled sample coordinates against the
    one-point correlation, on equal-mass bins."""
    pooled = np.asarray(samples, dtype=float).ravel()
    edges = equal_mass_bins(system, box, bins)
    observed, _ = np.histogram(pooled, bins=edges)
    expected = np.full(bins, pooled.size / bins)
    statistic = float(np.sum((observed - expected) ** 2 / expected))
    dof = bins - 1
    p_value = float(stats.chi2.sf(statistic, dof))
    return {
        "bins": bins,
        "points": int(pooled.size),
        "statistic": statistic,
        "degrees_of_freedom": dof,
        "p_value": p_value,
        "observed": observed.tolist(),
        "expected_per_bin": float(pooled.size / bins),
    }


# ---------------------------------------------------------------------------
# CSV writers


def write_density_grid_csv(path: str, xs, r1_values) -> None:
    from ._util import write_csv
    write_csv(path, ("x", "r1"), list(zip(xs, r1_values)))


def write_samples_csv(path: str, samples: np.ndarray) -> None:
    from ._util import write_csv
    n = samples.shape[1]
    header = tuple(f"x{i + 1}" for i in range(n))
    write_csv(path, header, [tuple(row) for row in samples])


def write_paths_csv(path: str, bundles: PathBundles) -> None:
    from ._util import write_csv
    rows = []
    for bi in range(bundles.count):
        for wi in range(bundles.paths.shape[1]):
            for ti, t in enumerate(bundles.times):
                rows.append((t, wi, bundles.paths[bi, wi, ti], bi))
    write_csv(path, ("time", "path_index", "position", "bundle"), rows)
