"""Gelation observables and sufficient-criterion diagnostics.

Two stopping times measure the emergence of large clusters on a
trajectory:

  * ``giant_cluster_time``: first time any single cluster passes a fixed
    fraction of N (strict inequality by default),
  * ``gel_fraction_time``: first time the normalized mass carried by
    clusters at or above a cutoff psi(N) reaches a fraction delta.

``cascade_times`` tracks the staircase of first times at which every
dyadic mass scale up to 2^k simultaneously holds a prescribed mass
fraction; their gaps telescope into the gel-fraction time, which is what
makes the summability diagnostics below meaningful.

The diagnostics score a kernel by the band sums
sum_j 2^j / (inf-band-rate * f_j^2) for a summable decreasing weight
sequence (f_j).  Bounded sums certify gelation; any finite-range verdict
is a trend heuristic and is labelled as such.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Configuration
from .kernels import KernelSpec
from .simulator import PredicateStop, Trajectory


class GelationInputError(ValueError):
    pass


# -- spectra -----------------------------------------------------------------

@dataclass
class DyadicSpectrum:
    """Total mass per dyadic band: band j holds clusters with 2^j <= m < 2^(j+1)."""

    bands: dict[int, float]

    @classmethod
    def from_masses(cls, masses: np.ndarray) -> "DyadicSpectrum":
        m = np.asarray(masses, dtype=float)
        m = m[m >= 1.0]
        if len(m) == 0:
            return cls({})
        j = np.floor(np.log2(m)).astype(int)
        sums = np.bincount(j, weights=m)
        return cls({int(b): float(sums[b]) for b in np.flatnonzero(sums)})

    @classmethod
    def from_configuration(cls, config: Configuration) -> "DyadicSpectrum":
        return cls.from_masses(config.masses[config.alive])

    def band_mass(self, j: int) -> float:
        return self.bands.get(j, 0.0)

    def total(self) -> float:
        return float(sum(self.bands.values()))


# -- gelation rules ------------------------------------------------------------

def _as_cutoff(psi) -> Callable[[int], int]:
    if callable(psi):
        return psi
    table = {int(k): int(v) for k, v in dict(psi).items()}

    def lookup(n: int) -> int:
        if n not in table:
            raise GelationInputError(f"cutoff table has no entry for N={n}")
        return table[n]

    return lookup


@dataclass
class GelationRule:
    """Mass cutoff psi (callable N -> int, or a table), gel fraction delta,
    and optionally the giant-cluster fraction alpha."""

    psi: Callable[[int], int] | dict
    delta: float
    alpha: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise GelationInputError(f"delta must be in (0, 1), got {self.delta}")
        if self.alpha is not None and not (0.0 < self.alpha < 1.0):
            raise GelationInputError(f"alpha must be in (0, 1), got {self.alpha}")
        self.psi = _as_cutoff(self.psi)

    def cutoff(self, n: int) -> int:
        value = int(self.psi(n))
        if value < 1:
            raise GelationInputError(f"cutoff psi({n}) = {value} must be >= 1")
        return value


# -- mass-only replay ---------------------------------------------------------

def _initial_masses(traj: Trajectory) -> np.ndarray:
    n0 = traj.n_initial
    masses = np.zeros(n0 + len(traj.events))
    for k, c in enumerate(traj.initial):
        masses[k] = c.mass
    return masses


def _iter_mass_events(traj: Trajectory):
    """Yields (normalized time, left, right, new index, offspring mass)."""
    times = traj.normalized_times()
    n0 = traj.n_initial
    for k, e in enumerate(traj.events):
        yield float(times[k]), e.left, e.right, n0 + k, e.offspring.mass


# -- stopping times -------------------------------------------------------------

def largest_mass_at(traj: Trajectory, t: float) -> float:
    """Largest live cluster mass at normalized time t.

    Masses only grow, so the largest live mass equals the largest mass
    created by any event up to t (or the largest initial mass).
    """
    best = max((c.mass for c in traj.initial), default=0.0)
    for k, tk in enumerate(traj.normalized_times()):
        if tk > t:
            break
        best = max(best, traj.events[k].offspring.mass)
    return best


def giant_cluster_time(traj: Trajectory, alpha: float,
                       strict: bool = True) -> Optional[float]:
    """First normalized time some cluster mass exceeds alpha * N (None if never).

    The comparison is strict by default; pass ``strict=False`` for the
    inclusive variant.
    """
    if not (0.0 < alpha):
        raise GelationInputError("alpha must be positive")
    threshold = alpha * traj.n_param

    def crosses(m: float) -> bool:
        return m > threshold if strict else m >= threshold

    if any(crosses(c.mass) for c in traj.initial):
        return 0.0
    for t, _l, _r, _new, m in _iter_mass_events(traj):
        if crosses(m):
            return t
    return None


def gel_fraction_time(traj: Trajectory, rule: GelationRule) -> Optional[float]:
    """First normalized time the mass fraction in clusters of mass >= psi(N)
    reaches delta (None if never reached on this trajectory)."""
    n = traj.n_param
    cutoff = rule.cutoff(n)
    target = rule.delta * n

    masses = _initial_masses(traj)
    n0 = traj.n_initial
    heavy = masses[:n0][masses[:n0] >= cutoff].sum()
    if heavy >= target:
        _assert_mass_split(masses, cutoff, traj)
        return 0.0
    for t, left, right, new, m in _iter_mass_events(traj):
        ml, mr = masses[left], masses[right]
        if ml >= cutoff:
            heavy -= ml
        if mr >= cutoff:
            heavy -= mr
        if m >= cutoff:
            heavy += m
        masses[left] = masses[right] = 0.0
        masses[new] = m
        if heavy >= target:
            _assert_mass_split(masses, cutoff, traj)
            return t
    return None


def _assert_mass_split(masses: np.ndarray, cutoff: int, traj: Trajectory) -> None:
    """Mass-conservation bookkeeping: the light side and the strict heavy side
    always complement each other through the total initial mass."""
    total = masses.sum()
    light = masses[(masses > 0) & (masses <= cutoff)].sum()
    heavy_strict = masses[masses > cutoff].sum()
    if abs((total - light) - heavy_strict) > 1e-9 * max(total, 1.0):
        raise AssertionError("mass bookkeeping identity violated")


def cascade_times(traj: Trajectory, rho_seq: Sequence[float],
                  k_max: int) -> list[Optional[float]]:
    """First times T_k at which, simultaneously for every i <= k, the mass in
    clusters of mass >= 2^i is at least rho_i times the initial mass.

    ``rho_seq`` must be strictly decreasing in (0, 1) and longer than k_max.
    The mass at or above any threshold only grows along a trajectory, so
    T_k is the max over i <= k of the first-passage time of scale i.
    """
    rho = np.asarray(rho_seq, dtype=float)
    if len(rho) <= k_max:
        raise GelationInputError("rho_seq must be longer than k_max")
    if np.any(rho <= 0.0) or np.any(rho >= 1.0) or np.any(np.diff(rho) >= 0.0):
        raise GelationInputError("rho_seq must be strictly decreasing inside (0, 1)")

    masses = _initial_masses(traj)
    n0 = traj.n_initial
    init_mass = masses[:n0].sum()
    thresholds = 2.0 ** np.arange(k_max + 1)
    above = np.array([masses[:n0][masses[:n0] >= thr].sum() for thr in thresholds])
    targets = rho[: k_max + 1] * init_mass

    hit: list[Optional[float]] = [0.0 if above[i] >= targets[i] else None
                                  for i in range(k_max + 1)]

    def bands_below(m: float) -> int:
        # number of thresholds 2^i <= m, i.e. i ranges over [0, floor(log2 m)]
        if m < 1.0:
            return 0
        return min(int(math.floor(math.log2(m))) + 1, k_max + 1)

    for t, left, right, new, m in _iter_mass_events(traj):
        for parent in (masses[left], masses[right]):
            above[: bands_below(parent)] -= parent
        above[: bands_below(m)] += m
        masses[left] = masses[right] = 0.0
        masses[new] = m
        for i in range(k_max + 1):
            if hit[i] is None and above[i] >= targets[i]:
                hit[i] = t

    out: list[Optional[float]] = []
    worst: Optional[float] = 0.0
    for i in range(k_max + 1):
        if hit[i] is None or worst is None:
            worst = None
        else:
            worst = max(worst, hit[i])
        out.append(worst)
    return out


# -- cutoff adjustment -----------------------------------------------------------

def effective_mass_cutoff(n: int, psi: Callable[[int], int], xi: Callable[[int], int],
                          init_mass: float, band_weights: Sequence[float]) -> int:
    """Cutoff min(psi(N), 2^k_max) where k_max is the largest band index k with
    2^(k+2) / (init_mass * f_k) <= N / xi(N).

    When no band satisfies the inequality the smallest scale (band 0, cutoff
    1) is returned with a warning: the partition budget is too large for
    this N.
    """
    f = np.asarray(band_weights, dtype=float)
    if np.any(f <= 0) or np.any(np.diff(f) >= 0):
        raise GelationInputError("band_weights must be positive and strictly decreasing")
    if init_mass <= 0:
        raise GelationInputError("init_mass must be positive")
    budget = n / float(xi(n))
    k_max = -1
    for k in range(len(f)):
        if 2.0 ** (k + 2) / (init_mass * f[k]) <= budget:
            k_max = k
    if k_max < 0:
        warnings.warn(
            f"no dyadic band satisfies the capacity bound at N={n}; "
            "falling back to band 0", stacklevel=2)
        return 1
    return min(int(psi(n)), 2 ** k_max)


# -- summability diagnostics -------------------------------------------------------

@dataclass
class CriterionReport:
    """Partial band sums, a trend verdict, and the parameters that produced them.

    Verdicts are heuristic: the underlying criteria are limit statements, so
    a finite-range diagnostic can only report a trend.
    """

    partial_sums: list[float]
    verdict: str  # converging | diverging | inconclusive
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in ("converging", "diverging", "inconclusive"):
            raise GelationInputError(f"unknown verdict {self.verdict!r}")


def default_band_weights(j_max: int, homogeneity_gamma: Optional[float] = None) -> np.ndarray:
    """Summable strictly decreasing weights: 2^(-(gamma-1) j / 4) when the
    kernel's homogeneity exponent is known and > 1, else (j + 1)^(-1.05)."""
    j = np.arange(j_max + 1)
    if homogeneity_gamma is not None and homogeneity_gamma > 1.0:
        return 2.0 ** (-(homogeneity_gamma - 1.0) * j / 4.0)
    return (j + 1.0) ** -1.05


def _ratio_verdict(summands: np.ndarray) -> str:
    """Trend of consecutive band increments averaged over the last quarter."""
    s = np.asarray(summands, dtype=float)
    if len(s) < 2:
        return "inconclusive"
    ratios = s[1:] / np.maximum(s[:-1], 1e-300)
    tail = ratios[-max(1, len(ratios) // 4):]
    mean = float(tail.mean())
    if mean < 0.95:
        return "converging"
    if mean >= 1.0:
        return "diverging"
    return "inconclusive"


def classical_criterion_diagnostic(kernel: KernelSpec,
                                   band_weights: Optional[Sequence[float]] = None,
                                   j_max: int = 24,
                                   grid: int = 64) -> CriterionReport:
    """Band sums sup over the dyadic band of 2^j / (rate(m, n) f_j^2) for a
    mass-only kernel, estimated by a grid search per band.

    The grid includes the band's lower-left corner, where the infimum of
    every monotone catalog kernel sits, so for those the summand is exact.
    """
    if not kernel.mass_only or kernel.mass_rate_fn is None:
        raise GelationInputError("classical diagnostic needs a mass-only kernel")
    if band_weights is None:
        f = default_band_weights(j_max, kernel.homogeneity_gamma)
    else:
        f = np.asarray(band_weights, dtype=float)
        if len(f) <= j_max:
            raise GelationInputError("band_weights must cover 0..j_max")
    if np.any(f <= 0) or np.any(np.diff(f) >= 0):
        raise GelationInputError("band_weights must be positive and strictly decreasing")

    summands = []
    flagged = None
    for j in range(j_max + 1):
        lo = 2.0 ** j
        ms = np.linspace(lo, 2.0 * lo, grid, endpoint=False)
        rates = np.asarray(kernel.mass_rate_fn(ms[:, None], ms[None, :]), dtype=float)
        min_rate = float(rates.min())
        if min_rate <= 0.0:
            flagged = j
            summands.append(math.inf)
            break
        summands.append(lo / (min_rate * f[j] ** 2))

    if flagged is not None:
        partial = list(np.cumsum([s for s in summands if math.isfinite(s)]))
        return CriterionReport(
            partial_sums=partial + [math.inf],
            verdict="diverging",
            parameters={"kernel": kernel.name, "j_max": j_max, "grid": grid,
                        "zero_rate_band": flagged,
                        "band_weights": list(map(float, f[: j_max + 1]))},
        )

    summands_arr = np.asarray(summands)
    return CriterionReport(
        partial_sums=list(np.cumsum(summands_arr)),
        verdict=_ratio_verdict(summands_arr),
        parameters={"kernel": kernel.name, "j_max": j_max, "grid": grid,
                    "summands": list(map(float, summands_arr)),
                    "band_weights": list(map(float, f[: j_max + 1]))},
    )


@dataclass
class PartitionCell:
    """A measurable cell of a spatial partition, sampled by Monte Carlo."""

    sample: Callable[[np.random.Generator, int], np.ndarray]
    contains: Optional[Callable[[np.ndarray], np.ndarray]] = None


def hypercube_partition(dim: int) -> Callable[[int, int, int], list[PartitionCell]]:
    """Family (j, N, cell_budget) -> axis-aligned cells tiling [0, 1]^dim.

    Uses per-axis splits floor(cell_budget^(1/dim)) so the cell count never
    exceeds the budget.  The band index is ignored: the same spatial grid
    serves every mass band.
    """
    if dim < 1:
        raise GelationInputError("dim must be >= 1")

    def family(j: int, n: int, cell_budget: int) -> list[PartitionCell]:
        per_axis = max(int(math.floor(cell_budget ** (1.0 / dim) + 1e-9)), 1)
        side = 1.0 / per_axis
        cells = []
        for flat in range(per_axis ** dim):
            corner = np.empty(dim)
            rem = flat
            for axis in range(dim):
                corner[axis] = (rem % per_axis) * side
                rem //= per_axis

            def sample(rng, k, corner=corner.copy()):
                return corner + side * rng.random((k, dim))

            def contains(points, corner=corner.copy()):
                points = np.atleast_2d(points)
                return np.all((points >= corner) & (points < corner + side), axis=1)

            cells.append(PartitionCell(sample=sample, contains=contains))
        return cells

    return family


def _estimate_cell_inf_rate(kernel: KernelSpec, cell: PartitionCell, j: int,
                            rng: np.random.Generator, samples: int) -> float:
    """Sampled infimum of the pair rate over one cell and one dyadic band.

    The estimate can only overshoot the true infimum (it is an inf over a
    subset), so 'converging' verdicts built from it are advisory.  Band
    corner masses (2^j, 2^j) are always included in the sample.
    """
    lo = 2.0 ** j
    pts_a = cell.sample(rng, samples)
    pts_b = cell.sample(rng, samples)
    m_a = rng.uniform(lo, 2.0 * lo, size=samples)
    m_b = rng.uniform(lo, 2.0 * lo, size=samples)
    m_a[0] = m_b[0] = lo
    rates = kernel.pair_rates(m_a, m_b, pts_a, pts_b)
    return float(rates.min())


def partition_criterion_diagnostic(kernel: KernelSpec,
                                   partition_family: Callable[[int, int, int], list[PartitionCell]],
                                   band_weights: Sequence[float],
                                   j_max: int,
                                   n_ladder: Sequence[int],
                                   psi: Callable[[int], int],
                                   xi: Callable[[int], int],
                                   samples: int = 200,
                                   seed: int = 11) -> CriterionReport:
    """Band sums sum_j (2^j / f_j^2) sum_cells 1 / inf-rate, evaluated along a
    ladder of N; plus the partition-fineness ratios psi(N) xi(N) / N.

    The verdict comes from the log-log slope of the ladder totals: a bounded
    criterion shows a flat trend (slope <= 0.1 -> converging), steady growth
    (slope >= 0.3) is labelled diverging, anything between inconclusive.
    """
    f = np.asarray(band_weights, dtype=float)
    if np.any(f <= 0) or np.any(np.diff(f) >= 0):
        raise GelationInputError("band_weights must be positive and strictly decreasing")
    n_ladder = list(n_ladder)
    if not n_ladder:
        raise GelationInputError("n_ladder must not be empty")

    rng = np.random.default_rng(seed)
    totals = []
    fineness = []
    partials_last: list[float] = []
    flagged_cell = None
    for n in n_ladder:
        cutoff = max(int(psi(n)), 1)
        budget = int(xi(n))
        bands = min(j_max, int(math.floor(math.log2(cutoff)))) if cutoff > 1 else 0
        if len(f) <= bands:
            raise GelationInputError("band_weights must cover every probed band")
        partials = []
        total = 0.0
        for j in range(bands + 1):
            cells = partition_family(j, n, budget)
            if len(cells) > budget:
                raise GelationInputError(
                    f"partition family produced {len(cells)} cells, budget {budget}")
            inv = 0.0
            for idx, cell in enumerate(cells):
                c_prime = _estimate_cell_inf_rate(kernel, cell, j, rng, samples)
                if c_prime <= 0.0:
                    flagged_cell = (n, j, idx)
                    break
                inv += 1.0 / c_prime
            if flagged_cell is not None:
                break
            total += (2.0 ** j / f[j] ** 2) * inv
            partials.append(total)
        if flagged_cell is not None:
            break
        totals.append(total)
        fineness.append(cutoff * budget / n)
        partials_last = partials

    params = {
        "kernel": kernel.name,
        "n_ladder": n_ladder,
        "totals_by_n": list(map(float, totals)),
        "psi_xi_over_n": list(map(float, fineness)),
        "samples": samples,
    }
    if flagged_cell is not None:
        params["zero_rate_cell"] = flagged_cell
        return CriterionReport(partial_sums=partials_last + [math.inf],
                               verdict="diverging", parameters=params)

    if len(totals) >= 2:
        x = np.log(np.asarray(n_ladder, dtype=float))
        y = np.log(np.maximum(np.asarray(totals), 1e-300))
        slope = float(np.polyfit(x, y, 1)[0])
    else:
        slope = math.nan
    params["loglog_slope"] = slope
    if math.isnan(slope):
        verdict = "inconclusive"
    elif slope <= 0.1:
        verdict = "converging"
    elif slope >= 0.3:
        verdict = "diverging"
    else:
        verdict = "inconclusive"
    return CriterionReport(partial_sums=partials_last, verdict=verdict, parameters=params)


# -- elementary inequality checker ------------------------------------------------

def check_pair_count_bound(counts: Sequence[int], rates: Sequence[float],
                           tol: float = 1e-12) -> tuple[float, float, bool]:
    """For positive integers v_i and positive rates c_i, compare
    sum c_i (v_i^2 - v_i) against (k1 - n)^2 / (2 k2) with k1 = sum v_i and
    k2 = sum 1/c_i.  Returns (lhs, rhs, lhs >= rhs - tol).

    The left side is twice the rate-weighted number of ordered pairs within
    groups; the bound is what forces merges while many clusters share a
    group.
    """
    v = np.asarray(counts)
    c = np.asarray(rates, dtype=float)
    if v.shape != c.shape or v.ndim != 1 or len(v) == 0:
        raise GelationInputError("counts and rates must be equal-length 1-d sequences")
    if np.any(v <= 0) or not np.issubdtype(v.dtype, np.integer):
        raise GelationInputError("counts must be positive integers")
    if np.any(c <= 0):
        raise GelationInputError("rates must be positive")
    lhs = float(np.sum(c * (v.astype(float) ** 2 - v)))
    k1 = float(v.sum())
    k2 = float(np.sum(1.0 / c))
    rhs = (k1 - len(v)) ** 2 / (2.0 * k2)
    return lhs, rhs, lhs >= rhs - tol


# -- misc observables ---------------------------------------------------------------

def rate_mass_integral(config: Configuration) -> float:
    """The double integral of rate(x, y) m(x) against the normalized empirical
    measure with itself (including the diagonal).  Exposed as an observable
    for initial-condition health checks; nothing in the engine consumes it.
    """
    live = config.live_indices()
    n = config.n_param
    total = 0.0
    for i in live:
        xi = config.clusters[i]
        total += xi.mass * (config.rates[i] + config.kernel.rate(xi, xi))
    return total / n / n


# -- stop rules for the simulator ------------------------------------------------------

def stop_on_giant_cluster(alpha: float, n_param: int, horizon: float = math.inf,
                          strict: bool = True) -> PredicateStop:
    """Stop once some cluster mass passes alpha * N."""
    threshold = alpha * n_param

    def predicate(config: Configuration, n_events: int, t: float) -> bool:
        return config.max_mass > threshold if strict else config.max_mass >= threshold

    return PredicateStop(predicate=predicate, horizon=horizon)


def stop_on_gel_fraction(rule: GelationRule, n_param: int,
                         horizon: float = math.inf) -> PredicateStop:
    """Stop once the mass fraction in clusters >= psi(N) reaches delta."""
    cutoff = rule.cutoff(n_param)
    target = rule.delta * n_param

    def predicate(config: Configuration, n_events: int, t: float) -> bool:
        return config.mass_above(cutoff) >= target

    return PredicateStop(predicate=predicate, horizon=horizon)
