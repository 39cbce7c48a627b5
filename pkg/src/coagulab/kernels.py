"""Catalog of coagulation kernels.

A kernel is the pair (total merge rate, offspring law).  ``KernelSpec``
carries the scalar rate, a vectorized rate row against a whole
configuration (the simulator's hot path), the offspring sampler, and
metadata: graph-domination class and the homogeneity exponent when the
rate scales as rate(c x, c y) = c^gamma rate(x, y).

A kernel is *graph dominating* when the merged cluster interacts with any
third cluster at least as fast as its two parents did combined, and
*graph dominated* under the reverse inequality.  Those classes admit an
exact pathwise coupling with an inhomogeneous random graph (see
``graphcoupling``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .core import ClusterType, center_of_mass

MASS_LOG_FLOOR = 1.0


class KernelConstructionError(ValueError):
    """Kernel parameters violate a structural requirement (symmetry, shape...)."""


class Domination(str, Enum):
    DOMINATING = "dominating"
    DOMINATED = "dominated"
    NEITHER = "neither"
    UNKNOWN = "unknown"


class Placement(str, Enum):
    CENTER_OF_MASS = "center_of_mass"
    MASS_PROPORTIONAL = "mass_proportional"


@dataclass
class KernelSpec:
    """Total merge rate plus offspring sampler and metadata.

    rate_fn        scalar total rate of a pair, symmetric.
    offspring_fn   (x, y, rng) -> merged ClusterType; offspring mass is
                   exactly mass(x) + mass(y).
    rate_row_fn    vectorized rate of ``x`` against arrays of cluster data:
                   (x, masses, positions, mass_cache) -> ndarray.
    pair_rates_fn  vectorized rate of aligned pairs:
                   (masses_a, masses_b, pos_a, pos_b) -> ndarray.
    mass_rate_fn   vectorized mass-only form (classical kernels only);
                   required by the band diagnostics in ``gelation``.
    bulk_rates_fn  optional closed form for all per-cluster aggregate rates
                   at once (used to build / refresh rate caches quickly).
    mass_cache_fn  optional per-cluster transform the rate row can reuse
                   (for example m^(gamma/2) for power kernels).
    """

    name: str
    rate_fn: Callable[[ClusterType, ClusterType], float]
    offspring_fn: Callable[[ClusterType, ClusterType, np.random.Generator], ClusterType]
    rate_row_fn: Optional[Callable] = None
    pair_rates_fn: Optional[Callable] = None
    mass_rate_fn: Optional[Callable] = None
    bulk_rates_fn: Optional[Callable] = None
    mass_cache_fn: Optional[Callable] = None
    domination: Domination = Domination.UNKNOWN
    homogeneity_gamma: Optional[float] = None
    mass_only: bool = False
    params: dict = field(default_factory=dict)

    def rate(self, x: ClusterType, y: ClusterType) -> float:
        return float(self.rate_fn(x, y))

    def rate_row(self, x: ClusterType, masses: np.ndarray,
                 positions: Optional[np.ndarray] = None,
                 mass_cache: Optional[np.ndarray] = None) -> np.ndarray:
        if self.rate_row_fn is not None:
            return np.asarray(self.rate_row_fn(x, masses, positions, mass_cache), dtype=float)
        out = np.empty(len(masses))
        for k in range(len(masses)):
            pos = positions[k] if positions is not None else None
            out[k] = self.rate_fn(x, ClusterType(masses[k], pos, {-1}))
        return out

    def bulk_rates(self, masses: np.ndarray,
                   positions: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        if self.bulk_rates_fn is None:
            return None
        out = self.bulk_rates_fn(masses, positions)
        return None if out is None else np.asarray(out, dtype=float)

    def pair_rates(self, masses_a: np.ndarray, masses_b: np.ndarray,
                   pos_a: Optional[np.ndarray] = None,
                   pos_b: Optional[np.ndarray] = None) -> np.ndarray:
        """Rates of aligned pairs (a_k, b_k)."""
        if self.pair_rates_fn is not None:
            return np.asarray(self.pair_rates_fn(masses_a, masses_b, pos_a, pos_b), dtype=float)
        if self.mass_rate_fn is not None and self.mass_only:
            return np.asarray(self.mass_rate_fn(np.asarray(masses_a, dtype=float),
                                                np.asarray(masses_b, dtype=float)), dtype=float)
        out = np.empty(len(masses_a))
        for k in range(len(masses_a)):
            x = ClusterType(float(masses_a[k]), None if pos_a is None else pos_a[k], {-1})
            y = ClusterType(float(masses_b[k]), None if pos_b is None else pos_b[k], {-2})
            out[k] = self.rate_fn(x, y)
        return out

    def offspring(self, x: ClusterType, y: ClusterType,
                  rng: np.random.Generator) -> ClusterType:
        z = self.offspring_fn(x, y, rng)
        return z


def _check_symmetry(spec: KernelSpec, sampler: Callable[[np.random.Generator], ClusterType],
                    n_pairs: int = 64, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for _ in range(n_pairs):
        x, y = sampler(rng), sampler(rng)
        if spec.rate(x, y) != spec.rate(y, x):
            raise KernelConstructionError(
                f"kernel {spec.name!r} is not symmetric at masses "
                f"({x.mass}, {y.mass})")


def _merged_labels(x: ClusterType, y: ClusterType):
    return x.labels | y.labels


def _classical_offspring(x: ClusterType, y: ClusterType, rng) -> ClusterType:
    return ClusterType(x.mass + y.mass, None, _merged_labels(x, y))


def classical(rate, name: str = "classical", domination: Domination = Domination.UNKNOWN,
              homogeneity_gamma: Optional[float] = None,
              mass_cache_fn: Optional[Callable] = None,
              bulk_rates_fn: Optional[Callable] = None,
              params: Optional[dict] = None,
              check: bool = True) -> KernelSpec:
    """Mass-only kernel: offspring is the mass sum, no position.

    ``rate`` must accept numpy arrays elementwise (it is used both for
    scalar pairs and for vectorized rate rows).
    """

    def rate_fn(x: ClusterType, y: ClusterType) -> float:
        return float(rate(x.mass, y.mass))

    def rate_row_fn(x, masses, positions, mass_cache):
        return rate(x.mass, masses)

    spec = KernelSpec(
        name=name,
        rate_fn=rate_fn,
        offspring_fn=_classical_offspring,
        rate_row_fn=rate_row_fn,
        mass_rate_fn=rate,
        bulk_rates_fn=bulk_rates_fn,
        mass_cache_fn=mass_cache_fn,
        domination=domination,
        homogeneity_gamma=homogeneity_gamma,
        mass_only=True,
        params=params or {},
    )
    if check:
        _check_symmetry(spec, lambda rng: ClusterType(float(rng.uniform(0.5, 100.0))))
    return spec


def multiplicative() -> KernelSpec:
    """rate(m, n) = m n.  The merged pair rate towards any third cluster is
    exactly the sum of the parents' rates, so the graph coupling is exact."""
    spec = classical(
        lambda m, n: m * n,
        name="multiplicative",
        domination=Domination.DOMINATING,
        homogeneity_gamma=2.0,
        bulk_rates_fn=lambda m, p: m * (m.sum() - m),
    )
    return spec


def additive() -> KernelSpec:
    def bulk(m, p):
        return (len(m) - 2) * m + m.sum()

    return classical(
        lambda m, n: m + n,
        name="additive",
        domination=Domination.DOMINATED,
        homogeneity_gamma=1.0,
        bulk_rates_fn=bulk,
    )


def constant(value: float = 1.0) -> KernelSpec:
    if value <= 0:
        raise KernelConstructionError("constant kernel rate must be positive")

    def rate(m, n):
        return np.broadcast_arrays(np.asarray(m, dtype=float) * 0.0 + value, n)[0]

    return classical(
        rate,
        name="constant",
        domination=Domination.DOMINATED,
        homogeneity_gamma=0.0,
        bulk_rates_fn=lambda m, p: np.full(len(m), (len(m) - 1) * value, dtype=float),
        params={"value": value},
    )


def homogeneous_power(gamma: float) -> KernelSpec:
    """rate(m, n) = (m n)^(gamma / 2); homogeneity exponent gamma."""
    half = gamma / 2.0

    def bulk(m, p):
        t = m ** half
        return t * (t.sum() - t)

    def rate_row(x, masses, positions, mass_cache):
        t = masses ** half if mass_cache is None else mass_cache
        return (x.mass ** half) * t

    spec = classical(
        lambda m, n: (m * n) ** half,
        name="homogeneous_power",
        domination=Domination.DOMINATED if gamma <= 2 else Domination.DOMINATING,
        homogeneity_gamma=gamma,
        bulk_rates_fn=bulk,
        params={"gamma": gamma},
    )
    spec.mass_cache_fn = lambda m: m ** half
    spec.rate_row_fn = rate_row
    return spec


def mass_log(epsilon: float, floor: float = MASS_LOG_FLOOR) -> KernelSpec:
    """rate(m, n) = (m ^ n)(log(m ^ n))^(3 + epsilon) where ^ is the minimum,
    floored at ``floor`` whenever min(m, n) < 2 so early dynamics stay live."""
    if epsilon <= 0:
        raise KernelConstructionError("epsilon must be positive")
    if floor <= 0:
        raise KernelConstructionError("floor must be positive")
    expo = 3.0 + epsilon

    def rate(m, n):
        lo = np.minimum(m, n)
        lo_arr = np.asarray(lo, dtype=float)
        safe = np.maximum(lo_arr, 2.0)
        val = safe * np.log(safe) ** expo
        return np.where(lo_arr < 2.0, floor, val)

    return classical(rate, name="mass_log", params={"epsilon": epsilon, "floor": floor})


def _spatial_offspring(placement: Placement):
    def offspring(x: ClusterType, y: ClusterType, rng: np.random.Generator) -> ClusterType:
        m, n = x.mass, y.mass
        if placement is Placement.CENTER_OF_MASS:
            pos = center_of_mass(x.position, m, y.position, n)
        else:
            pos = x.position if rng.random() < m / (m + n) else y.position
        return ClusterType(m + n, pos, _merged_labels(x, y))

    return offspring


def spatial_distance_power(kappa0: float, alpha: float,
                           placement: Placement | str = Placement.CENTER_OF_MASS) -> KernelSpec:
    """rate = kappa0 / ||p - s||^alpha for distinct positions, 0 at p == s.

    Coincident pairs never merge; with mass-proportional placement clusters
    can stack, so a trajectory may absorb with more than one cluster left.
    """
    if kappa0 <= 0 or alpha <= 0:
        raise KernelConstructionError("kappa0 and alpha must be positive")
    placement = Placement(placement)

    def rate_fn(x: ClusterType, y: ClusterType) -> float:
        d = float(np.linalg.norm(x.position - y.position))
        return 0.0 if d == 0.0 else kappa0 / d ** alpha

    def rate_row_fn(x, masses, positions, mass_cache):
        d = np.linalg.norm(positions - x.position, axis=1)
        out = np.zeros(len(d))
        nz = d > 0.0
        out[nz] = kappa0 / d[nz] ** alpha
        return out

    def pair_rates_fn(ma, mb, pa, pb):
        d = np.linalg.norm(np.asarray(pa, dtype=float) - np.asarray(pb, dtype=float), axis=-1)
        out = np.zeros(d.shape)
        nz = d > 0.0
        out[nz] = kappa0 / d[nz] ** alpha
        return out

    return KernelSpec(
        name="spatial_distance_power",
        rate_fn=rate_fn,
        offspring_fn=_spatial_offspring(placement),
        rate_row_fn=rate_row_fn,
        pair_rates_fn=pair_rates_fn,
        domination=Domination.UNKNOWN,
        params={"kappa0": kappa0, "alpha": alpha, "placement": placement.value},
    )


def product_kernel(h: Callable, w: Callable, name: str = "product",
                   placement: Placement | str = Placement.CENTER_OF_MASS,
                   check: bool = True) -> KernelSpec:
    """rate = h(distance) * w(masses) with h non-increasing and w symmetric.

    Both ``h`` and ``w`` must accept numpy arrays.  Monotonicity of ``h``
    and symmetry of ``w`` are spot-checked on random samples.
    """
    placement = Placement(placement)

    def rate_fn(x: ClusterType, y: ClusterType) -> float:
        d = float(np.linalg.norm(x.position - y.position))
        return float(h(d) * w(min(x.mass, y.mass), max(x.mass, y.mass)))

    def rate_row_fn(x, masses, positions, mass_cache):
        d = np.linalg.norm(positions - x.position, axis=1)
        return h(d) * w(np.minimum(x.mass, masses), np.maximum(x.mass, masses))

    def pair_rates_fn(ma, mb, pa, pb):
        d = np.linalg.norm(np.asarray(pa, dtype=float) - np.asarray(pb, dtype=float), axis=-1)
        return h(d) * w(np.minimum(ma, mb), np.maximum(ma, mb))

    spec = KernelSpec(
        name=name,
        rate_fn=rate_fn,
        offspring_fn=_spatial_offspring(placement),
        rate_row_fn=rate_row_fn,
        pair_rates_fn=pair_rates_fn,
        params={"placement": placement.value},
    )
    if check:
        rng = np.random.default_rng(1)
        ds = np.sort(rng.uniform(0.0, 3.0, size=64))
        hv = np.asarray([float(h(d)) for d in ds])
        if np.any(np.diff(hv) > 1e-12):
            raise KernelConstructionError("h must be non-increasing in distance")
        if np.any(hv < 0) or not np.any(hv > 0):
            raise KernelConstructionError("h must be non-negative and not identically zero")
        for _ in range(64):
            m, n = rng.uniform(0.5, 50.0, size=2)
            if float(w(m, n)) != float(w(n, m)):
                raise KernelConstructionError("w must be symmetric in the masses")
    return spec


def bilinear(a: np.ndarray, projection: Optional[Callable[[ClusterType], np.ndarray]] = None) -> KernelSpec:
    """rate(x, y) = proj(x)^T A proj(y); merged feature vector is the sum.

    By default the cluster position doubles as the feature vector.  A must
    be symmetric with non-negative entries.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise KernelConstructionError("A must be a square matrix")
    if not np.array_equal(a, a.T):
        raise KernelConstructionError("A must be symmetric")
    if np.any(a < 0):
        raise KernelConstructionError("A must have non-negative entries")

    proj = projection if projection is not None else (lambda c: c.position)

    def _key(c: ClusterType):
        return (c.mass, tuple(np.asarray(proj(c), dtype=float)))

    def rate_fn(x: ClusterType, y: ClusterType) -> float:
        # canonical argument order keeps the float result exactly symmetric
        if _key(y) < _key(x):
            x, y = y, x
        return float(np.asarray(proj(x), dtype=float) @ a @ np.asarray(proj(y), dtype=float))

    def rate_row_fn(x, masses, positions, mass_cache):
        return positions @ (a @ np.asarray(proj(x), dtype=float))

    def offspring_fn(x: ClusterType, y: ClusterType, rng) -> ClusterType:
        merged = np.asarray(proj(x), dtype=float) + np.asarray(proj(y), dtype=float)
        return ClusterType(x.mass + y.mass, merged, _merged_labels(x, y))

    return KernelSpec(
        name="bilinear",
        rate_fn=rate_fn,
        offspring_fn=offspring_fn,
        # the vectorized row reads feature vectors straight from the position
        # arrays, which is only valid for the default projection
        rate_row_fn=rate_row_fn if projection is None else None,
        domination=Domination.DOMINATING,
        params={"A": a.tolist()},
    )


def _spot_check_shape(rho: Callable, dim: int, convex: bool, samples: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(samples, dim))
    v = rng.uniform(-1.0, 1.0, size=(samples, dim))
    mid = 0.5 * (u + v)
    ru = np.asarray(rho(u), dtype=float)
    rv = np.asarray(rho(v), dtype=float)
    rm = np.asarray(rho(mid), dtype=float)
    gap = rm - 0.5 * (ru + rv)
    bad = gap < -1e-9 if not convex else gap > 1e-9
    if np.any(bad):
        k = int(np.argmax(bad))
        kind = "concavity" if not convex else "convexity"
        raise KernelConstructionError(
            f"{kind} spot-check failed on triple u={u[k]}, v={v[k]}, mid={mid[k]}")
    r_neg = np.asarray(rho(-u), dtype=float)
    if np.max(np.abs(ru - r_neg)) > 1e-9:
        raise KernelConstructionError("rho must be even: rho(u) == rho(-u)")
    if np.any(ru < 0):
        raise KernelConstructionError("rho must be non-negative on the sampled domain")


def concave_rho(rho: Callable, dim: int = 1, convex: bool = False,
                spot_samples: int = 1000, seed: int = 2) -> KernelSpec:
    """rate((p, m), (s, n)) = m n rho(p - s) with center-of-mass placement.

    A concave even ``rho`` makes the kernel graph dominating; the convex
    variant is graph dominated.  ``rho`` receives displacement arrays of
    shape (k, dim) (or (dim,)) and must reduce over the last axis.
    Concavity/convexity is spot-checked on random midpoint triples because
    rho is an opaque callable.
    """

    _spot_check_shape(rho, dim, convex, spot_samples, seed)

    def rate_fn(x: ClusterType, y: ClusterType) -> float:
        return float(x.mass * y.mass * np.asarray(rho(x.position - y.position)))

    def rate_row_fn(x, masses, positions, mass_cache):
        return x.mass * masses * np.asarray(rho(positions - x.position), dtype=float)

    def pair_rates_fn(ma, mb, pa, pb):
        disp = np.asarray(pa, dtype=float) - np.asarray(pb, dtype=float)
        return np.asarray(ma, dtype=float) * np.asarray(mb, dtype=float) * np.asarray(rho(disp), dtype=float)

    def bulk_rates_fn(masses, positions, chunk: int = 256):
        n = len(masses)
        out = np.empty(n)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            disp = positions[lo:hi, None, :] - positions[None, :, :]
            r = np.asarray(rho(disp), dtype=float)
            r[np.arange(lo, hi) - lo, np.arange(lo, hi)] = 0.0
            out[lo:hi] = r @ masses
        return masses * out

    return KernelSpec(
        name="concave_rho" if not convex else "convex_rho",
        rate_fn=rate_fn,
        offspring_fn=_spatial_offspring(Placement.CENTER_OF_MASS),
        rate_row_fn=rate_row_fn,
        pair_rates_fn=pair_rates_fn,
        bulk_rates_fn=bulk_rates_fn,
        domination=Domination.DOMINATED if convex else Domination.DOMINATING,
        params={"dim": dim, "convex": convex},
    )


def max_norm_complement_rho(radius: float) -> Callable:
    """rho(u) = radius - ||u||, concave and decreasing in the distance."""

    def rho(u):
        return radius - np.linalg.norm(np.atleast_1d(u), axis=-1)

    return rho


KERNEL_BUILDERS = {
    "multiplicative": multiplicative,
    "additive": additive,
    "constant": constant,
    "homogeneous_power": homogeneous_power,
    "mass_log": mass_log,
    "spatial_distance_power": spatial_distance_power,
    "bilinear": bilinear,
    "concave_rho": concave_rho,
}


def check_domination_triple(kernel: KernelSpec, x: ClusterType, y: ClusterType,
                            q: ClusterType, rng: np.random.Generator,
                            tol: float = 1e-12) -> tuple[float, float, bool]:
    """Evaluate rate(z, q) against rate(x, q) + rate(y, q) for sampled offspring z.

    Returns (merged_rate, parent_sum, ok) where ``ok`` follows the kernel's
    declared domination direction.
    """
    z = kernel.offspring(x, y, rng)
    merged = kernel.rate(z, q)
    parts = kernel.rate(x, q) + kernel.rate(y, q)
    if kernel.domination is Domination.DOMINATING:
        ok = merged >= parts - tol
    elif kernel.domination is Domination.DOMINATED:
        ok = merged <= parts + tol
    else:
        ok = True
    return merged, parts, ok


def effective_gamma(kernel: KernelSpec, scale: float, x: ClusterType, y: ClusterType) -> float:
    """Empirical homogeneity exponent log_c(rate(cx, cy) / rate(x, y))."""
    cx = ClusterType(scale * x.mass, x.position, x.labels)
    cy = ClusterType(scale * y.mass, y.position, y.labels)
    return math.log(kernel.rate(cx, cy) / kernel.rate(x, y)) / math.log(scale)
