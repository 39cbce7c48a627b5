"""Domain types for cluster coagulation state.

A cluster is a point of the type space: a positive mass, an optional
position vector, and the set of founding-cluster indices that merged into
it.  A ``Configuration`` is the live multiset of clusters for one
trajectory, together with cached rate aggregates (per-cluster total merge
rates and the global event rate) so that one coagulation event costs
O(n) instead of O(n^2).

``apply_coagulation`` is the single state mutation of the whole package:
replaying an event log through it reproduces a configuration exactly.
"""

from __future__ import annotations

import math
from collections.abc import Set as AbstractSet
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

MASS_REL_TOL = 1e-9
RATE_CACHE_REL_TOL = 1e-8
DEFAULT_RECOMPUTE_EVERY = 4096


class CoagulationError(ValueError):
    """A core contract was violated (bad merge arguments, mass mismatch)."""


class LabelSet(AbstractSet):
    """Immutable set of founding-cluster indices with O(1) union.

    Unions of label sets happen once per coagulation event and the naive
    frozenset union makes long trajectories quadratic in time and memory.
    This class stores the union as a binary tree of disjoint branches, so
    ``union`` and ``len`` are O(1) and iteration is O(size).  Branches must
    be disjoint (they always are for labels of distinct live clusters).
    """

    __slots__ = ("_left", "_right", "_size")

    def __init__(self, indices: Sequence[int] = ()):
        self._left = frozenset(indices)
        self._right = None
        self._size = len(self._left)

    @classmethod
    def singleton(cls, index: int) -> "LabelSet":
        return cls((index,))

    @classmethod
    def _branch(cls, left: "LabelSet", right: "LabelSet") -> "LabelSet":
        node = cls.__new__(cls)
        node._left = left
        node._right = right
        node._size = len(left) + len(right)
        return node

    def union_disjoint(self, other: "LabelSet") -> "LabelSet":
        if not isinstance(other, LabelSet):
            other = LabelSet(other)
        if self._size == 0:
            return other
        if other._size == 0:
            return self
        return LabelSet._branch(self, other)

    def __or__(self, other):
        return self.union_disjoint(other)

    def __len__(self) -> int:
        return self._size

    def __iter__(self) -> Iterator[int]:
        stack = [self]
        while stack:
            node = stack.pop()
            if isinstance(node, LabelSet):
                if node._right is None:
                    yield from node._left
                else:
                    stack.append(node._right)
                    stack.append(node._left)
            else:
                yield from node

    def __contains__(self, item) -> bool:
        if self._right is None:
            return item in self._left
        return item in self._left or item in self._right

    def as_frozenset(self) -> frozenset:
        return frozenset(self)

    def __repr__(self) -> str:
        if self._size <= 8:
            return f"LabelSet({sorted(self)})"
        return f"LabelSet(<{self._size} labels>)"

    def __hash__(self) -> int:
        return hash(self.as_frozenset())


def _as_labelset(labels) -> LabelSet:
    if isinstance(labels, LabelSet):
        return labels
    return LabelSet(labels)


@dataclass(frozen=True, eq=False)
class ClusterType:
    """One cluster: mass, optional position/feature vector, founding labels.

    ``position`` doubles as a feature vector for kernels that read cluster
    coordinates other than physical space (for example bilinear kernels).
    ``labels`` identifies which founding clusters merged into this one; the
    label sets of distinct live clusters are pairwise disjoint and in a
    mono-dispersed run ``len(labels) == mass``.
    """

    mass: float
    position: Optional[np.ndarray] = None
    labels: AbstractSet = LabelSet()

    def __post_init__(self):
        if not (self.mass > 0):
            raise CoagulationError(f"cluster mass must be positive, got {self.mass}")
        if self.position is not None:
            pos = np.asarray(self.position, dtype=float)
            pos.flags.writeable = False
            object.__setattr__(self, "position", pos)
        object.__setattr__(self, "labels", _as_labelset(self.labels))

    def same_values(self, other: "ClusterType", tol: float = 0.0) -> bool:
        """Field-wise equality (used by replay tests; arrays compare by value)."""
        if abs(self.mass - other.mass) > tol * max(abs(self.mass), 1.0):
            return False
        if (self.position is None) != (other.position is None):
            return False
        if self.position is not None and not np.array_equal(self.position, other.position):
            return False
        return self.labels.as_frozenset() == _as_labelset(other.labels).as_frozenset()


def mono_dispersed_clusters(n: int, positions: Optional[np.ndarray] = None) -> list[ClusterType]:
    """n mass-1 clusters labelled 0..n-1, optionally at given positions."""
    if positions is None:
        return [ClusterType(1.0, None, LabelSet.singleton(i)) for i in range(n)]
    positions = np.asarray(positions, dtype=float)
    if positions.shape[0] != n:
        raise CoagulationError("positions row count must equal cluster count")
    return [ClusterType(1.0, positions[i], LabelSet.singleton(i)) for i in range(n)]


class TimeMode(str, Enum):
    NORMALIZED = "normalized"
    RAW = "raw"


@dataclass(frozen=True)
class TimeConvention:
    """Conversion between raw process time and normalized time t_raw = t_norm / N."""

    mode: TimeMode = TimeMode.NORMALIZED

    def to_normalized(self, t: float, n_param: int) -> float:
        return t if self.mode is TimeMode.NORMALIZED else t * n_param

    def to_raw(self, t: float, n_param: int) -> float:
        return t / n_param if self.mode is TimeMode.NORMALIZED else t


class Configuration:
    """Live clusters of one trajectory plus cached rate aggregates.

    Storage is struct-of-arrays sized to the final capacity (2 n0 - 1 slots:
    every event consumes two slots and fills a fresh one, so indices are
    stable for the whole trajectory and dead slots are simply tombstoned).

    Cached quantities:
      * ``rates[i]`` = sum over live j != i of rate(x_i, x_j)  (unnormalized)
      * ``total_rate``  = half the sum of rates over live clusters
      * ``total_mass``  = sum of live masses

    Caches are updated incrementally per event and recomputed from scratch
    every ``recompute_every`` events to bound floating-point drift.
    """

    def __init__(self, clusters: Sequence[ClusterType], kernel, n_param: int,
                 recompute_every: int = DEFAULT_RECOMPUTE_EVERY):
        if n_param <= 0:
            raise CoagulationError("n_param must be a positive integer")
        clusters = list(clusters)
        n0 = len(clusters)
        self.kernel = kernel
        self.n_param = int(n_param)
        self.recompute_every = int(recompute_every)
        capacity = max(2 * n0 - 1, 1)

        self._capacity = capacity
        self.clusters: list[Optional[ClusterType]] = clusters + [None] * (capacity - n0)
        self.masses = np.zeros(capacity)
        self.alive = np.zeros(capacity, dtype=bool)
        self.rates = np.zeros(capacity)
        # unsorted live-slot array with inverse position map: O(1) removal
        self._live = np.zeros(capacity, dtype=np.int64)
        self._live[:n0] = np.arange(n0)
        self._pos = np.full(capacity, -1, dtype=np.int64)
        self._pos[:n0] = np.arange(n0)

        dim = None
        for c in clusters:
            if c.position is not None:
                dim = len(c.position)
                break
        if dim is not None:
            self.positions = np.zeros((capacity, dim))
            for i, c in enumerate(clusters):
                if c.position is None or len(c.position) != dim:
                    raise CoagulationError("all clusters must share one position dimension")
                self.positions[i] = c.position
        else:
            self.positions = None

        for i, c in enumerate(clusters):
            self.masses[i] = c.mass
            self.alive[i] = True

        self.count = n0
        self.next_slot = n0
        self.total_mass = float(self.masses[: n0].sum())
        self.max_mass = float(self.masses[: n0].max()) if n0 else 0.0
        self._founding_labels = frozenset().union(*(c.labels for c in clusters)) if clusters else frozenset()
        self._mass_cache = None
        self._events_since_recompute = 0
        self.recompute_rates()

    # -- read access ----------------------------------------------------

    def live_indices(self) -> np.ndarray:
        """Slots of live clusters (stable content, arbitrary order)."""
        return self._live[: self.count]

    def live_clusters(self) -> list[ClusterType]:
        return [self.clusters[i] for i in self.live_indices()]

    def live_masses(self) -> np.ndarray:
        return self.masses[self.live_indices()]

    @property
    def total_rate(self) -> float:
        return self._total_rate

    def mass_above(self, threshold: float, strict: bool = False) -> float:
        """Total live mass at or above ``threshold`` (strictly above if asked)."""
        if threshold <= 0:
            raise CoagulationError("threshold must be positive")
        m = self.live_masses()
        sel = m > threshold if strict else m >= threshold
        return float(m[sel].sum())

    # -- rate cache -----------------------------------------------------

    def _rate_row(self, cluster: ClusterType, idx: np.ndarray) -> np.ndarray:
        pos = self.positions[idx] if self.positions is not None else None
        cache = self._mass_cache[idx] if self._mass_cache is not None else None
        row = self.kernel.rate_row(cluster, self.masses[idx], pos, cache)
        return np.asarray(row, dtype=float)

    def recompute_rates(self) -> None:
        """Rebuild all cached aggregates from scratch."""
        live = self.live_indices()
        self.rates[:] = 0.0
        if self.kernel.mass_cache_fn is not None:
            self._mass_cache = np.zeros(self._capacity)
            self._mass_cache[live] = self.kernel.mass_cache_fn(self.masses[live])
        if len(live) >= 2:
            bulk = self.kernel.bulk_rates(
                self.masses[live],
                self.positions[live] if self.positions is not None else None,
            )
            if bulk is not None:
                self.rates[live] = bulk
            else:
                for k, i in enumerate(live):
                    row = self._rate_row(self.clusters[i], live)
                    row[k] = 0.0
                    self.rates[i] = row.sum()
        self.total_mass = float(self.masses[live].sum())
        self.max_mass = float(self.masses[live].max()) if len(live) else 0.0
        self._total_rate = 0.5 * float(self.rates[live].sum())
        self._events_since_recompute = 0

    def verify_rate_cache(self, rel_tol: float = RATE_CACHE_REL_TOL) -> float:
        """Compare cached rates against a fresh recomputation; return max rel error."""
        live = self.live_indices()
        cached = self.rates[live].copy()
        cached_total = self._total_rate
        self.recompute_rates()
        fresh = self.rates[live]
        scale = np.maximum(np.abs(fresh), 1e-300)
        err = float(np.max(np.abs(cached - fresh) / scale)) if len(live) else 0.0
        if err > rel_tol:
            raise CoagulationError(
                f"rate cache drifted: max relative error {err:.3e} > {rel_tol:.1e}")
        total_scale = max(abs(self._total_rate), 1e-300)
        total_err = abs(cached_total - self._total_rate) / total_scale
        return max(err, float(total_err))

    # -- the one state mutation ------------------------------------------

    def apply_coagulation(self, i: int, j: int, z: ClusterType,
                          row_i: Optional[np.ndarray] = None,
                          live: Optional[np.ndarray] = None) -> int:
        """Merge live clusters i and j into z; return z's (fresh) index.

        ``row_i`` may carry a precomputed rate row of cluster i against
        ``live`` (the caller typically has it from partner selection).
        """
        if i == j:
            raise CoagulationError("cannot coagulate a cluster with itself")
        if not (self.alive[i] and self.alive[j]):
            raise CoagulationError(f"clusters {i}, {j} must both be live")
        xi, xj = self.clusters[i], self.clusters[j]
        expected = xi.mass + xj.mass
        if abs(z.mass - expected) > MASS_REL_TOL * max(abs(expected), 1.0):
            raise CoagulationError(
                f"offspring mass {z.mass} != {xi.mass} + {xj.mass}")
        if len(z.labels) != len(xi.labels) + len(xj.labels):
            raise CoagulationError("offspring labels must be the disjoint union of parents'")
        if self.next_slot >= self._capacity:
            raise CoagulationError("configuration capacity exhausted")

        if live is None:
            live = self.live_indices()
        pos_i = int(self._pos[i])
        pos_j = int(self._pos[j])
        if row_i is None:
            row_i = self._rate_row(xi, live)
            row_i[pos_i] = 0.0
        row_j = self._rate_row(xj, live)
        row_j[pos_j] = 0.0
        rate_ij = float(row_i[pos_j])
        r_i_old, r_j_old = float(self.rates[i]), float(self.rates[j])

        new = self.next_slot
        self.next_slot += 1
        self.clusters[i] = self.clusters[j] = None
        self.clusters[new] = z
        self.masses[new] = z.mass
        if z.mass > self.max_mass:
            self.max_mass = float(z.mass)
        if self.positions is not None:
            if z.position is None:
                raise CoagulationError("offspring must carry a position in a spatial run")
            self.positions[new] = z.position
        if self._mass_cache is not None:
            self._mass_cache[new] = float(self.kernel.mass_cache_fn(np.array([z.mass]))[0])

        row_z = self._rate_row(z, live)
        row_z[pos_i] = row_z[pos_j] = 0.0
        delta = row_z - row_i - row_j
        delta[pos_i] = delta[pos_j] = 0.0
        self.rates[live] = np.maximum(self.rates[live] + delta, 0.0)
        r_new = float(row_z.sum())

        # pair clocks i-* and j-* die (including i-j, counted once), z-* appear
        self._total_rate += r_new - r_i_old - r_j_old + rate_ij
        if self._total_rate < 0.0:
            self._total_rate = 0.0

        self.alive[i] = self.alive[j] = False
        self.alive[new] = True
        self.masses[i] = self.masses[j] = 0.0
        self.rates[i] = self.rates[j] = 0.0
        self.rates[new] = r_new
        self._remove_live(i)
        self._remove_live(j)
        self._append_live(new)

        self.total_mass += z.mass - expected

        self._events_since_recompute += 1
        if self._events_since_recompute >= self.recompute_every:
            self.recompute_rates()
        return new

    def _remove_live(self, slot: int) -> None:
        pos = int(self._pos[slot])
        last = self.count - 1
        moved = int(self._live[last])
        self._live[pos] = moved
        self._pos[moved] = pos
        self._pos[slot] = -1
        self.count -= 1

    def _append_live(self, slot: int) -> None:
        self._live[self.count] = slot
        self._pos[slot] = self.count
        self.count += 1

    # -- misc -------------------------------------------------------------

    def copy(self) -> "Configuration":
        dup = object.__new__(Configuration)
        dup.kernel = self.kernel
        dup.n_param = self.n_param
        dup.recompute_every = self.recompute_every
        dup._capacity = self._capacity
        dup.clusters = list(self.clusters)
        dup.masses = self.masses.copy()
        dup.alive = self.alive.copy()
        dup.rates = self.rates.copy()
        dup._live = self._live.copy()
        dup._pos = self._pos.copy()
        dup.positions = None if self.positions is None else self.positions.copy()
        dup.count = self.count
        dup.next_slot = self.next_slot
        dup.max_mass = self.max_mass
        dup.total_mass = self.total_mass
        dup._founding_labels = self._founding_labels
        dup._mass_cache = None if self._mass_cache is None else self._mass_cache.copy()
        dup._total_rate = self._total_rate
        dup._events_since_recompute = self._events_since_recompute
        return dup

    def check_mass_invariant(self, rel_tol: float = MASS_REL_TOL) -> None:
        fresh = float(self.masses[self.alive].sum())
        if abs(fresh - self.total_mass) > rel_tol * max(fresh, 1.0):
            raise CoagulationError(
                f"cached total mass {self.total_mass} != {fresh}")

    def label_partition_ok(self) -> bool:
        """True when live label sets are disjoint and cover the founding index set."""
        seen: set[int] = set()
        total = 0
        for c in self.live_clusters():
            labels = _as_labelset(c.labels).as_frozenset()
            if seen & labels:
                return False
            seen |= labels
            total += len(labels)
        return total == len(self._founding_labels) and seen == self._founding_labels

    def __repr__(self) -> str:
        return (f"Configuration(count={self.count}, n_param={self.n_param}, "
                f"total_mass={self.total_mass:.6g}, total_rate={self._total_rate:.6g})")


def total_mass(config: Configuration) -> float:
    """Sum of live cluster masses (equals the cached aggregate)."""
    return float(config.masses[config.alive].sum())


def mass_above(config: Configuration, threshold: float, strict: bool = False) -> float:
    return config.mass_above(threshold, strict=strict)


def apply_coagulation(config: Configuration, i: int, j: int, z: ClusterType) -> Configuration:
    """Functional wrapper over ``Configuration.apply_coagulation`` (mutates and returns config)."""
    config.apply_coagulation(i, j, z)
    return config


def center_of_mass(p: np.ndarray, n: float, s: np.ndarray, o: float) -> np.ndarray:
    return (n * np.asarray(p, dtype=float) + o * np.asarray(s, dtype=float)) / (n + o)


def log2_band(mass: float) -> int:
    """Dyadic band index j with 2^j <= mass < 2^(j+1)."""
    if mass < 1.0:
        raise CoagulationError("band index defined for mass >= 1")
    return int(math.floor(math.log2(mass)))
