"""Exact event-driven simulation of the coagulation jump process.

Each unordered pair of live clusters carries an exponential clock at the
pair rate (divided by N in normalized time).  Instead of materializing
all pair clocks, ``step`` uses the equivalent two-stage direct method:

  1. waiting time ~ Exp(total_rate / N),
  2. pick cluster i with probability rates[i] / sum(rates),
  3. pick partner j != i with probability rate(x_i, x_j) / rates[i],

which selects the unordered pair {i, j} with probability
rate(x_i, x_j) / total_rate, exactly the race of the pair clocks.

Randomness comes from a counter-based 64-bit generator (Philox); replica
streams are derived injectively from (master_seed, replica_index, N) so
ensembles are reproducible under any parallelism.  Exponentials are drawn
by inverse CDF, one uniform per draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import ClusterType, Configuration, TimeMode
from .kernels import KernelSpec


class SimulationError(RuntimeError):
    """The engine hit a non-finite rate or a failing observer."""


# -- reproducible streams -------------------------------------------------

_MASK32 = (1 << 32) - 1
_MASK64 = (1 << 64) - 1


def derive_stream_key(master_seed: int, replica_index: int = 0, n_param: int = 0) -> int:
    """128-bit Philox key, injective in (master_seed, replica_index, n_param).

    Requires master_seed < 2^64 and replica_index, n_param < 2^32.
    """
    if not (0 <= master_seed <= _MASK64):
        raise ValueError("master_seed must fit in 64 bits")
    if not (0 <= replica_index <= _MASK32 and 0 <= n_param <= _MASK32):
        raise ValueError("replica_index and n_param must fit in 32 bits")
    return (master_seed << 64) | (replica_index << 32) | n_param


def stream(master_seed: int, replica_index: int = 0, n_param: int = 0) -> np.random.Generator:
    key = derive_stream_key(master_seed, replica_index, n_param)
    return np.random.Generator(np.random.Philox(key=key))


def exponential_gap(rng: np.random.Generator, rate: float) -> float:
    """Exp(rate) by inverse CDF; strictly positive."""
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return -math.log1p(-u) / rate


# -- events and trajectories ----------------------------------------------

@dataclass(slots=True)
class Event:
    """One coagulation: strictly increasing times, offspring mass = sum of parents."""

    time: float
    left: int
    right: int
    offspring: ClusterType


@dataclass
class Trajectory:
    """Everything needed to replay a run: initial clusters, seed, events.

    Event times are in ``mode`` units; ``normalized_times`` converts.
    The offspring of event k lives at configuration slot n0 + k, where n0
    is the initial cluster count (slots are stable, see Configuration).
    """

    initial: tuple[ClusterType, ...]
    n_param: int
    seed: Optional[int]
    mode: TimeMode = TimeMode.NORMALIZED
    events: list[Event] = field(default_factory=list)
    final_time: float = 0.0
    absorbed: bool = False

    @property
    def n_initial(self) -> int:
        return len(self.initial)

    def normalized_times(self) -> np.ndarray:
        t = np.asarray([e.time for e in self.events])
        return t if self.mode is TimeMode.NORMALIZED else t * self.n_param

    def normalized_final_time(self) -> float:
        return self.final_time if self.mode is TimeMode.NORMALIZED else self.final_time * self.n_param

    def offspring_index(self, event_ordinal: int) -> int:
        return self.n_initial + event_ordinal

    def replay(self, kernel: KernelSpec, upto: Optional[int] = None) -> Configuration:
        """Rebuild the configuration after the first ``upto`` events (all by default)."""
        config = Configuration(list(self.initial), kernel, self.n_param)
        events = self.events if upto is None else self.events[:upto]
        for e in events:
            config.apply_coagulation(e.left, e.right, e.offspring)
        return config


# -- stop conditions --------------------------------------------------------

class StopCondition:
    """Decides when ``run`` halts; ``horizon`` is checked before an event
    lands, everything else after."""

    horizon: float = math.inf

    def done(self, config: Configuration, n_events: int, t: float) -> bool:
        return False


@dataclass
class HorizonStop(StopCondition):
    horizon: float = math.inf


@dataclass
class EventCountStop(StopCondition):
    max_events: int = 0
    horizon: float = math.inf

    def done(self, config, n_events, t):
        return n_events >= self.max_events


@dataclass
class ClusterFloorStop(StopCondition):
    min_clusters: int = 1
    horizon: float = math.inf

    def done(self, config, n_events, t):
        return config.count <= self.min_clusters


@dataclass
class PredicateStop(StopCondition):
    """Wraps any (config, n_events, t) -> bool rule, e.g. a gelation rule."""

    predicate: Callable[[Configuration, int, float], bool] = lambda c, k, t: False
    horizon: float = math.inf

    def done(self, config, n_events, t):
        return self.predicate(config, n_events, t)


# -- the engine --------------------------------------------------------------

def _pick(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Index with probability proportional to non-negative weights."""
    cum = np.cumsum(weights)
    pos = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    pos = min(pos, len(weights) - 1)
    while pos > 0 and weights[pos] == 0.0:
        # only reachable when the uniform draw rounds up onto the total
        pos -= 1
    return pos


def _sample_gap(config: Configuration, rng: np.random.Generator,
                mode: TimeMode) -> Optional[float]:
    """Waiting time to the next event, or None when the process is absorbed."""
    if config.count <= 1:
        return None
    lam = config.total_rate
    if lam <= 0.0:
        return None
    if not math.isfinite(lam):
        raise SimulationError("total rate is not finite")
    scale = config.n_param if mode is TimeMode.NORMALIZED else 1
    return exponential_gap(rng, lam / scale)


def select_pair(config: Configuration, rng: np.random.Generator
                ) -> tuple[int, int, np.ndarray, np.ndarray]:
    """Draw an unordered pair {i, j} with probability rate(x_i, x_j) / total_rate.

    Returns (i, j, rate row of i over live, live indices); the row is reusable
    for the cache update in ``apply_coagulation``.
    """
    live = config.live_indices()
    i_pos = _pick(config.rates[live], rng)
    i = int(live[i_pos])
    xi = config.clusters[i]

    row = config._rate_row(xi, live)
    if not np.all(np.isfinite(row)):
        bad = int(live[int(np.argmax(~np.isfinite(row)))])
        raise SimulationError(f"non-finite rate between clusters {i} and {bad}")
    row[i_pos] = 0.0
    if not row.any():
        raise SimulationError(
            f"cluster {i} was selected with cached rate {config.rates[i]:.3e} "
            "but every live pair rate is zero (cache drift)")
    j_pos = _pick(row, rng)
    j = int(live[j_pos])
    return i, j, row, live


def _select_and_apply(config: Configuration, rng: np.random.Generator) -> tuple[int, int, ClusterType]:
    i, j, row, live = select_pair(config, rng)
    z = config.kernel.offspring(config.clusters[i], config.clusters[j], rng)
    config.apply_coagulation(i, j, z, row_i=row, live=live)
    return i, j, z


def step(config: Configuration, rng: np.random.Generator,
         mode: TimeMode = TimeMode.NORMALIZED,
         t_now: float = 0.0) -> Optional[Event]:
    """Advance one event; None when absorbed (single cluster or zero rate).

    Mutates ``config`` via its single state-mutation entry point.
    """
    gap = _sample_gap(config, rng, mode)
    if gap is None:
        return None
    i, j, z = _select_and_apply(config, rng)
    return Event(time=t_now + gap, left=i, right=j, offspring=z)


def run(initial: Configuration | Sequence[ClusterType],
        kernel: Optional[KernelSpec] = None,
        stop: Optional[StopCondition] = None,
        observers: Iterable[Callable[[Event, Configuration], None]] = (),
        seed: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        n_param: Optional[int] = None,
        mode: TimeMode = TimeMode.NORMALIZED,
        copy: bool = True) -> Trajectory:
    """Run the jump process until the stop condition (default: absorption).

    ``initial`` may be a prepared Configuration (kernel optional then) or a
    cluster sequence (kernel and n_param required).  The caller's
    configuration is copied unless ``copy=False``.
    """
    if isinstance(initial, Configuration):
        config = initial.copy() if copy else initial
        if kernel is not None and kernel is not config.kernel:
            raise ValueError("kernel argument conflicts with the configuration's kernel")
    else:
        if kernel is None:
            raise ValueError("kernel required when initial is a cluster sequence")
        config = Configuration(list(initial), kernel, n_param or len(initial))

    stop = stop or HorizonStop()
    if rng is None:
        rng = stream(seed if seed is not None else 0)
    observers = list(observers)

    traj = Trajectory(
        initial=tuple(config.live_clusters()),
        n_param=config.n_param,
        seed=seed,
        mode=mode,
    )
    t = 0.0
    if stop.horizon <= 0 or stop.done(config, 0, t):
        traj.final_time = max(stop.horizon, 0.0) if math.isfinite(stop.horizon) else 0.0
        return traj

    while True:
        gap = _sample_gap(config, rng, mode)
        if gap is None:
            traj.absorbed = True
            traj.final_time = t
            return traj
        if t + gap > stop.horizon:
            # the next clock overshoots the horizon: the state at the horizon
            # is the current state, so no further event lands
            traj.final_time = stop.horizon
            return traj
        i, j, z = _select_and_apply(config, rng)
        t = t + gap
        event = Event(time=t, left=i, right=j, offspring=z)
        traj.events.append(event)
        for obs in observers:
            try:
                obs(event, config)
            except Exception as exc:
                raise SimulationError(
                    f"observer {obs!r} failed at event {len(traj.events) - 1} "
                    f"(t={t:.6g})") from exc
        if stop.done(config, len(traj.events), t):
            traj.final_time = t
            return traj
