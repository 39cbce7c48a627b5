"""Coupling of the coagulation process with an inhomogeneous random graph.

The associated graph lives on the founding clusters (mono-dispersed, mass
1): each vertex pair carries an exponential edge clock at the pair rate of
the founding types, divided by N in normalized time.

For a graph *dominating* kernel the merged cluster reacts at least as fast
as its parents combined, so each coagulation pair clock can be realized as
the minimum of the cross-component edge clocks between the two clusters
plus an independent residual clock of rate r >= 0.  On that construction
the graph components refine the coagulation clusters at every instant and
cluster masses dominate component sizes.  For a graph *dominated* kernel
the mirror construction makes the clusters refine the components.

``operator_norm`` estimates the spectral norm of the kernel integral
operator against the empirical initial measure; its inverse is the
critical time of the associated graph and bounds the strong gelation
time from the matching side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ClusterType, Configuration, TimeMode
from .kernels import Domination, KernelSpec
from .simulator import (Event, Trajectory, exponential_gap, select_pair,
                        stream, _pick)


class CouplingError(RuntimeError):
    """Domination violated at runtime or the refinement invariant broke."""


class NumericsError(RuntimeError):
    pass


# -- union-find ----------------------------------------------------------------

class UnionFind:
    """Disjoint sets over range(n): path compression, union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.n_components = n

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i: int, j: int) -> int:
        """Merge the sets of i and j; returns the surviving root."""
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return ri
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        self.n_components -= 1
        return ri

    def roots(self) -> np.ndarray:
        return np.asarray([self.find(i) for i in range(len(self.parent))])

    def component_sizes(self) -> np.ndarray:
        roots = self.roots()
        counts = np.bincount(roots, minlength=len(self.parent))
        return counts[counts > 0]


# -- static graph snapshot ---------------------------------------------------------

@dataclass
class GraphState:
    """Random graph over the founding clusters at a fixed normalized time."""

    vertex_types: tuple[ClusterType, ...]
    uf: UnionFind
    time: float
    n_param: int

    def component_sizes(self) -> np.ndarray:
        return self.uf.component_sizes()

    def largest_component(self) -> int:
        sizes = self.component_sizes()
        return int(sizes.max()) if len(sizes) else 0

    def size_histogram(self) -> dict[int, int]:
        sizes, counts = np.unique(self.component_sizes(), return_counts=True)
        return {int(s): int(c) for s, c in zip(sizes, counts)}


def _require_mono_dispersed(vertex_types: Sequence[ClusterType]) -> None:
    for c in vertex_types:
        if c.mass != 1.0:
            raise CouplingError("the associated graph requires mass-1 founding clusters")


def sample_graph_at(vertex_types: Sequence[ClusterType], kernel: KernelSpec,
                    t: float, seed: int, n_param: Optional[int] = None) -> GraphState:
    """Snapshot of the associated graph at normalized time t.

    Each vertex pair is present independently with probability
    1 - exp(-rate(x_i, x_j) t / N); pairs with zero rate are skipped for
    free by the vectorized row scan.
    """
    vertex_types = tuple(vertex_types)
    _require_mono_dispersed(vertex_types)
    n = len(vertex_types)
    n_param = n_param or n
    if t < 0:
        raise ValueError("t must be non-negative")

    masses = np.asarray([c.mass for c in vertex_types])
    positions = None
    if n and vertex_types[0].position is not None:
        positions = np.stack([c.position for c in vertex_types])

    uf = UnionFind(n)
    rng = stream(seed)
    for i in range(n - 1):
        tail = slice(i + 1, n)
        row = kernel.rate_row(vertex_types[i], masses[tail],
                              None if positions is None else positions[tail])
        p = -np.expm1(-np.asarray(row, dtype=float) * (t / n_param))
        hits = np.flatnonzero(rng.random(n - 1 - i) < p)
        for h in hits:
            uf.union(i, i + 1 + int(h))
    return GraphState(vertex_types=vertex_types, uf=uf, time=t, n_param=n_param)


# -- operator norm and critical time -------------------------------------------------

def operator_norm(vertex_types: Sequence[ClusterType], kernel: KernelSpec,
                  weights: Optional[Sequence[float]] = None,
                  n_param: Optional[int] = None,
                  tol: float = 1e-10, max_iter: int = 100_000,
                  seed: int = 5) -> tuple[float, float]:
    """Spectral norm of f -> sum_j f(x_j) rate(x_i, x_j) w_j and the critical
    time 1/sigma (inf when sigma == 0).

    ``weights`` default to mass/N per vertex (the empirical initial
    measure); duplicate types may be collapsed beforehand with aggregated
    weights.  Power iteration on the symmetrized matrix, tolerance on the
    Rayleigh quotient.
    """
    vertex_types = tuple(vertex_types)
    n = len(vertex_types)
    if n == 0:
        raise ValueError("need at least one vertex type")
    n_param = n_param or n
    masses = np.asarray([c.mass for c in vertex_types])
    if weights is None:
        w = masses / n_param
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0):
            raise ValueError("weights must be a non-negative vector, one per vertex")

    positions = None
    if vertex_types[0].position is not None:
        positions = np.stack([c.position for c in vertex_types])

    m = np.empty((n, n))
    for i in range(n):
        m[i] = kernel.rate_row(vertex_types[i], masses, positions)
    if not np.all(np.isfinite(m)):
        raise NumericsError("kernel matrix has non-finite entries")

    sqw = np.sqrt(w)
    b = sqw[:, None] * m * sqw[None, :]
    if not b.any():
        return 0.0, math.inf

    rng = np.random.default_rng(seed)
    v = np.ones(n) + 1e-3 * rng.random(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        bv = b @ v
        norm = np.linalg.norm(bv)
        if norm == 0.0:
            # started orthogonal to the range; re-perturb
            v = rng.random(n)
            v /= np.linalg.norm(v)
            continue
        v_new = bv / norm
        sigma_new = float(v_new @ (b @ v_new))
        if abs(sigma_new - sigma) <= tol * max(1.0, abs(sigma_new)):
            sigma = sigma_new
            break
        sigma, v = sigma_new, v_new
    else:
        residual = float(np.linalg.norm(b @ v - sigma * v))
        raise NumericsError(
            f"power iteration did not converge in {max_iter} iterations "
            f"(residual {residual:.3e})")

    t_star = math.inf if sigma <= 0.0 else 1.0 / sigma
    return sigma, t_star


# -- the pathwise coupling ---------------------------------------------------------------

@dataclass(slots=True)
class GraphEvent:
    """A component merge in the coupled graph: any two member vertices plus
    the component sizes just before the merge."""

    time: float
    vertex_a: int
    vertex_b: int
    size_a: int
    size_b: int


@dataclass(slots=True)
class CouplingRecord:
    time: float
    kind: str  # joint | coag_only | graph_only
    residual: Optional[float]


@dataclass
class CouplingState:
    """Final partitions of the founding index set plus the residual ledger."""

    direction: Domination
    coag_partition: list[frozenset]
    graph_partition: list[frozenset]
    residual_ledger: list[CouplingRecord]

    def refines(self) -> bool:
        """Graph refines coagulation (dominating) or the reverse (dominated)."""
        fine, coarse = self.graph_partition, self.coag_partition
        if self.direction is Domination.DOMINATED:
            fine, coarse = coarse, fine
        lookup = {}
        for k, block in enumerate(coarse):
            for v in block:
                lookup[v] = k
        for block in fine:
            owners = {lookup.get(v, -1) for v in block}
            if len(owners) != 1 or -1 in owners:
                return False
        return True


@dataclass
class CouplingResult:
    direction: Domination
    coag: Trajectory
    graph_events: list[GraphEvent]
    records: list[CouplingRecord]
    vertex_types: tuple[ClusterType, ...]
    n_param: int
    seed: Optional[int]
    final_time: float

    def final_state(self) -> CouplingState:
        coag_part = [c.labels.as_frozenset() if hasattr(c.labels, "as_frozenset")
                     else frozenset(c.labels) for c in _final_clusters(self)]
        uf = UnionFind(len(self.vertex_types))
        for e in self.graph_events:
            uf.union(e.vertex_a, e.vertex_b)
        groups: dict[int, set] = {}
        for v in range(len(self.vertex_types)):
            groups.setdefault(uf.find(v), set()).add(v)
        return CouplingState(
            direction=self.direction,
            coag_partition=coag_part,
            graph_partition=[frozenset(g) for g in groups.values()],
            residual_ledger=list(self.records),
        )


def _final_clusters(result: CouplingResult) -> list[ClusterType]:
    masses: dict[int, ClusterType] = {k: c for k, c in enumerate(result.coag.initial)}
    n0 = len(result.coag.initial)
    for k, e in enumerate(result.coag.events):
        masses.pop(e.left, None)
        masses.pop(e.right, None)
        masses[n0 + k] = e.offspring
    return list(masses.values())


class _CoupledEngine:
    """Shared machinery for both coupling directions.

    Keeps the vertex-level normalized rate matrix, the graph union-find with
    per-component vertex arrays, and the coagulation configuration whose
    slots are the coupling's cluster identities.
    """

    def __init__(self, initial: Sequence[ClusterType], kernel: KernelSpec,
                 n_param: int, rng: np.random.Generator, verify_every: int = 1):
        _require_mono_dispersed(initial)
        if kernel.domination not in (Domination.DOMINATING, Domination.DOMINATED):
            raise CouplingError(
                f"kernel {kernel.name!r} has domination class "
                f"{kernel.domination.value!r}; the coupling needs dominating or dominated")
        self.kernel = kernel
        self.rng = rng
        self.n = len(initial)
        self.n_param = n_param
        self.verify_every = verify_every
        self.config = Configuration(list(initial), kernel, n_param)

        masses = self.config.masses[: self.n]
        positions = None if self.config.positions is None else self.config.positions[: self.n]
        kv = np.empty((self.n, self.n))
        for i in range(self.n):
            kv[i] = kernel.rate_row(initial[i], masses, positions)
        np.fill_diagonal(kv, 0.0)
        self.kv = kv / n_param  # vertex pair rates in normalized time

        self.uf = UnionFind(self.n)
        self.verts_of: dict[int, np.ndarray] = {i: np.array([i]) for i in range(self.n)}
        self.graph_events: list[GraphEvent] = []
        self.records: list[CouplingRecord] = []
        self.events: list[Event] = []
        self.t = 0.0
        self._since_verify = 0

    # vertex bookkeeping ----------------------------------------------------

    def graph_union(self, ra: int, rb: int, t: float) -> int:
        va, vb = self.verts_of[ra], self.verts_of[rb]
        self.graph_events.append(GraphEvent(t, int(va[0]), int(vb[0]), len(va), len(vb)))
        keep = self.uf.union(ra, rb)
        lost = rb if keep == ra else ra
        self.verts_of[keep] = np.concatenate([self.verts_of[keep], self.verts_of[lost]])
        del self.verts_of[lost]
        return keep

    def kappa_between(self, roots_a: Sequence[int], roots_b: Sequence[int]) -> np.ndarray:
        """Matrix of summed vertex rates between two lists of components."""
        va = [self.verts_of[r] for r in roots_a]
        vb = [self.verts_of[r] for r in roots_b]
        all_a = np.concatenate(va)
        all_b = np.concatenate(vb)
        sub = self.kv[np.ix_(all_a, all_b)]
        bounds_a = np.cumsum([0] + [len(x) for x in va])[:-1]
        bounds_b = np.cumsum([0] + [len(x) for x in vb])[:-1]
        return np.add.reduceat(np.add.reduceat(sub, bounds_a, axis=0), bounds_b, axis=1)

    def coag_merge(self, i: int, j: int, t: float,
                   row: Optional[np.ndarray] = None,
                   live: Optional[np.ndarray] = None) -> tuple[int, ClusterType]:
        z = self.kernel.offspring(self.config.clusters[i], self.config.clusters[j], self.rng)
        new = self.config.apply_coagulation(i, j, z, row_i=row, live=live)
        self.events.append(Event(time=t, left=i, right=j, offspring=z))
        return new, z


def coupled_run(initial: Sequence[ClusterType] | Configuration,
                kernel: Optional[KernelSpec] = None,
                horizon: float = math.inf,
                seed: int = 0,
                n_param: Optional[int] = None,
                verify_every: int = 1) -> CouplingResult:
    """Run the coagulation process jointly with its associated graph.

    The kernel must be declared dominating or dominated; the refinement
    invariant is re-verified every ``verify_every`` events and every
    residual rate is checked non-negative (a violation raises
    ``CouplingError`` with the witnessing clusters).
    Returns both marginals; each is distributed as its own process.
    """
    if isinstance(initial, Configuration):
        clusters = initial.live_clusters()
        kernel = kernel or initial.kernel
        n_param = n_param or initial.n_param
    else:
        clusters = list(initial)
        if kernel is None:
            raise ValueError("kernel is required")
        n_param = n_param or len(clusters)

    rng = stream(seed)
    eng = _CoupledEngine(clusters, kernel, n_param, rng, verify_every)
    if kernel.domination is Domination.DOMINATING:
        _run_dominating(eng, horizon)
    else:
        _run_dominated(eng, horizon)

    traj = Trajectory(
        initial=tuple(clusters), n_param=n_param, seed=seed,
        mode=TimeMode.NORMALIZED, events=eng.events,
        final_time=min(horizon, eng.t) if math.isfinite(horizon) else eng.t,
        absorbed=eng.config.count <= 1,
    )
    return CouplingResult(
        direction=kernel.domination, coag=traj, graph_events=eng.graph_events,
        records=eng.records, vertex_types=tuple(clusters), n_param=n_param,
        seed=seed, final_time=traj.final_time,
    )


# -- dominating direction: graph refines coagulation -------------------------------

def _run_dominating(eng: _CoupledEngine, horizon: float) -> None:
    config, rng, kv = eng.config, eng.rng, eng.kv
    # components inside each cluster slot and the internal cross-component rate
    comps_of: dict[int, list[int]] = {i: [i] for i in range(eng.n)}
    w_in: dict[int, float] = {i: 0.0 for i in range(eng.n)}

    while True:
        lam_coag = config.total_rate / eng.n_param
        lam_int = sum(w_in.values())
        total = lam_coag + lam_int
        if total <= 0.0:
            return
        gap = exponential_gap(rng, total)
        if eng.t + gap > horizon:
            eng.t = horizon
            return
        t = eng.t + gap

        if rng.random() * total < lam_coag:
            _dominating_coag_event(eng, comps_of, w_in, t)
        else:
            _dominating_internal_edge(eng, comps_of, w_in, t)
        eng.t = t
        _verify_refinement(eng, comps_of)


def _dominating_coag_event(eng: _CoupledEngine, comps_of, w_in, t: float) -> None:
    config, rng = eng.config, eng.rng
    i, j, row, live = select_pair(config, rng)
    rate_norm = config.kernel.rate(config.clusters[i], config.clusters[j]) / eng.n_param

    kappa_grid = eng.kappa_between(comps_of[i], comps_of[j])
    kappa_total = float(kappa_grid.sum())
    residual = rate_norm - kappa_total
    scale = max(rate_norm, 1e-300)
    if residual < -1e-9 * scale:
        raise CouplingError(
            f"domination violated: pair rate {rate_norm:.12g} < summed edge "
            f"rates {kappa_total:.12g} for clusters {i} (mass {config.masses[i]}) "
            f"and {j} (mass {config.masses[j]})")
    residual = max(residual, 0.0)
    if residual < 1e-12 * scale:
        residual = 0.0

    crossing = rng.random() * rate_norm < kappa_total
    if crossing:
        flat = _pick(kappa_grid.ravel(), rng)
        a = comps_of[i][flat // kappa_grid.shape[1]]
        b = comps_of[j][flat % kappa_grid.shape[1]]
        keep = eng.graph_union(a, b, t)
        merged_kappa = float(kappa_grid[comps_of[i].index(a), comps_of[j].index(b)])
        new_comps = [c for c in comps_of[i] + comps_of[j] if c != a and c != b] + [keep]
        kind = "joint"
    else:
        merged_kappa = 0.0
        new_comps = comps_of[i] + comps_of[j]
        kind = "coag_only"

    new, _z = eng.coag_merge(i, j, t, row=row, live=live)
    comps_of[new] = new_comps
    w_in[new] = w_in.pop(i) + w_in.pop(j) + kappa_total - merged_kappa
    del comps_of[i], comps_of[j]
    eng.records.append(CouplingRecord(time=t, kind=kind, residual=residual))


def _dominating_internal_edge(eng: _CoupledEngine, comps_of, w_in, t: float) -> None:
    rng = eng.rng
    slots = [s for s, w in w_in.items() if w > 0.0]
    weights = np.asarray([w_in[s] for s in slots])
    slot = slots[_pick(weights, rng)]
    comps = comps_of[slot]
    grid = eng.kappa_between(comps, comps)
    pairs = np.triu(grid, k=1)
    flat = _pick(pairs.ravel(), rng)
    a = comps[flat // pairs.shape[1]]
    b = comps[flat % pairs.shape[1]]
    kappa_ab = float(pairs.ravel()[flat])
    keep = eng.graph_union(a, b, t)
    comps_of[slot] = [c for c in comps if c != a and c != b] + [keep]
    w_in[slot] -= kappa_ab
    if w_in[slot] < 0.0:
        w_in[slot] = 0.0
    eng.records.append(CouplingRecord(time=t, kind="graph_only", residual=None))


def _verify_refinement(eng: _CoupledEngine, comps_of: dict[int, list[int]]) -> None:
    eng._since_verify += 1
    if eng._since_verify < eng.verify_every:
        return
    eng._since_verify = 0
    counts = np.zeros(eng.n, dtype=int)
    for slot, comps in comps_of.items():
        if not eng.config.alive[slot]:
            raise CouplingError(f"component list attached to dead cluster {slot}")
        total = 0
        for root in comps:
            if eng.uf.find(root) != root:
                raise CouplingError(f"stale component root {root} in cluster {slot}")
            verts = eng.verts_of[root]
            counts[verts] += 1
            total += len(verts)
        if total != int(round(eng.config.masses[slot])):
            raise CouplingError(
                f"cluster {slot} mass {eng.config.masses[slot]} != {total} coupled vertices")
    if np.any(counts != 1):
        raise CouplingError("graph components do not partition the founding set")


# -- dominated direction: coagulation refines the graph ------------------------------

def _run_dominated(eng: _CoupledEngine, horizon: float) -> None:
    config, rng = eng.config, eng.rng
    n = eng.n
    # graph component root -> coag cluster slots inside it, and the internal
    # normalized coagulation rate among those slots
    clusters_of: dict[int, list[int]] = {i: [i] for i in range(n)}
    w_in: dict[int, float] = {i: 0.0 for i in range(n)}
    root_of_vertex = np.arange(n)
    rowsum = eng.kv.sum(axis=1)
    # per component: total vertex rate to everywhere (s) and internal vertex
    # rate counted in both orders (i); the cross rate is (s - i) / 2 summed
    s_of: dict[int, float] = {i: float(rowsum[i]) for i in range(n)}
    i_of: dict[int, float] = {i: 0.0 for i in range(n)}

    def cluster_pair_rates(slots_a: list[int], slots_b: list[int]) -> np.ndarray:
        out = np.empty((len(slots_a), len(slots_b)))
        idx_b = np.asarray(slots_b)
        pos_b = None if config.positions is None else config.positions[idx_b]
        for k, sa in enumerate(slots_a):
            out[k] = config.kernel.rate_row(config.clusters[sa],
                                            config.masses[idx_b], pos_b)
        return out / eng.n_param

    while True:
        lam_cross = 0.5 * sum(max(s_of[r] - i_of[r], 0.0) for r in clusters_of)
        lam_coag_in = sum(w_in.values())
        total = lam_cross + lam_coag_in
        if total <= 0.0:
            return
        gap = exponential_gap(rng, total)
        if eng.t + gap > horizon:
            eng.t = horizon
            return
        t = eng.t + gap

        if rng.random() * total < lam_coag_in:
            # a coagulation strictly inside one graph component
            roots = [r for r, w in w_in.items() if w > 0.0]
            weights = np.asarray([w_in[r] for r in roots])
            root = roots[_pick(weights, rng)]
            slots = clusters_of[root]
            grid = cluster_pair_rates(slots, slots)
            pairs = np.triu(grid, k=1)
            flat = _pick(pairs.ravel(), rng)
            i = slots[flat // pairs.shape[1]]
            j = slots[flat % pairs.shape[1]]
            _dominated_coag_update(eng, clusters_of, w_in, root, i, j, t,
                                   cluster_pair_rates)
            eng.records.append(CouplingRecord(time=t, kind="coag_only", residual=None))
        else:
            # an edge between two graph components
            roots = list(clusters_of.keys())
            weights = np.asarray([max(s_of[r] - i_of[r], 0.0) for r in roots])
            ra = roots[_pick(weights, rng)]
            va = eng.verts_of[ra]
            col = eng.kv[va].sum(axis=0)
            per_root = np.bincount(root_of_vertex, weights=col, minlength=n)
            per_root[ra] = 0.0
            rb_candidates = [r for r in roots if r != ra]
            wb = np.asarray([per_root[r] for r in rb_candidates])
            rb = rb_candidates[_pick(wb, rng)]
            kappa_ab = float(per_root[rb])

            slots_a, slots_b = clusters_of[ra], clusters_of[rb]
            grid = cluster_pair_rates(slots_a, slots_b)
            coag_cross = float(grid.sum())
            residual = kappa_ab - coag_cross
            scale = max(kappa_ab, 1e-300)
            if residual < -1e-9 * scale:
                raise CouplingError(
                    f"domination violated: edge rate {kappa_ab:.12g} < summed "
                    f"cluster rates {coag_cross:.12g} between components {ra} and {rb}")
            residual = max(residual, 0.0)

            joint = rng.random() * kappa_ab < coag_cross
            if joint:
                flat = _pick(grid.ravel(), rng)
                i = slots_a[flat // grid.shape[1]]
                j = slots_b[flat % grid.shape[1]]

            keep = eng.graph_union(ra, rb, t)
            merged_slots = clusters_of.pop(ra) + clusters_of.pop(rb)
            clusters_of[keep] = merged_slots
            w_keep = w_in.pop(ra) + w_in.pop(rb) + coag_cross
            s_keep = s_of.pop(ra) + s_of.pop(rb)
            i_keep = i_of.pop(ra) + i_of.pop(rb) + 2.0 * kappa_ab
            w_in[keep], s_of[keep], i_of[keep] = w_keep, s_keep, i_keep
            root_of_vertex[eng.verts_of[keep]] = keep

            if joint:
                _dominated_coag_update(eng, clusters_of, w_in, keep, i, j, t,
                                       cluster_pair_rates)
                eng.records.append(CouplingRecord(time=t, kind="joint", residual=residual))
            else:
                eng.records.append(CouplingRecord(time=t, kind="graph_only", residual=residual))

        eng.t = t
        _verify_dominated(eng, clusters_of)


def _dominated_coag_update(eng: _CoupledEngine, clusters_of, w_in, root,
                           i: int, j: int, t: float, cluster_pair_rates) -> None:
    """Merge coag clusters i and j inside graph component ``root`` and patch the
    component's internal coagulation rate (pair rates through the merged
    cluster replace the parents', and the kernel is not additive)."""
    slots = clusters_of[root]
    others = [s for s in slots if s != i and s != j]
    removed = 0.0
    if others:
        removed = float(cluster_pair_rates([i], others).sum()
                        + cluster_pair_rates([j], others).sum())
    removed += float(cluster_pair_rates([i], [j])[0, 0])
    new, _z = eng.coag_merge(i, j, t)
    added = float(cluster_pair_rates([new], others).sum()) if others else 0.0
    clusters_of[root] = others + [new]
    w_in[root] += added - removed
    if w_in[root] < 0.0:
        w_in[root] = 0.0


def _verify_dominated(eng: _CoupledEngine, clusters_of: dict[int, list[int]]) -> None:
    eng._since_verify += 1
    if eng._since_verify < eng.verify_every:
        return
    eng._since_verify = 0
    counts = np.zeros(eng.n, dtype=int)
    seen = 0
    for root, slots in clusters_of.items():
        if eng.uf.find(root) != root:
            raise CouplingError(f"stale graph root {root}")
        comp_size = len(eng.verts_of[root])
        mass = 0.0
        for slot in slots:
            if not eng.config.alive[slot]:
                raise CouplingError(f"dead cluster {slot} attached to component {root}")
            labels = eng.config.clusters[slot].labels
            for v in labels:
                counts[v] += 1
            mass += eng.config.masses[slot]
            seen += 1
        if int(round(mass)) != comp_size:
            raise CouplingError(
                f"component {root} holds mass {mass} over {comp_size} vertices")
    if seen != eng.config.count or np.any(counts != 1):
        raise CouplingError("coagulation clusters do not partition the founding set")


# -- coupled-output comparisons ------------------------------------------------------

def domination_check(result: CouplingResult, j: float,
                     direction: Optional[Domination] = None) -> list[bool]:
    """At every event time of the coupled pair, compare the coagulation mass in
    clusters of mass >= j with the graph mass in components of size >= j,
    oriented by the coupling direction.  Returns one boolean per event.
    """
    direction = direction or result.direction
    n0 = len(result.coag.initial)

    masses = np.zeros(n0 + len(result.coag.events))
    for k, c in enumerate(result.coag.initial):
        masses[k] = c.mass
    coag_side = float(masses[masses >= j].sum())

    sizes = np.ones(n0)
    graph_side = float(sizes[sizes >= j].sum()) if j <= 1 else 0.0

    # joint events land one coag and one graph update at the same instant;
    # apply the growing side of the inequality first so the comparison is
    # evaluated only at fully-updated states
    coag_first = 0 if direction is Domination.DOMINATING else 1
    coag_stream = [(float(t), coag_first, "c", k)
                   for k, t in enumerate(result.coag.normalized_times())]
    graph_stream = [(e.time, 1 - coag_first, "g", k)
                    for k, e in enumerate(result.graph_events)]
    merged = sorted(coag_stream + graph_stream, key=lambda item: (item[0], item[1]))

    comp_size: dict[int, float] = {}
    uf = UnionFind(n0)

    out: list[bool] = []
    for t, _prio, which, k in merged:
        if which == "c":
            e = result.coag.events[k]
            ml, mr = masses[e.left], masses[e.right]
            m = e.offspring.mass
            if ml >= j:
                coag_side -= ml
            if mr >= j:
                coag_side -= mr
            if m >= j:
                coag_side += m
            masses[e.left] = masses[e.right] = 0.0
            masses[n0 + k] = m
        else:
            e = result.graph_events[k]
            ra, rb = uf.find(e.vertex_a), uf.find(e.vertex_b)
            sa = comp_size.get(ra, 1.0)
            sb = comp_size.get(rb, 1.0)
            keep = uf.union(e.vertex_a, e.vertex_b)
            comp_size[keep] = sa + sb
            if sa >= j:
                graph_side -= sa
            if sb >= j:
                graph_side -= sb
            if sa + sb >= j:
                graph_side += sa + sb
        if direction is Domination.DOMINATING:
            out.append(coag_side >= graph_side - 1e-9)
        else:
            out.append(coag_side <= graph_side + 1e-9)
    return out


def graph_component_sizes_at(result: CouplingResult, t: float) -> np.ndarray:
    """Component sizes of the coupled graph marginal at normalized time t."""
    uf = UnionFind(len(result.vertex_types))
    for e in result.graph_events:
        if e.time > t:
            break
        uf.union(e.vertex_a, e.vertex_b)
    return uf.component_sizes()
