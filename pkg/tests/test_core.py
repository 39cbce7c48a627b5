import numpy as np
import pytest
from hypothesis import given, strategies as st

from coagulab.core import (ClusterType, CoagulationError, Configuration,
                           LabelSet, TimeConvention, TimeMode,
                           mono_dispersed_clusters, total_mass)
from coagulab.kernels import constant, multiplicative
from coagulab.simulator import run, stream


def make_config(masses, kernel=None, n_param=None):
    kernel = kernel or multiplicative()
    clusters = [ClusterType(m, None, {i}) for i, m in enumerate(masses)]
    return Configuration(clusters, kernel, n_param or max(len(masses), 1))


# -- total_mass / mass_above ---------------------------------------------------

def test_total_mass_empty():
    assert total_mass(make_config([])) == 0.0


def test_total_mass_three_units():
    assert total_mass(make_config([1.0, 1.0, 1.0])) == 3.0


def test_total_mass_conserved_by_coagulation():
    config = make_config([1.0, 1.0, 1.0])
    z = ClusterType(2.0, None, LabelSet({0}) | LabelSet({1}))
    config.apply_coagulation(0, 1, z)
    assert total_mass(config) == 3.0
    assert config.total_mass == 3.0


@pytest.mark.parametrize("masses,thr,strict,expected", [
    ([1.0, 1.0, 4.0], 2.0, False, 4.0),
    ([1.0, 1.0, 4.0], 5.0, False, 0.0),
    ([2.0, 2.0], 2.0, False, 4.0),
    ([2.0, 2.0], 2.0, True, 0.0),
])
def test_mass_above(masses, thr, strict, expected):
    assert make_config(masses).mass_above(thr, strict=strict) == expected


def test_mass_above_rejects_nonpositive_threshold():
    with pytest.raises(CoagulationError):
        make_config([1.0]).mass_above(0.0)


# -- apply_coagulation ----------------------------------------------------------

def test_merge_two_units():
    config = make_config([1.0, 1.0])
    new = config.apply_coagulation(0, 1, ClusterType(2.0, None, {0, 1}))
    assert config.count == 1
    assert new == 2
    assert config.clusters[new].mass == 2.0
    assert config.masses[0] == config.masses[1] == 0.0


def test_merge_rejects_wrong_offspring_mass():
    config = make_config([1.0, 1.0])
    with pytest.raises(CoagulationError, match="offspring mass"):
        config.apply_coagulation(0, 1, ClusterType(2.5, None, {0, 1}))


def test_merge_rejects_self_pair():
    config = make_config([1.0, 1.0])
    with pytest.raises(CoagulationError):
        config.apply_coagulation(0, 0, ClusterType(2.0, None, {0}))


def test_merge_rejects_dead_cluster():
    config = make_config([1.0, 1.0, 1.0])
    config.apply_coagulation(0, 1, ClusterType(2.0, None, {0, 1}))
    with pytest.raises(CoagulationError):
        config.apply_coagulation(0, 2, ClusterType(2.0, None, {0, 2}))


def test_survivor_rate_after_merge_multiplicative():
    # three unit clusters; after one merge the survivor reacts with the pair
    # cluster at rate 1 * 2 = 2
    config = make_config([1.0, 1.0, 1.0], n_param=3)
    config.apply_coagulation(0, 1, ClusterType(2.0, None, {0, 1}))
    assert config.rates[2] == pytest.approx(2.0, abs=1e-12)
    assert config.total_rate == pytest.approx(2.0, abs=1e-12)


def test_merge_rejects_overlapping_labels():
    config = make_config([1.0, 1.0])
    with pytest.raises(CoagulationError, match="labels"):
        config.apply_coagulation(0, 1, ClusterType(2.0, None, {0}))


# -- LabelSet --------------------------------------------------------------------

def test_labelset_union_basics():
    a = LabelSet({0, 4})
    b = LabelSet({2})
    u = a | b
    assert len(u) == 3
    assert set(u) == {0, 2, 4}
    assert 4 in u and 3 not in u
    assert u.as_frozenset() == frozenset({0, 2, 4})


def test_labelset_union_with_plain_iterable():
    u = LabelSet({1}) | {7}
    assert set(u) == {1, 7}


def test_labelset_empty_identity():
    a = LabelSet({3})
    assert (LabelSet() | a) is a
    assert (a | LabelSet()) is a


def test_labelset_deep_union_is_cheap():
    # a chain of 10^4 unions must not blow up quadratically
    acc = LabelSet({0})
    for i in range(1, 10_000):
        acc = acc | LabelSet({i})
    assert len(acc) == 10_000
    assert 9_999 in acc


# -- invariants over simulated trajectories -----------------------------------------

@given(n=st.integers(2, 12), seed=st.integers(0, 10_000))
def test_mass_and_labels_conserved_along_trajectory(n, seed):
    kernel = multiplicative()
    config = Configuration(mono_dispersed_clusters(n), kernel, n)
    rng = stream(seed)
    traj = run(config, rng=rng, copy=False)
    assert config.total_mass == pytest.approx(float(n), rel=1e-9)
    assert config.label_partition_ok()
    # every event conserves mass exactly for unit masses
    for e in traj.events:
        assert e.offspring.mass == int(e.offspring.mass)


@given(n=st.integers(2, 10), seed=st.integers(0, 10_000))
def test_replay_reproduces_final_configuration(n, seed):
    kernel = multiplicative()
    traj = run(mono_dispersed_clusters(n), kernel, seed=seed, n_param=n)
    replayed = traj.replay(kernel)
    assert replayed.count == 1
    final = replayed.live_clusters()[0]
    assert final.mass == float(n)
    assert final.labels.as_frozenset() == frozenset(range(n))


def test_rate_cache_coherent_after_many_events():
    kernel = multiplicative()
    config = Configuration(mono_dispersed_clusters(64), kernel, 64, recompute_every=10_000)
    rng = stream(17)
    run(config, rng=rng, copy=False, stop=None)
    assert config.verify_rate_cache(rel_tol=1e-8) < 1e-8


def test_cluster_count_drops_by_one_per_event():
    kernel = constant()
    config = Configuration(mono_dispersed_clusters(9), kernel, 9)
    before = config.count
    config.apply_coagulation(0, 1, ClusterType(2.0, None, {0, 1}))
    assert config.count == before - 1


def test_max_mass_cache_tracks_merges():
    config = make_config([1.0, 3.0, 2.0])
    assert config.max_mass == 3.0
    config.apply_coagulation(0, 2, ClusterType(3.0, None, {0, 2}))
    assert config.max_mass == 3.0
    config.apply_coagulation(1, 3, ClusterType(6.0, None, {0, 1, 2}))
    assert config.max_mass == 6.0


def test_copy_is_independent():
    config = make_config([1.0, 1.0, 1.0])
    dup = config.copy()
    config.apply_coagulation(0, 1, ClusterType(2.0, None, {0, 1}))
    assert dup.count == 3
    assert config.count == 2
    assert dup.label_partition_ok()


# -- positions ---------------------------------------------------------------------

def test_positions_require_offspring_position():
    from coagulab.kernels import spatial_distance_power
    kernel = spatial_distance_power(1.0, 1.0)
    clusters = mono_dispersed_clusters(2, np.array([[0.0], [0.5]]))
    config = Configuration(clusters, kernel, 2)
    with pytest.raises(CoagulationError, match="position"):
        config.apply_coagulation(0, 1, ClusterType(2.0, None, {0, 1}))


def test_mixed_position_presence_rejected():
    kernel = multiplicative()
    clusters = [ClusterType(1.0, np.array([0.1]), {0}), ClusterType(1.0, None, {1})]
    with pytest.raises(CoagulationError):
        Configuration(clusters, kernel, 2)


def test_cluster_type_validation():
    with pytest.raises(CoagulationError):
        ClusterType(0.0)
    with pytest.raises(CoagulationError):
        ClusterType(-1.0)


# -- time convention ------------------------------------------------------------------

def test_time_convention_round_trip():
    conv = TimeConvention(TimeMode.NORMALIZED)
    assert conv.to_raw(2.0, 100) == 0.02
    assert conv.to_normalized(2.0, 100) == 2.0
    raw = TimeConvention(TimeMode.RAW)
    assert raw.to_normalized(0.02, 100) == pytest.approx(2.0)
    assert raw.to_raw(0.02, 100) == 0.02
