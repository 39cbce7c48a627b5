import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coagulab.core import ClusterType
from coagulab.kernels import (Domination, KernelConstructionError, bilinear,
                              check_domination_triple, classical, concave_rho,
                              constant, effective_gamma, homogeneous_power,
                              mass_log, max_norm_complement_rho,
                              multiplicative, product_kernel,
                              spatial_distance_power, additive)


def cluster(mass, pos=None, label=0):
    return ClusterType(mass, pos, {label})


ALL_MASS_KERNELS = [multiplicative(), additive(), constant(), homogeneous_power(1.5),
                    mass_log(0.1)]

RHO_AFFINE = lambda u: 2.0 - np.linalg.norm(np.atleast_1d(u), axis=-1)


# -- classical catalog values ---------------------------------------------------

def test_multiplicative_value():
    assert multiplicative().rate(cluster(2.0), cluster(3.0, label=1)) == 6.0


def test_constant_value():
    assert constant().rate(cluster(17.0), cluster(1.0, label=1)) == 1.0


def test_mass_log_value():
    # direct arithmetic: 4 * (log 4)^(3.1) at epsilon = 0.1
    expected = 4.0 * math.log(4.0) ** 3.1
    assert mass_log(0.1).rate(cluster(4.0), cluster(8.0, label=1)) == pytest.approx(expected, rel=1e-12)


def test_mass_log_floor_below_two():
    kern = mass_log(0.1)
    assert kern.rate(cluster(1.0), cluster(100.0, label=1)) == 1.0
    assert kern.rate(cluster(1.9), cluster(1.9, label=1)) == 1.0


def test_homogeneous_power_value():
    assert homogeneous_power(1.5).rate(cluster(4.0), cluster(9.0, label=1)) == pytest.approx(36.0 ** 0.75)


def test_classical_rejects_asymmetric_rate():
    with pytest.raises(KernelConstructionError, match="symmetric"):
        classical(lambda m, n: m + 2 * n, name="broken")


# -- spatial distance power -------------------------------------------------------

def test_distance_power_value():
    kern = spatial_distance_power(1.0, 2.0)
    x = cluster(1.0, np.array([0.0]))
    y = cluster(1.0, np.array([0.5]), label=1)
    assert kern.rate(x, y) == pytest.approx(4.0)


def test_distance_power_zero_at_coincident():
    kern = spatial_distance_power(1.0, 2.0)
    x = cluster(1.0, np.array([0.3, 0.3]))
    y = cluster(1.0, np.array([0.3, 0.3]), label=1)
    assert kern.rate(x, y) == 0.0


def test_center_of_mass_placement():
    kern = spatial_distance_power(1.0, 2.0, "center_of_mass")
    x = cluster(1.0, np.array([0.0]))
    y = cluster(3.0, np.array([1.0]), label=1)
    z = kern.offspring(x, y, np.random.default_rng(0))
    assert z.mass == 4.0
    assert z.position[0] == pytest.approx(0.75)


def test_mass_proportional_placement_distribution():
    kern = spatial_distance_power(1.0, 2.0, "mass_proportional")
    x = cluster(1.0, np.array([0.0]))
    y = cluster(3.0, np.array([1.0]), label=1)
    rng = np.random.default_rng(1)
    at_x = sum(kern.offspring(x, y, rng).position[0] == 0.0 for _ in range(4000))
    assert at_x / 4000 == pytest.approx(0.25, abs=0.03)


def test_distance_power_validates_parameters():
    with pytest.raises(KernelConstructionError):
        spatial_distance_power(0.0, 1.0)
    with pytest.raises(KernelConstructionError):
        spatial_distance_power(1.0, -2.0)


# -- product kernel ----------------------------------------------------------------

def test_product_with_unit_h_matches_classical():
    kern = product_kernel(lambda d: np.ones_like(np.asarray(d, dtype=float)),
                          lambda m, n: m * n)
    ref = multiplicative()
    rng = np.random.default_rng(2)
    for _ in range(50):
        m, n = rng.uniform(0.5, 30.0, size=2)
        p, s = rng.random((2, 3))
        got = kern.rate(cluster(m, p), cluster(n, s, label=1))
        assert got == pytest.approx(ref.rate(cluster(m), cluster(n, label=1)))


def test_product_exponential_h_at_zero_distance():
    kern = product_kernel(lambda d: np.exp(-np.asarray(d, dtype=float)),
                          lambda m, n: m * n)
    x = cluster(3.0, np.array([0.2, 0.4]))
    y = cluster(5.0, np.array([0.2, 0.4]), label=1)
    assert kern.rate(x, y) == pytest.approx(15.0)


def test_product_monotone_in_distance():
    kern = product_kernel(lambda d: np.exp(-np.asarray(d, dtype=float)),
                          lambda m, n: m * n)
    x = cluster(2.0, np.array([0.0]))
    near = cluster(3.0, np.array([0.1]), label=1)
    far = cluster(3.0, np.array([0.9]), label=2)
    assert kern.rate(x, near) >= kern.rate(x, far)


def test_product_rejects_increasing_h():
    with pytest.raises(KernelConstructionError, match="non-increasing"):
        product_kernel(lambda d: np.asarray(d, dtype=float), lambda m, n: m * n)


# -- bilinear -----------------------------------------------------------------------

def test_bilinear_orthogonal_types():
    kern = bilinear(np.eye(2))
    x = cluster(1.0, np.array([1.0, 0.0]))
    y = cluster(1.0, np.array([0.0, 1.0]), label=1)
    assert kern.rate(x, y) == 0.0


def test_bilinear_all_ones():
    kern = bilinear(np.ones((2, 2)))
    x = cluster(1.0, np.array([1.0, 0.0]))
    y = cluster(1.0, np.array([0.0, 1.0]), label=1)
    assert kern.rate(x, y) == 1.0


def test_bilinear_rate_additivity_after_merge():
    kern = bilinear(np.eye(2))
    x = cluster(1.0, np.array([1.0, 0.0]))
    y = cluster(1.0, np.array([0.0, 1.0]), label=1)
    q = cluster(1.0, np.array([1.0, 0.0]), label=2)
    z = kern.offspring(x, y, np.random.default_rng(0))
    assert np.array_equal(z.position, np.array([1.0, 1.0]))
    assert kern.rate(z, q) == kern.rate(x, q) + kern.rate(y, q) == 1.0


def test_bilinear_validates_matrix():
    with pytest.raises(KernelConstructionError, match="symmetric"):
        bilinear(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(KernelConstructionError, match="non-negative"):
        bilinear(np.array([[1.0, -0.5], [-0.5, 1.0]]))
    with pytest.raises(KernelConstructionError, match="square"):
        bilinear(np.ones((2, 3)))


# -- concave / convex rho --------------------------------------------------------------

def test_concave_rho_constant_reduces_to_multiplicative():
    rho_one = lambda u: np.ones(np.asarray(u).shape[:-1]) if np.asarray(u).ndim > 1 else 1.0
    kern = concave_rho(rho_one, dim=1)
    x = cluster(2.0, np.array([0.1]))
    y = cluster(3.0, np.array([0.9]), label=1)
    assert kern.rate(x, y) == 6.0


def test_max_norm_complement_decreases_with_distance():
    kern = concave_rho(max_norm_complement_rho(2.0), dim=1)
    x = cluster(1.0, np.array([0.0]))
    near = cluster(1.0, np.array([0.2]), label=1)
    far = cluster(1.0, np.array([0.8]), label=2)
    assert kern.rate(x, near) > kern.rate(x, far)


def test_concave_rho_domination_triple():
    kern = concave_rho(RHO_AFFINE, dim=1)
    rng = np.random.default_rng(7)
    for _ in range(200):
        pts = rng.random(3)
        ms = rng.integers(1, 20, size=3).astype(float)
        x = cluster(ms[0], pts[:1].copy())
        y = cluster(ms[1], pts[1:2].copy(), label=1)
        q = cluster(ms[2], pts[2:3].copy(), label=2)
        merged, parts, ok = check_domination_triple(kern, x, y, q, rng)
        assert ok, (merged, parts)


def test_convex_rho_is_dominated():
    rho_cvx = lambda u: 0.5 + np.square(np.linalg.norm(np.atleast_1d(u), axis=-1))
    kern = concave_rho(rho_cvx, dim=1, convex=True)
    assert kern.domination is Domination.DOMINATED
    rng = np.random.default_rng(8)
    for _ in range(200):
        pts = rng.random(3)
        ms = rng.integers(1, 20, size=3).astype(float)
        merged, parts, ok = check_domination_triple(
            kern, cluster(ms[0], pts[:1].copy()), cluster(ms[1], pts[1:2].copy(), label=1),
            cluster(ms[2], pts[2:3].copy(), label=2), rng)
        assert ok, (merged, parts)


def test_concavity_spot_check_failure_reports_triple():
    rho_not_concave = lambda u: 0.1 + np.square(np.linalg.norm(np.atleast_1d(u), axis=-1))
    with pytest.raises(KernelConstructionError, match="concavity spot-check failed on triple"):
        concave_rho(rho_not_concave, dim=1)


def test_rho_must_be_even():
    rho_odd = lambda u: 2.0 + np.asarray(u, dtype=float)[..., 0]
    with pytest.raises(KernelConstructionError, match="even"):
        concave_rho(rho_odd, dim=1)


# -- cross-catalog invariants ------------------------------------------------------------

@pytest.mark.parametrize("kern", ALL_MASS_KERNELS, ids=lambda k: k.name)
def test_symmetry_exact_mass_kernels(kern):
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        m, n = rng.uniform(0.5, 500.0, size=2)
        x, y = cluster(m), cluster(n, label=1)
        assert kern.rate(x, y) == kern.rate(y, x)


def test_symmetry_exact_spatial_kernels():
    rng = np.random.default_rng(12)
    spatial = [spatial_distance_power(2.0, 1.5), concave_rho(RHO_AFFINE, dim=2),
               bilinear(np.array([[2.0, 1.0], [1.0, 2.0]]))]
    for kern in spatial:
        for _ in range(10_000):
            m, n = rng.uniform(0.5, 50.0, size=2)
            p, s = rng.random((2, 2))
            x, y = cluster(m, p), cluster(n, s, label=1)
            assert kern.rate(x, y) == kern.rate(y, x)


@pytest.mark.parametrize("kern,gamma", [
    (multiplicative(), 2.0),
    (additive(), 1.0),
    (constant(), 0.0),
    (homogeneous_power(1.5), 1.5),
])
def test_homogeneity_exponent(kern, gamma):
    rng = np.random.default_rng(13)
    for _ in range(300):
        c = rng.uniform(1.0, 100.0)
        m, n = rng.uniform(1.0, 50.0, size=2)
        x, y = cluster(m), cluster(n, label=1)
        scaled = kern.rate(cluster(c * m), cluster(c * n, label=1))
        assert scaled == pytest.approx(c ** gamma * kern.rate(x, y), rel=1e-12)
        if gamma > 0:
            assert effective_gamma(kern, c, x, y) == pytest.approx(gamma, rel=1e-9)


@pytest.mark.parametrize("kern", ALL_MASS_KERNELS, ids=lambda k: k.name)
def test_offspring_mass_additivity_exact(kern):
    rng = np.random.default_rng(14)
    for _ in range(500):
        m, n = rng.uniform(0.5, 100.0, size=2)
        x, y = cluster(m, label=0), cluster(n, label=1)
        z = kern.offspring(x, y, rng)
        assert z.mass == m + n
        assert z.labels.as_frozenset() == frozenset({0, 1})


@pytest.mark.parametrize("kern", [
    multiplicative(), additive(), constant(), homogeneous_power(1.2),
    homogeneous_power(3.0), concave_rho(RHO_AFFINE, dim=1)],
    ids=lambda k: f"{k.name}-{k.domination.value}")
def test_declared_domination_class_sound(kern):
    rng = np.random.default_rng(15)
    for _ in range(2_000):
        ms = rng.integers(1, 40, size=3).astype(float)
        if kern.params.get("dim"):
            pts = rng.random((3, 1))
            xs = [cluster(ms[k], pts[k], label=k) for k in range(3)]
        else:
            xs = [cluster(ms[k], label=k) for k in range(3)]
        merged, parts, ok = check_domination_triple(kern, *xs, rng)
        assert ok, (kern.name, merged, parts)


@given(m=st.floats(0.5, 1e6), n=st.floats(0.5, 1e6))
def test_mass_log_lower_bound_form(m, n):
    # the rate is min(m,n) (log min)^3.1 above the floor region
    kern = mass_log(0.1)
    lo = min(m, n)
    got = kern.rate(cluster(m), cluster(n, label=1))
    if lo >= 2.0:
        assert got == pytest.approx(lo * math.log(lo) ** 3.1, rel=1e-12)
    else:
        assert got == 1.0
