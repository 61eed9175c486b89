import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdmlab.configurations import (
    DisplacementField,
    DistributionSpec,
    closest_corner,
    corner_distance,
    corner_projection,
    corners,
    is_corner_valued,
    minimizer_config,
    sample_config,
    site_uniforms,
)

D = 0.3
coord = st.floats(-D, D, allow_nan=False)


def brute_closest(a, d_max):
    # exact rational arithmetic so that ties are genuine ties
    cs = corners(len(a), d_max)
    dist = [sum((Fraction(c) - Fraction(x)) ** 2 for c, x in zip(row, a)) for row in cs]
    return cs[dist.index(min(dist))]


def test_closest_corner_examples():
    np.testing.assert_array_equal(closest_corner([0.1, 0.2], D), [0.3, 0.3])
    np.testing.assert_array_equal(closest_corner([0.0, 0.0], D), [-0.3, -0.3])
    assert corner_distance([0.0, 0.0], D) == pytest.approx(0.3 * np.sqrt(2))


def test_corners_enumerated_lexicographically():
    np.testing.assert_array_equal(corners(2, 1.0), [[-1, -1], [-1, 1], [1, -1], [1, 1]])
    assert corners(3, D).shape == (8, 3)


@given(st.lists(coord, min_size=1, max_size=3))
def test_closest_corner_matches_brute_force(a):
    a = np.array(a)
    np.testing.assert_array_equal(closest_corner(a, D), brute_closest(a, D))


@given(st.lists(coord, min_size=2, max_size=2), st.lists(coord, min_size=2, max_size=2))
def test_corner_distance_is_1_lipschitz(a, b):
    assert abs(corner_distance(a, D) - corner_distance(b, D)) <= np.linalg.norm(np.subtract(a, b)) + 1e-12


@given(st.lists(coord, min_size=2, max_size=2))
def test_corner_distance_bounds(a):
    dist = corner_distance(a, D)
    assert 0.0 <= dist <= D * np.sqrt(2) + 1e-12


def test_corner_distance_vectorised():
    a = np.array([[0.3, 0.3], [0.0, 0.3], [-0.1, 0.2]])
    np.testing.assert_allclose(corner_distance(a, D), [0.0, 0.3, np.hypot(0.2, 0.1)])


def test_minimizer_pattern_entries():
    fld = minimizer_config(2, 2, D)
    np.testing.assert_array_equal(fld[(0, 0)], [D, D])
    np.testing.assert_array_equal(fld[(1, 0)], [-D, D])
    np.testing.assert_array_equal(fld[(0, -1)], [D, -D])
    np.testing.assert_array_equal(fld[(-1, 1)], [-D, -D])
    assert is_corner_valued(fld, D)


@given(st.integers(0, 4), st.integers(1, 3))
def test_minimizer_is_two_periodic_and_corner_valued(L, d):
    fld = minimizer_config(L, d, D)
    for site in fld.sites():
        for k in range(d):
            nb = site.copy()
            nb[k] += 2
            if np.all(np.abs(nb) <= L):
                np.testing.assert_array_equal(fld[site], fld[nb])
                flip = site.copy()
                flip[k] += 1
                assert fld[flip][k] == -fld[site][k]
    assert is_corner_valued(fld, D)


@given(st.integers(0, 3), st.integers(0, 10_000))
def test_corner_projection_idempotent(L, seed):
    fld = sample_config(DistributionSpec("uniform_cube"), L, seed, 2, D)
    once = corner_projection(fld, D)
    assert is_corner_valued(once, D)
    assert corner_projection(once, D).equals(once)


@pytest.mark.parametrize(
    "dist",
    [
        DistributionSpec("uniform_cube"),
        DistributionSpec("corner_bernoulli"),
        DistributionSpec("near_corner", 0.01),
        DistributionSpec("near_minimizer", 0.01),
        DistributionSpec("point_mass", value=(0.1, -0.2)),
        DistributionSpec("point_mass", value="minimizer"),
    ],
    ids=lambda d: d.kind,
)
def test_sampling_deterministic_and_in_range(dist):
    a = sample_config(dist, 3, 11, 2, D, trial=2)
    b = sample_config(dist, 3, 11, 2, D, trial=2)
    assert a.equals(b)
    a.check_range(D)
    assert a.values.shape == (7, 7, 2)


def test_seeds_and_trials_give_different_fields():
    dist = DistributionSpec("uniform_cube")
    a = sample_config(dist, 2, 1, 2, D)
    assert not a.equals(sample_config(dist, 2, 2, 2, D))
    assert not a.equals(sample_config(dist, 2, 1, 2, D, trial=1))


def test_shared_sites_keep_their_draws_when_box_grows():
    dist = DistributionSpec("uniform_cube")
    small = sample_config(dist, 1, 5, 2, D)
    big = sample_config(dist, 3, 5, 2, D)
    for site in small.sites():
        np.testing.assert_array_equal(small[site], big[site])


def test_uniform_cube_moments():
    fld = sample_config(DistributionSpec("uniform_cube"), 30, 0, 2, D)
    v = fld.flat
    assert v.shape == (61 * 61, 2)
    # mean 0 and variance d_max^2/3, within 5 standard errors
    n = len(v)
    assert np.all(np.abs(v.mean(axis=0)) < 5 * D / np.sqrt(3 * n))
    np.testing.assert_allclose(v.var(axis=0), D**2 / 3, rtol=0.05)


def test_corner_bernoulli_balanced():
    fld = sample_config(DistributionSpec("corner_bernoulli"), 30, 0, 2, D)
    assert is_corner_valued(fld, D)
    frac = np.mean(fld.flat > 0, axis=0)
    np.testing.assert_allclose(frac, 0.5, atol=0.03)


def test_near_corner_within_width_of_a_corner():
    w = 0.02
    fld = sample_config(DistributionSpec("near_corner", w), 5, 0, 2, D)
    gap = D - np.abs(fld.flat)
    assert np.all((gap >= 0) & (gap <= w))


def test_near_minimizer_stays_close_to_pattern():
    w = 0.02
    fld = sample_config(DistributionSpec("near_minimizer", w), 4, 3, 2, D)
    base = minimizer_config(4, 2, D)
    diff = np.abs(fld.values - base.values)
    assert np.all(diff <= w) and diff.max() > 0
    np.testing.assert_array_equal(np.sign(fld.values), np.sign(base.values))


def test_site_uniforms_in_unit_interval_and_distinct_per_site():
    u = site_uniforms(0, 0, np.array(list(itertools.product(range(-2, 3), repeat=2))), 4)
    assert u.shape == (25, 4)
    assert np.all((u >= 0) & (u < 1))
    assert len(np.unique(u[:, 0])) == 25


@given(st.integers(0, 3), st.integers(1, 3), st.integers(0, 1000))
def test_csv_round_trip(L, d, seed):
    fld = sample_config(DistributionSpec("uniform_cube"), L, seed, d, D)
    assert DisplacementField.from_csv(fld.to_csv()).equals(fld)


def test_field_validation():
    with pytest.raises(ValueError):
        DisplacementField(1, np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        DisplacementField(-1, np.zeros((1, 1, 2)))
    fld = DisplacementField(0, np.full((1, 1, 2), 0.31))
    with pytest.raises(ValueError):
        fld.check_range(D)


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="gamma"), dict(kind="near_corner"), dict(kind="near_minimizer", width=-1.0), dict(kind="point_mass")],
)
def test_bad_distributions_rejected(kwargs):
    with pytest.raises(ValueError):
        DistributionSpec(**kwargs)


def test_distribution_range_validation():
    with pytest.raises(ValueError):
        DistributionSpec("near_corner", 0.7).validate(2, D)
    with pytest.raises(ValueError):
        DistributionSpec("point_mass", value=(0.4, 0.0)).validate(2, D)
    with pytest.raises(ValueError):
        DistributionSpec("point_mass", value=(0.1,)).validate(2, D)


def test_distribution_dict_round_trip():
    for dist in (DistributionSpec("near_minimizer", 0.01), DistributionSpec("point_mass", value=(0.1, 0.2))):
        assert DistributionSpec.from_dict(dist.to_dict()) == dist
