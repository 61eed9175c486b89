import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rdmlab.configurations import DistributionSpec
from rdmlab.potentials import make_laplacian_phi, make_tensor_bump
from rdmlab.single_site import ground_energy
from rdmlab.statistics import (
    box_ground_energies,
    ids_curve,
    lifshitz_curve_from_energies,
    lifshitz_exponent_fit,
    lifshitz_probability_curve,
    monotone_within_intervals,
    select_window,
    vanhove_exponent_fit,
    wegner_count_table,
    wegner_table_from_counts,
    weighted_line_fit,
    weighted_multi_fit,
    wilson_interval,
    zero_count_upper_bound,
)

Q = make_tensor_bump(0.2, 100.0, 2)
UNIFORM = DistributionSpec("uniform_cube")


# ---------------------------------------------------------------- intervals

@given(st.integers(1, 2000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_matches_scipy(kn):
    k, n = kn
    lo, hi = wilson_interval(k, n)
    ci = stats.binomtest(k, n).proportion_ci(method="wilson")
    assert lo == pytest.approx(ci.low, abs=1e-12)
    assert hi == pytest.approx(ci.high, abs=1e-12)
    assert lo <= k / n <= hi


def test_wilson_rejects_bad_counts():
    with pytest.raises(ValueError):
        wilson_interval(5, 4)
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


@pytest.mark.parametrize("n", [1, 10, 500])
def test_zero_count_bound_is_exact_one_sided(n):
    ci = stats.binomtest(0, n, alternative="less").proportion_ci(confidence_level=0.95, method="exact")
    assert zero_count_upper_bound(n) == pytest.approx(ci.high, rel=1e-10)


def test_zero_count_bound_for_500_trials():
    assert zero_count_upper_bound(500) == pytest.approx(0.005973, abs=1e-6)


# ---------------------------------------------------------------- fits

def test_unweighted_line_fit_matches_linregress():
    rng = np.random.default_rng(0)
    x = np.linspace(0, 3, 12)
    y = 2 - 0.7 * x + rng.normal(0, 0.1, x.size)
    fit = weighted_line_fit(x, y)
    ref = stats.linregress(x, y)
    assert fit.slope == pytest.approx(ref.slope, rel=1e-12)
    assert fit.intercept == pytest.approx(ref.intercept, rel=1e-12)
    assert fit.slope_stderr == pytest.approx(ref.stderr, rel=1e-10)


def test_weighted_line_fit_matches_polyfit_with_inflation():
    rng = np.random.default_rng(1)
    x = np.linspace(1, 5, 8)
    var = np.linspace(0.01, 0.05, 8)
    y = 1 + 0.5 * x + rng.normal(0, np.sqrt(var))
    fit = weighted_line_fit(x, y, var)
    coef, cov = np.polyfit(x, y, 1, w=1 / np.sqrt(var), cov="unscaled")
    chi2 = np.sum((y - np.polyval(coef, x)) ** 2 / var) / (x.size - 2)
    assert fit.slope == pytest.approx(coef[0], rel=1e-10)
    assert fit.slope_stderr == pytest.approx(np.sqrt(cov[0, 0] * max(1.0, chi2)), rel=1e-8)
    assert fit.slope_lower() < fit.slope < fit.slope_upper()


def test_multi_fit_recovers_exact_plane():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(0, 1, 10), rng.uniform(0, 1, 10)
    X = np.column_stack([np.ones(10), a, b])
    mf = weighted_multi_fit(X, 0.3 + 1.5 * a - 2 * b, np.ones(10))
    np.testing.assert_allclose(mf.coefficients, [0.3, 1.5, -2.0], atol=1e-12)


@pytest.mark.parametrize("slope", [-0.5, -1.0, 0.5])
def test_exact_power_law_slopes(slope):
    x = np.logspace(-3, 0, 20)
    fit = vanhove_exponent_fit(x, 0.7 * x**slope)
    assert fit.exponent == pytest.approx(slope, abs=1e-12)
    assert fit.points == 20 and fit.conclusive


def test_lifshitz_exponent_on_exact_stretched_exponential():
    E = 1.0 + np.logspace(-3, -1, 15)
    N = np.exp(-0.2 * (E - 1.0) ** -1.0)
    fit = lifshitz_exponent_fit(E, N, 1.0)
    assert fit.exponent == pytest.approx(-1.0, abs=1e-10)


def test_window_selection_finds_the_straight_part():
    x = np.linspace(0, 4, 41)
    y = np.where(x < 2, 0.5 * x, 1 + 3 * (x - 2) ** 2)
    i, j = select_window(x, y, min_points=5, tol=1e-6)
    assert i == 0 and 19 <= j <= 22
    fit = vanhove_exponent_fit(np.exp(x), np.exp(y), tol=1e-6)
    assert fit.exponent == pytest.approx(0.5, abs=1e-6)


def test_short_series_is_inconclusive():
    fit = vanhove_exponent_fit([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert not fit.conclusive


# ---------------------------------------------------------------- Lifshitz

def test_lifshitz_curve_with_certain_and_impossible_events():
    energies = {1: np.zeros(50), 2: np.zeros(50) + 10.0}
    curve = lifshitz_curve_from_energies(energies, E0=0.0, C1=1.0, d=2)
    assert curve.estimates[0] == 1.0 and np.isnan(curve.estimates[1])
    assert curve.upper[1] == pytest.approx(zero_count_upper_bound(50))
    assert curve.fit["slope_negative"]
    assert any("zero-count" in note for note in curve.notes)


def test_lifshitz_curve_flags_one_dimension():
    curve = lifshitz_curve_from_energies({1: np.zeros(5), 2: np.zeros(5)}, 0.0, 1.0, d=1)
    assert any("d < 2" in note for note in curve.notes)


def test_monotone_within_intervals():
    assert monotone_within_intervals(np.array([0.5, 0.2, 0.0]), np.array([0.9, 0.6, 0.1]))
    assert not monotone_within_intervals(np.array([0.0, 0.5]), np.array([0.2, 0.9]))


def test_huge_threshold_gives_probability_one():
    E0 = ground_energy(Q, (0.3, 0.3), 10)
    curve = lifshitz_probability_curve(Q, UNIFORM, [1, 2], 1e6, 4, 10, E0, seed=0)
    np.testing.assert_array_equal(curve.estimates, [1.0, 1.0])


def test_box_energies_bounded_below_by_single_site_minimum():
    E0 = ground_energy(Q, (0.3, 0.3), 10)
    e = box_ground_energies(Q, UNIFORM, 1, 10, 5, seed=3)
    assert np.all(e >= E0 - 1e-10)


# ---------------------------------------------------------------- Wegner

def test_wegner_regression_on_exact_counts():
    eps = [4.0, 2.0, 1.0]
    counts = {L: np.tile([(2 * L + 1) ** 2 * 2 * e * 0.01 for e in eps], (10, 1)) for L in (1, 2, 3)}
    table = wegner_table_from_counts(counts, eps, 2)
    assert table.fit["alpha"] == pytest.approx(1.0, abs=1e-10)
    assert table.fit["volume_exponent"] == pytest.approx(2.0, abs=1e-10)
    assert table.fit["alpha_ok"] and table.fit["volume_ok"]


def test_wegner_zero_cells_are_dropped():
    counts = {1: np.zeros((5, 2)), 2: np.zeros((5, 2))}
    table = wegner_table_from_counts(counts, [1.0, 0.5], 2)
    assert table.fit == {}
    assert any("inconclusive" in note for note in table.notes)


def test_window_covering_whole_spectrum_counts_every_dof():
    table = wegner_count_table(Q, UNIFORM, 0.0, [1e6], [1], 2, 10, seed=0)
    np.testing.assert_array_equal(table.estimates, [900.0])


# ---------------------------------------------------------------- IDS

def test_ids_monotone_and_dirichlet_below_neumann():
    E = np.linspace(0.5, 60.0, 12)
    neu = ids_curve(Q, UNIFORM, E, 1, 3, 10, seed=0, closure="neumann")
    dirichlet = ids_curve(Q, UNIFORM, E, 1, 3, 10, seed=0, closure="dirichlet")
    assert np.all(np.diff(neu.estimates) >= 0)
    assert np.all(dirichlet.estimates <= neu.estimates + 1e-12)
    with pytest.raises(ValueError):
        ids_curve(Q, UNIFORM, E[::-1], 1, 3, 10, seed=0)


def test_ids_of_free_operator_reaches_one_per_dof():
    q = make_laplacian_phi(0.2, 0.5, 1)
    curve = ids_curve(q, UNIFORM, [1e9], 2, 2, 16, seed=0)
    assert curve.estimates[0] == pytest.approx(16.0)


def test_threshold_below_spectrum_gives_probability_zero():
    E0 = ground_energy(Q, (0.3, 0.3), 10)
    curve = lifshitz_probability_curve(Q, UNIFORM, [1, 2], -1e6, 4, 10, E0, seed=0)
    assert np.all(np.isnan(curve.estimates)) and np.all(curve.counts == 0)


def test_tiny_windows_mostly_empty():
    E0 = ground_energy(Q, (0.3, 0.3), 10)
    table = wegner_count_table(Q, UNIFORM, E0 + 5.0, [1e-9], [1], 5, 10, seed=0)
    assert table.estimates[0] <= 0.2


def test_ids_below_spectrum_is_zero_with_positive_half_width():
    curve = ids_curve(Q, UNIFORM, [-1.0, 0.0], 1, 3, 10, seed=0)
    np.testing.assert_array_equal(curve.estimates, [0.0, 0.0])
    assert np.all(curve.half_widths > 0)


def test_wegner_half_widths_positive_for_constant_counts():
    table = wegner_table_from_counts({1: np.ones((4, 1)), 2: np.full((4, 1), 5.0)}, [1.0], 2)
    assert np.all(table.half_widths > 0)
