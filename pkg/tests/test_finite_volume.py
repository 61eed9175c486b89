import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdmlab.configurations import DisplacementField, DistributionSpec, minimizer_config, sample_config
from rdmlab.finite_volume import (
    FieldPositivityReport,
    PositivityTrial,
    assemble_finite_volume,
    delta2_recipe,
    field_derivative_sum,
    field_potential,
    form_comparison_batch,
    form_comparison_margin,
    ground_state_decay_profile,
    ground_state_energy,
    positivity_experiment,
    single_site_form_margin,
)
from rdmlab.grid import lowest_eigenpairs
from rdmlab.potentials import make_tensor_bump, zero_potential
from rdmlab.single_site import (
    SpectralConstants,
    corner_direction,
    fh_gradient,
    ground_energy,
    single_site_operator,
    smoothstep_cutoff,
)

Q = make_tensor_bump(0.2, 100.0, 2)
Q1 = make_tensor_bump(0.2, 1.0, 1)
D = 0.3
N = 10


def one_cell(a):
    return DisplacementField(0, np.asarray(a, float).reshape(1, 1, 2))


def test_single_cell_box_is_single_site_operator():
    a = (0.12, -0.2)
    H = assemble_finite_volume(Q, one_cell(a), N)
    assert abs(H.matrix - single_site_operator(Q, a, N).matrix).max() == 0.0


def test_field_potential_matches_direct_sum_of_bumps():
    fld = sample_config(DistributionSpec("uniform_cube"), 1, 3, 2, D)
    v = field_potential(Q, fld, N, mode="point")
    H = assemble_finite_volume(Q, fld, N, mode="point")
    x = H.grid.coordinates()
    direct = sum(Q(x - site - fld[site]) for site in fld.sites())
    np.testing.assert_allclose(v, direct, atol=1e-12)


def test_field_potential_rejects_protrusion_and_dimension_mismatch():
    with pytest.raises(ValueError):
        field_potential(make_tensor_bump(0.2, 1.0, 2).shifted((0.05, 0.0)), minimizer_config(1, 2, D), N)
    with pytest.raises(ValueError):
        field_potential(Q1, minimizer_config(1, 2, D), N)


def test_minimizer_box_energy_equals_single_site_minimum():
    E0 = ground_energy(Q, (D, D), N)
    for L in (1, 2):
        assert ground_state_energy(Q, minimizer_config(L, 2, D), N) == pytest.approx(E0, abs=1e-10)


def test_box_energy_never_below_single_site_minimum():
    E0 = ground_energy(Q1, [D], 32)
    for trial in range(5):
        fld = sample_config(DistributionSpec("uniform_cube"), 3, 0, 1, 0.3, trial)
        assert ground_state_energy(Q1, fld, 32) >= E0 - 1e-10


def test_zero_potential_form_margin_is_one():
    q = zero_potential(2)
    rep = form_comparison_margin(q, sample_config(DistributionSpec("uniform_cube"), 1, 0, 2, D), N, 0.0)
    assert rep.t_star == pytest.approx(1.0)
    assert not rep.violation


def test_corner_valued_field_margin_is_one():
    E0 = ground_energy(Q, (D, D), N)
    fld = sample_config(DistributionSpec("corner_bernoulli"), 1, 4, 2, D)
    rep = form_comparison_margin(Q, fld, N, E0)
    assert rep.t_star == 1.0 and rep.min_eig_at_t >= -1e-8


def test_single_site_margin_at_cell_centre_positive_and_tight():
    E0 = ground_energy(Q, (D, D), N)
    a = np.zeros(2)
    rep = single_site_form_margin(Q, a, N, E0)
    assert 0.0 < rep.t_star < 1.0
    # dense oracle: feasible at t*, infeasible one bisection step above
    A = single_site_operator(Q, a, N).matrix.toarray() - E0 * np.eye(N * N)
    B = single_site_operator(Q, (-D, -D), N).matrix.toarray() - E0 * np.eye(N * N) + np.hypot(D, D) * np.eye(N * N)
    slack = 1e-8 * Q.sup_norm
    assert np.linalg.eigvalsh(A - rep.t_star * B)[0] >= -slack
    assert np.linalg.eigvalsh(A - (rep.t_star + 2e-3) * B)[0] < -slack


def test_form_batch_deterministic():
    E0 = ground_energy(Q, (D, D), N)
    dist = DistributionSpec("uniform_cube")
    a = form_comparison_batch(Q, dist, 1, N, E0, 3, seed=1)
    b = form_comparison_batch(Q, dist, 1, N, E0, 3, seed=1, workers=2)
    assert [r.t_star for r in a] == [r.t_star for r in b]
    assert all(0.0 < r.t_star <= 1.0 for r in a)


@given(st.floats(-0.28, 0.28), st.floats(-0.28, 0.28))
def test_field_derivative_sum_is_feynman_hellmann_on_one_cell(a1, a2):
    a = np.array([a1, a2])
    r0 = 0.1
    res = lowest_eigenpairs(single_site_operator(Q, a, N), k=2)
    value = field_derivative_sum(Q, one_cell(a), res.ground_state, N, r0)
    e = corner_direction(a, D)
    dist = np.linalg.norm(np.where(a > 0, D, -D) - a)
    eta = float(smoothstep_cutoff(dist, r0))
    expected = -eta * float(fh_gradient(Q, a, N) @ e)
    assert value == pytest.approx(expected, abs=1e-9 * Q.sup_norm)


def test_field_derivative_sum_vanishes_without_potential_or_at_corners():
    psi = np.ones(N * N * 9)
    fld = sample_config(DistributionSpec("uniform_cube"), 1, 0, 2, D)
    assert field_derivative_sum(zero_potential(2), fld, psi, N, 0.1) == 0.0
    assert field_derivative_sum(Q, minimizer_config(1, 2, D), psi, N, 0.1) == 0.0


def constants(**kw):
    base = dict(E0_min=0.6, E1=9.8, E0_r0=0.64, delta0=0.25, r0=0.1, c3=0.48, C1=34.0,
                C2=100.0, corner_slope=0.37, n=10)
    base.update(kw)
    return SpectralConstants(**base)


def recipe_lhs(c, x):
    g1, gr = c.E1 - c.E0_min, c.E0_r0 - c.E0_min
    first = c.c3 * x / gr + 0.5 * c.C1 * np.sqrt(x / g1) + c.C2 * x / g1
    second = x / g1 + x / gr
    return first, second


@pytest.mark.parametrize("kw", [{}, dict(C1=0.01, C2=0.0, c3=0.0), dict(delta0=3.0, C1=1e-6, c3=1e-6, C2=1e-6)])
def test_delta2_recipe_satisfies_both_conditions_and_is_nearly_maximal(kw):
    c = constants(**kw)
    x = delta2_recipe(c)
    first, second = recipe_lhs(c, x)
    assert first < c.delta0 / 4 and second < min(c.delta0, 1.0) / 2
    f2, s2 = recipe_lhs(c, x / 0.99 * 1.001)
    assert f2 > c.delta0 / 4 or s2 > min(c.delta0, 1.0) / 2


def test_delta2_recipe_rejects_bad_constants():
    with pytest.raises(ValueError):
        delta2_recipe(constants(E0_r0=0.6))


def test_positivity_report_statistics():
    trials = [
        PositivityTrial(0, 1.0, 0.5, True, False),
        PositivityTrial(1, 1.0, 0.2, True, False),
        PositivityTrial(2, 2.0, float("nan"), False, False),
        PositivityTrial(3, 1.0, 0.0, True, True),
    ]
    rep = FieldPositivityReport(trials, 0.1, 1.0)
    assert len(rep.qualifying) == 2
    assert rep.delta1_hat == 0.2 and rep.violations == 0
    assert rep.quartiles()[1] == pytest.approx(0.35)
    empty = FieldPositivityReport([], 0.1, 1.0)
    assert np.isnan(empty.delta1_hat)


def test_smaller_delta2_never_lowers_the_minimum():
    c1d = constants(E0_min=ground_energy(Q1, [D], 32), r0=0.1)
    dist = DistributionSpec("near_minimizer", 0.05)
    q = Q1
    wide = positivity_experiment(q, dist, 2, 32, 12, 2e-4, c1d, seed=0)
    narrow = positivity_experiment(q, dist, 2, 32, 12, 1e-4, c1d, seed=0)
    assert 0 < len(narrow.qualifying) < len(wide.qualifying)
    assert narrow.delta1_hat >= wide.delta1_hat


def test_decay_profile_is_a_probability_distribution():
    fld = sample_config(DistributionSpec("uniform_cube"), 1, 2, 2, D)
    mass = ground_state_decay_profile(Q, fld, N)
    assert mass.shape == (3, 3)
    assert np.all(mass >= 0) and mass.sum() == pytest.approx(1.0)


def test_free_box_has_uniform_cell_masses():
    fld = sample_config(DistributionSpec("uniform_cube"), 1, 0, 2, D)
    mass = ground_state_decay_profile(zero_potential(2), fld, N)
    np.testing.assert_allclose(mass, 1 / 9, atol=1e-10)


def test_cutoff_kills_sites_far_from_corners():
    # every bump sits at the cell centre, a distance 0.3*sqrt(2) > 2 r0 from the corners
    fld = sample_config(DistributionSpec("point_mass", value=(0.0, 0.0)), 1, 0, 2, D)
    psi = np.random.default_rng(0).uniform(size=9 * N * N)
    assert field_derivative_sum(Q, fld, psi, N, 0.1) == 0.0
