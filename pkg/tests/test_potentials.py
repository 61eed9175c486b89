import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from rdmlab.potentials import (
    SingleSitePotential,
    bump,
    bump_derivatives,
    make_laplacian_phi,
    make_radial_bump,
    make_tensor_bump,
    verify_symmetry,
    zero_potential,
)

ALL = [
    make_tensor_bump(0.2, 1.0, 1),
    make_tensor_bump(0.2, 3.0, 2),
    make_tensor_bump(0.15, -2.0, 3),
    make_radial_bump(0.2, 1.0, 2),
    make_radial_bump(0.2, 1.0, 3),
    make_laplacian_phi(0.2, 0.5, 1),
    make_laplacian_phi(0.2, 0.5, 2),
]


def test_bump_values():
    assert bump(0.0) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert bump(0.5) == pytest.approx(np.exp(-4.0 / 3.0), rel=1e-15)
    assert bump(1.0) == 0.0 and bump(-1.2) == 0.0


def test_bump_derivatives_match_differences():
    t = np.linspace(-0.9, 0.9, 37)
    h = 1e-5
    d = bump_derivatives(t, 3)
    for k in range(3):
        lo = bump_derivatives(t - h, 3)[k]
        hi = bump_derivatives(t + h, 3)[k]
        np.testing.assert_allclose(d[k + 1], (hi - lo) / (2 * h), atol=2e-5)


def test_tensor_peak_is_product_of_profiles():
    for d in (1, 2, 3):
        q = make_tensor_bump(0.2, 1.0, d)
        assert q(np.zeros(d)) == pytest.approx(np.exp(-d), rel=1e-15)
        assert q.sup_norm == pytest.approx(np.exp(-d), rel=1e-15)


@pytest.mark.parametrize("q", ALL, ids=lambda q: f"{q.kind}-{q.dim}d")
def test_support_inside_cube(q):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, (4000, q.dim))
    outside = np.max(np.abs(x), axis=1) >= q.radius
    assert np.all(q(x[outside]) == 0.0)
    assert np.any(q(x[~outside]) != 0.0)


@pytest.mark.parametrize("q", ALL, ids=lambda q: f"{q.kind}-{q.dim}d")
def test_reflection_symmetry(q):
    assert verify_symmetry(q, 2000, seed=1) == 0.0


def test_offset_potential_is_asymmetric():
    q = make_tensor_bump(0.2, 1.0, 2).shifted((0.05, 0.0))
    assert verify_symmetry(q, 2000) > 1e-3


@pytest.mark.parametrize("q", ALL, ids=lambda q: f"{q.kind}-{q.dim}d")
def test_gradient_matches_central_differences(q):
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.9 * q.radius, 0.9 * q.radius, (50, q.dim))
    h = 1e-6
    fd = np.empty_like(x)
    for k in range(q.dim):
        e = np.zeros(q.dim)
        e[k] = h
        fd[:, k] = (q(x + e) - q(x - e)) / (2 * h)
    scale = max(1.0, q.sup_norm / q.radius)
    np.testing.assert_allclose(q.gradient(x), fd, atol=1e-6 * scale * 10)


@pytest.mark.parametrize("d", [1, 2])
def test_laplacian_phi_solves_schroedinger(d):
    q = make_laplacian_phi(0.2, 0.5, d)
    rng = np.random.default_rng(4)
    x = rng.uniform(-0.18, 0.18, (40, d))
    h = 1e-4
    lap = np.zeros(len(x))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        lap += (q.phi(x + e) - 2 * q.phi(x) + q.phi(x - e)) / h**2
    np.testing.assert_allclose(q(x) * q.phi(x), lap, atol=1e-3 * q.sup_norm)


def test_laplacian_phi_generator_positive_and_one_at_boundary():
    q = make_laplacian_phi(0.2, 0.5, 2)
    x = np.random.default_rng(5).uniform(-0.5, 0.5, (2000, 2))
    assert np.all(q.phi(x) >= 1.0)
    far = np.max(np.abs(x), axis=1) >= 0.2
    assert np.all(q.phi(x[far]) == 1.0)


@pytest.mark.parametrize("d,frozen", [(1, 96.56), (2, 35.53)])
def test_laplacian_phi_sup_norm(d, frozen):
    q = make_laplacian_phi(0.2, 0.5, d)
    # independent oracle: multistart local maximisation of |q|
    best = 0.0
    for x0 in np.random.default_rng(6).uniform(-0.19, 0.19, (30, d)):
        res = minimize(lambda x: -abs(q(x)), x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-10})
        best = max(best, -res.fun)
    assert q.sup_norm == pytest.approx(best, rel=1e-3)
    assert q.sup_norm == pytest.approx(frozen, rel=1e-3)


def test_radial_peak():
    q = make_radial_bump(0.2, 2.0, 3)
    assert q.sup_norm == pytest.approx(2 * np.exp(-1.0))
    assert q.gradient(np.zeros(3)).tolist() == [0.0, 0.0, 0.0]


def test_zero_potential():
    q = zero_potential(2)
    assert q.sup_norm == 0.0
    assert not np.any(q(np.random.default_rng(0).uniform(-0.5, 0.5, (10, 2))))


def test_d_max_and_warning():
    assert make_tensor_bump(0.2).d_max == pytest.approx(0.3)
    assert not make_tensor_bump(0.2).radius_warning
    assert make_tensor_bump(0.3).radius_warning


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="tensor_bump", amplitude=1.0, radius=0.5, dim=2),
        dict(kind="tensor_bump", amplitude=1.0, radius=0.0, dim=2),
        dict(kind="tensor_bump", amplitude=1.0, radius=0.2, dim=4),
        dict(kind="laplacian_phi", amplitude=1.0, radius=0.2, dim=2, epsilon=1.0),
        dict(kind="gaussian", amplitude=1.0, radius=0.2, dim=2),
    ],
)
def test_invalid_potentials_rejected(kwargs):
    with pytest.raises(ValueError):
        SingleSitePotential(**kwargs)


def test_zero_amplitude_bump_rejected():
    with pytest.raises(ValueError):
        make_tensor_bump(0.2, 0.0)


@given(st.floats(0.05, 0.45), st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3), st.integers(1, 3))
def test_recipe_round_trip(r, c0, d):
    q = make_tensor_bump(r, c0, d)
    assert SingleSitePotential.from_recipe(q.recipe()) == q


@given(st.floats(-0.19, 0.19), st.floats(-0.19, 0.19))
def test_tensor_bump_factorises(x, y):
    q = make_tensor_bump(0.2, 1.0, 2)
    f, _ = q.profile(np.array([x, y]))
    assert q(np.array([x, y])) == pytest.approx(f[0] * f[1], rel=1e-14, abs=1e-300)


def test_radial_value_at_half_radius():
    q = make_radial_bump(0.2, 1.0, 2)
    assert q(np.array([0.1, 0.0])) == pytest.approx(np.exp(-4.0 / 3.0), rel=1e-14)


def test_tensor_derivative_at_half_radius():
    q = make_tensor_bump(0.2, 1.0, 2)
    x = np.array([0.1, 0.0])
    h = 1e-6
    fd = (q(x + [h, 0]) - q(x - [h, 0])) / (2 * h)
    assert q.gradient(x)[0] == pytest.approx(fd, abs=1e-6)
