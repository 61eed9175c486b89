"""The single-cell ground-energy landscape E0(a) and quantities derived from it."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .configurations import closest_corner, corner_distance, corners
from .grid import (
    DEFAULT_TOL,
    DiscreteOperator,
    GridSpec,
    SpectralResult,
    assemble_hamiltonian,
    build_neumann_laplacian,
    lowest_eigenpairs,
    sample_potential,
    sample_potential_gradient,
)
from .parallel import parallel_map
from .potentials import SingleSitePotential

GAP_FLOOR = 1e-8
FD_STEP = 1e-4
FD_TOL = 1e-3
SECOND_DIFF_STEP = 5e-3
FLAT_TOL = 1e-5


class DichotomyCase(ValueError):
    """The landscape is flat: the potential is of Laplacian-over-phi type."""


class GapTooSmall(ValueError):
    pass


@lru_cache(maxsize=16)
def cell_grid(dim: int, n: int) -> GridSpec:
    return GridSpec(dim, n, 1)


def single_site_operator(q: SingleSitePotential, a, n: int, mode: str = "cell") -> DiscreteOperator:
    grid = cell_grid(q.dim, n)
    a = np.asarray(a, dtype=float).reshape(q.dim)
    return assemble_hamiltonian(build_neumann_laplacian(grid), sample_potential(q, a, grid, mode))


def ground_state(q, a, n: int, k: int = 2, mode: str = "cell", tol: float = DEFAULT_TOL) -> SpectralResult:
    return lowest_eigenpairs(single_site_operator(q, a, n, mode), k=k, tol=tol)


def ground_energy(q, a, n: int, mode: str = "cell") -> float:
    return ground_state(q, a, n, k=1, mode=mode).ground_energy


def _check_range(q: SingleSitePotential, a: np.ndarray, slack: float = 0.0) -> None:
    if np.any(np.abs(a) > q.d_max + slack + 1e-12):
        raise ValueError(f"displacement {a} outside [-{q.d_max}, {q.d_max}]^d")


def fh_gradient(q, a, n: int, mode: str = "cell", state: SpectralResult | None = None) -> np.ndarray:
    """Gradient of E0 at a from the ground state: dE0/da_j = -<u, (d_j q)(. - a) u>."""
    a = np.asarray(a, dtype=float).reshape(q.dim)
    _check_range(q, a)
    if state is None:
        state = ground_state(q, a, n, k=2, mode=mode)
    if len(state.eigenvalues) > 1:
        gap = state.eigenvalues[1] - state.eigenvalues[0]
        if gap < GAP_FLOOR:
            raise GapTooSmall(f"spectral gap {gap:.3e} below {GAP_FLOOR:g}")
    u = state.ground_state
    G = sample_potential_gradient(q, a, cell_grid(q.dim, n), mode)
    return -(u * u) @ G


def fd_gradient(q, a, n: int, step: float = FD_STEP, mode: str = "cell") -> np.ndarray:
    """Central differences of E0; one-sided second-order stencils at the range edge."""
    a = np.asarray(a, dtype=float).reshape(q.dim)
    _check_range(q, a)
    out = np.empty(q.dim)
    for j in range(q.dim):
        e = np.zeros(q.dim)
        e[j] = step
        if abs(a[j]) + step <= q.d_max + 1e-12:
            out[j] = (ground_energy(q, a + e, n, mode) - ground_energy(q, a - e, n, mode)) / (2 * step)
        else:
            back = -np.sign(a[j])  # step back into the range
            f0 = ground_energy(q, a, n, mode)
            f1 = ground_energy(q, a + back * e, n, mode)
            f2 = ground_energy(q, a + 2 * back * e, n, mode)
            out[j] = (-3 * f0 + 4 * f1 - f2) / (2 * back * step)
    return out


@dataclass(frozen=True, eq=False)
class LandscapeSample:
    a: np.ndarray
    E0: float
    grad_fh: np.ndarray
    grad_fd: np.ndarray | None
    gap: float
    E1: float


def _landscape_point(args) -> LandscapeSample:
    q, a, n, mode, with_fd = args
    state = ground_state(q, a, n, k=2, mode=mode)
    g = fh_gradient(q, a, n, mode, state)
    fd = fd_gradient(q, a, n, mode=mode) if with_fd else None
    E = state.eigenvalues
    return LandscapeSample(np.asarray(a, float), float(E[0]), g, fd, float(E[1] - E[0]), float(E[1]))


def landscape_scan(
    q: SingleSitePotential,
    a_grid,
    n: int,
    mode: str = "cell",
    with_fd: bool = False,
    workers: int = 1,
) -> list[LandscapeSample]:
    pts = np.atleast_2d(np.asarray(a_grid, dtype=float))
    for a in pts:
        _check_range(q, a)
    return parallel_map(_landscape_point, [(q, a, n, mode, with_fd) for a in pts], workers)


def quadrant_grid(d_max: float, points: int = 9, d: int = 2, off_axis: bool = False) -> np.ndarray:
    """Tensor grid over the nonnegative orthant of the displacement cube.

    The default axis values are ``linspace(0, d_max, points)``; with
    ``off_axis`` the zero value is dropped and the grid is
    ``d_max * k / points`` for k = 1..points, keeping every sample away from
    the coordinate hyperplanes.
    """
    if off_axis:
        axis = d_max * np.arange(1, points + 1) / points
    else:
        axis = np.linspace(0.0, d_max, points)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class SignPatternReport:
    holds: bool | None
    worst_margin: float
    branch: str
    violations: int


def sign_pattern_check(samples: list[LandscapeSample], scale: float | None = None) -> SignPatternReport:
    """Check sign(dE0/da_i) = -sign(a_i) on every sample and axis.

    When ``scale`` is given and every gradient is below ``FLAT_TOL * scale``
    the landscape is flat and the report carries branch ``"dichotomy"``.
    """
    A = np.array([s.a for s in samples])
    G = np.array([s.grad_fh for s in samples])
    if np.any(np.abs(A) < 1e-3):
        raise ValueError("samples must stay 1e-3 away from the coordinate hyperplanes")
    if scale is not None and np.max(np.abs(G)) < FLAT_TOL * scale:
        return SignPatternReport(None, float(np.max(np.abs(G))), "dichotomy", 0)
    bad = np.sign(G) != -np.sign(A)
    return SignPatternReport(
        bool(not bad.any()), float(np.min(np.abs(G))), "corners", int(bad.sum())
    )


def linear_growth_constant(
    samples: list[LandscapeSample], E0: float, d_max: float, tol: float = 1e-12
) -> float:
    """Smallest C with E0(a) - E0 >= D(a)/C over the samples (inf on violation)."""
    C = 0.0
    for s in samples:
        D = corner_distance(s.a, d_max)
        if D <= tol:
            continue
        rise = s.E0 - E0
        if rise <= tol:
            return float("inf")
        C = max(C, D / rise)
    return C


# ------------------------------------------------------------ ODE residual

@dataclass(frozen=True, eq=False)
class OdeResidualReport:
    a1: np.ndarray
    residual: np.ndarray          # at the requested truncation K
    residual_half: np.ndarray     # at K // 2
    second_derivative: np.ndarray
    first_derivative: np.ndarray
    K: int


def _first_derivative_operator(N: int, h: float) -> np.ndarray:
    """Second-order derivative matrix on N nodes (one-sided at the ends)."""
    D = np.zeros((N, N))
    for i in range(1, N - 1):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    D[0, :3] = np.array([-1.5, 2.0, -0.5]) / h
    D[-1, -3:] = np.array([0.5, -2.0, 1.5]) / h
    return D


def ode_terms(q: SingleSitePotential, a, n: int, K: int, mode: str = "cell"):
    """Ingredients of the second-order landscape equation at one displacement.

    Returns (E0, <u0, d1 u0>, couplings B_k for k = 1..K, E_k - E0).  B is
    evaluated through the eigen-equation,
    B(u_k, d1 u0) = <u_k, (d1 q) u0> + (E_k - E0) <u_k, d1 u0>,
    which equals the difference of Laplacian pairings in the continuum.
    """
    a = np.asarray(a, dtype=float).reshape(q.dim)
    grid = cell_grid(q.dim, n)
    op = single_site_operator(q, a, n, mode)
    if K + 1 > op.dofs:
        raise ValueError(f"K={K} exceeds the {op.dofs - 1} available excited states")
    res = lowest_eigenpairs(op, k=K + 1, method="dense")
    E, U = res.eigenvalues, res.eigenvectors
    u0 = U[:, 0]
    D1 = _first_derivative_operator(grid.nodes_per_axis, grid.spacing)
    shaped = u0.reshape(grid.shape)
    du0 = np.tensordot(D1, shaped, axes=([1], [0])).ravel()
    dq = sample_potential_gradient(q, a, grid, mode)[:, 0]
    overlap = float(u0 @ du0)
    gaps = E[1:] - E[0]
    B = U[:, 1:].T @ (dq * u0) + gaps * (U[:, 1:].T @ du0)
    return float(E[0]), overlap, B, gaps


def ode_residual(
    q: SingleSitePotential,
    a1_grid,
    n: int,
    K: int = 40,
    fixed=(),
    step: float = SECOND_DIFF_STEP,
    mode: str = "cell",
) -> OdeResidualReport:
    """Residual of E0'' - 4<u0, d1 u0> E0' + 2 sum_k B_k^2 / (E_k - E0) along a_1."""
    a1 = np.asarray(a1_grid, dtype=float)
    if a1.size > 1 and np.max(np.diff(np.sort(a1))) > 1e-2 + 1e-12:
        raise ValueError("a1 grid spacing above 1e-2")
    fixed = np.asarray(fixed, dtype=float).reshape(-1)
    if fixed.size != q.dim - 1:
        raise ValueError("need one fixed coordinate for each remaining axis")
    res, res_half, d2, d1 = [], [], [], []
    for x in a1:
        pt = np.concatenate([[x], fixed])
        lo, hi = pt.copy(), pt.copy()
        lo[0] -= step
        hi[0] += step
        E_lo, E_hi = ground_energy(q, lo, n, mode), ground_energy(q, hi, n, mode)
        E0, overlap, B, gaps = ode_terms(q, pt, n, K, mode)
        second = (E_hi - 2 * E0 + E_lo) / step**2
        first = (E_hi - E_lo) / (2 * step)
        lhs = second - 4 * overlap * first
        terms = B**2 / gaps
        res.append(abs(lhs + 2 * terms.sum()))
        res_half.append(abs(lhs + 2 * terms[: K // 2].sum()))
        d2.append(second)
        d1.append(first)
    return OdeResidualReport(a1, np.array(res), np.array(res_half), np.array(d2), np.array(d1), K)


# ------------------------------------------------------- spectral constants

@dataclass(frozen=True)
class SpectralConstants:
    """Landscape constants used by the finite-volume positivity checks.

    ``delta0`` is the smallest slope towards the nearest corner within
    distance ``r0`` of the corners; ``E0_r0`` the lowest ground energy at
    distance at least ``r0``; ``c3`` the largest cut-off slope; ``C1`` and
    ``C2`` bound the derivative of the ground projection and of the
    Hamiltonian along the corner vector field.
    """

    E0_min: float
    E1: float
    E0_r0: float
    delta0: float
    r0: float
    c3: float
    C1: float
    C2: float
    corner_slope: float
    n: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def smoothstep_cutoff(rho, r0: float) -> np.ndarray:
    """1 on [0, r0], 0 on [2 r0, inf), quintic C^2 transition in between."""
    s = np.clip((np.asarray(rho, dtype=float) - r0) / r0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def corner_direction(a, d_max: float) -> np.ndarray:
    """Unit vector from a towards its closest corner (zero at the corner itself)."""
    a = np.asarray(a, dtype=float)
    v = closest_corner(a, d_max) - a
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norm > 1e-12, v / np.where(norm > 1e-12, norm, 1.0), 0.0)


def _inward_directions(d: int) -> np.ndarray:
    if d == 1:
        return np.ones((1, 1))
    if d == 2:
        th = np.linspace(0.0, np.pi / 2, 7)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    dirs = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)]
    v = np.array(dirs, dtype=float)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _projection_bounds(q, a, n, direction, weight, mode):
    """Norms entering the ground-projection derivative along ``direction``."""
    op = single_site_operator(q, a, n, mode)
    E, U = np.linalg.eigh(op.matrix.toarray())
    u0 = U[:, 0]
    G = sample_potential_gradient(q, a, cell_grid(q.dim, n), mode)
    dH = -(G @ direction) * weight            # derivative of the potential along the field
    coeff = (U[:, 1:].T @ (dH * u0)) / (E[1:] - E[0])
    du = -U[:, 1:] @ coeff                     # derivative of the ground state
    Hdu = U[:, 1:] @ (E[1:] * -coeff)
    w = np.linalg.norm(du)
    # || |H du><u| + E0 |u><du| || on the orthonormal pair (u, du/|du|)
    y = E[0] * u0
    gram = np.array([[Hdu @ Hdu, w * (Hdu @ y)], [w * (Hdu @ y), w * w * (y @ y)]])
    h_norm = float(np.sqrt(max(np.linalg.eigvalsh(gram).max(), 0.0)))
    return w, h_norm, float(np.max(np.abs(dH))), float(E[0])


def spectral_constants(
    q: SingleSitePotential,
    n: int,
    points: int = 9,
    rungs: int = 16,
    mode: str = "cell",
    workers: int = 1,
) -> SpectralConstants:
    d, d_max = q.dim, q.d_max
    corner_E = [ground_energy(q, c, n, mode) for c in corners(d, d_max)]
    E0 = min(corner_E)
    if max(corner_E) - E0 > 1e-10 * max(1.0, abs(E0)):
        raise ValueError("corner energies disagree beyond 1e-10")
    top = np.full(d, d_max)

    # samples: nonnegative quadrant grid plus a fan of rays into the top corner
    radii = np.linspace(0.9 * d_max / rungs, 0.9 * d_max, rungs)
    fan = np.array([top - rho * e for rho in radii for e in _inward_directions(d)])
    pts = np.vstack([quadrant_grid(d_max, points, d), fan])
    samples = landscape_scan(q, pts, n, mode, workers=workers)
    A = np.array([s.a for s in samples])
    E0a = np.array([s.E0 for s in samples])
    E1a = np.array([s.E1 for s in samples])
    Dist = corner_distance(A, d_max)
    dirs = corner_direction(A, d_max)
    slope = -np.einsum("ij,ij->i", dirs, np.array([s.grad_fh for s in samples]))

    if np.max(np.abs(E0a - E0)) < 1e-6 * max(q.sup_norm, 1e-300):
        raise DichotomyCase("ground-energy landscape is flat")

    g_corner = fh_gradient(q, top, n, mode)
    corner_slope = float(np.min(np.abs(g_corner)))
    r0 = 0.0
    for rho in radii[radii <= 0.45 * d_max + 1e-12]:
        inside = (Dist > 1e-12) & (Dist <= rho + 1e-12)
        if inside.any() and slope[inside].min() >= 0.5 * corner_slope:
            r0 = float(rho)
        else:
            break
    if r0 == 0.0:
        raise ValueError("corner slope does not persist to the first sampled radius")
    near = (Dist > 1e-12) & (Dist <= r0 + 1e-12)
    delta0 = float(slope[near].min())
    far = Dist >= r0 - 1e-12
    E0_r0 = float(E0a[far].min())
    eta = smoothstep_cutoff(Dist, r0)
    c3 = float(np.max(eta * np.abs(slope)))

    C1 = C2 = 0.0
    for a, e, w in zip(A, dirs, eta):
        if w <= 0 or not np.any(e):
            continue
        du, hdu, dh, Ea = _projection_bounds(q, a, n, e, w, mode)
        C1 = max(C1, 2.0 * (abs(Ea) * du + hdu))
        C2 = max(C2, dh)
    return SpectralConstants(
        E0_min=E0, E1=float(E1a.min()), E0_r0=E0_r0, delta0=delta0, r0=r0, c3=c3,
        C1=float(C1), C2=float(C2), corner_slope=corner_slope, n=n,
    )


def boundary_flatness(q: SingleSitePotential, a, n: int, mode: str = "cell") -> float:
    """Relative spread (max - min) / mean of the ground state outside the bump's support."""
    grid = cell_grid(q.dim, n)
    u = ground_state(q, a, n, k=1, mode=mode).ground_state
    x = grid.coordinates()
    lo, hi = q.support_bounds(a)
    h = grid.spacing
    outside = np.any((x < lo - h) | (x > hi + h), axis=1)
    v = u[outside]
    return float((v.max() - v.min()) / abs(v.mean()))
