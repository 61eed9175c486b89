"""One-dimensional transfer matrices and Lyapunov exponents.

The cell propagator maps (u, u') at x = -1/2 to x = +1/2 for
-u'' + q(x - w) u = E u.  Integration uses the fourth-order Magnus scheme
with two Gauss points; every substep is the exact exponential of a
traceless 2x2 matrix, so determinants stay at 1 up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .configurations import DistributionSpec, site_uniforms
from .potentials import SingleSitePotential

DEFAULT_STEPS = 256
DEFAULT_BATCHES = 20
_GAUSS = 0.5 / np.sqrt(3.0)


def _expm_traceless(a, b, c):
    """exp([[a, b], [c, -a]]) for arrays a, b, c of equal shape; returns (..., 2, 2)."""
    s2 = a * a + b * c
    s = np.sqrt(np.abs(s2))
    small = s < 1e-8
    safe = np.where(small, 1.0, s)
    # cosh/sinh on the hyperbolic side, cos/sin on the elliptic side
    ch = np.where(s2 >= 0, np.cosh(s), np.cos(s))
    sh = np.where(s2 >= 0, np.sinh(safe) / safe, np.sin(safe) / safe)
    # Taylor branch near s = 0 avoids 0/0; the error is O(s^4)
    ch = np.where(small, 1.0 + 0.5 * s2, ch)
    sh = np.where(small, 1.0 + s2 / 6.0, sh)
    out = np.empty(np.shape(a) + (2, 2))
    out[..., 0, 0] = ch + sh * a
    out[..., 0, 1] = sh * b
    out[..., 1, 0] = sh * c
    out[..., 1, 1] = ch - sh * a
    return out


def _ordered_product(mats: np.ndarray) -> np.ndarray:
    """M_{k-1} ... M_1 M_0 along axis -3, by pairwise reduction."""
    while mats.shape[-3] > 1:
        if mats.shape[-3] % 2:
            pad = np.broadcast_to(np.eye(2), mats.shape[:-3] + (1, 2, 2))
            mats = np.concatenate([mats, pad], axis=-3)
        mats = np.einsum("...ij,...jk->...ik", mats[..., 1::2, :, :], mats[..., 0::2, :, :])
    return mats[..., 0, :, :]


def transfer_matrices(
    q: SingleSitePotential, omegas, E, steps: int = DEFAULT_STEPS
) -> np.ndarray:
    """Cell propagators for every displacement in ``omegas`` (and energy in ``E``).

    ``omegas`` and ``E`` broadcast against each other; the result has shape
    broadcast(omegas, E).shape + (2, 2).
    """
    if q.dim != 1:
        raise ValueError("transfer matrices need a one-dimensional potential")
    if steps < 1:
        raise ValueError("steps must be positive")
    omegas, E = np.broadcast_arrays(np.asarray(omegas, float), np.asarray(E, float))
    if np.any(np.abs(omegas) > q.d_max + 1e-12):
        raise ValueError("displacement outside [-d_max, d_max]")
    h = 1.0 / steps
    left = -0.5 + h * np.arange(steps)
    x1 = left + h * (0.5 - _GAUSS)
    x2 = left + h * (0.5 + _GAUSS)
    shape = omegas.shape
    pos1 = x1[None, :] - omegas.reshape(-1, 1)
    pos2 = x2[None, :] - omegas.reshape(-1, 1)
    w1 = q(pos1[..., None]) - E.reshape(-1, 1)
    w2 = q(pos2[..., None]) - E.reshape(-1, 1)
    a = (np.sqrt(3.0) / 12.0) * h * h * (w1 - w2)
    c = 0.5 * h * (w1 + w2)
    steps_m = _expm_traceless(a, np.full_like(a, h), c)
    return _ordered_product(steps_m).reshape(shape + (2, 2))


def transfer_matrix_cell(
    q: SingleSitePotential, omega: float, E: float, steps: int = DEFAULT_STEPS
) -> np.ndarray:
    """Propagator of (u, u') across one unit cell with the bump displaced by ``omega``."""
    return transfer_matrices(q, omega, E, steps)


def cell_neumann_ground_energy(
    q: SingleSitePotential, omega: float, steps: int = DEFAULT_STEPS, tol: float = 1e-13
) -> float:
    """Lowest Neumann eigenvalue of one cell, computed by shooting.

    Starting from (u, u') = (1, 0) the outgoing slope is T[1, 0](E); it is
    positive below the ground energy and changes sign there.
    """
    lo = min(0.0, float(np.min(q(np.linspace(-0.5, 0.5, 2001)[:, None])))) - 1.0
    hi = max(lo + 1.0, 1.0)
    slope = lambda e: transfer_matrix_cell(q, omega, e, steps)[1, 0]
    while slope(hi) > 0:
        hi = lo + 2.0 * (hi - lo)
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chain_displacements(
    q: SingleSitePotential, dist: DistributionSpec, n_cells: int, seed: int, trial: int = 0
) -> np.ndarray:
    """Displacements of cells 0..n_cells-1 from the per-site counter streams."""
    d_max = q.d_max
    dist.validate(1, d_max)
    if dist.kind == "point_mass":
        if dist.value == "minimizer":
            return np.where(np.arange(n_cells) % 2 == 0, d_max, -d_max).astype(float)
        return np.full(n_cells, float(np.asarray(dist.value).ravel()[0]))
    sites = np.arange(n_cells)[:, None]
    u = site_uniforms(seed, trial, sites, 2)
    if dist.kind == "uniform_cube":
        return d_max * (2.0 * u[:, 0] - 1.0)
    signs = np.where(u[:, 0] < 0.5, -1.0, 1.0)
    if dist.kind == "corner_bernoulli":
        return signs * d_max
    if dist.kind == "near_corner":
        return signs * (d_max - dist.width * u[:, 1])
    # near_minimizer: alternating corners pushed inwards
    base = np.where(np.arange(n_cells) % 2 == 0, d_max, -d_max)
    return base - np.sign(base) * dist.width * u[:, 1]


@dataclass(frozen=True)
class LyapunovEstimate:
    energy: float
    gamma: float
    stderr: float
    n_cells: int
    batches: int
    max_det_error: float


def _cell_matrices(q, omegas, energies, steps, chunk=4096):
    """Per-cell propagators, shape (len(energies), len(omegas), 2, 2).

    Repeated displacements (e.g. Bernoulli chains) are integrated once.
    """
    uniq, inverse = np.unique(omegas, return_inverse=True)
    out = np.empty((len(energies), len(uniq), 2, 2))
    for start in range(0, len(uniq), chunk):
        part = uniq[start : start + chunk]
        out[:, start : start + len(part)] = transfer_matrices(
            q, part[None, :], np.asarray(energies)[:, None], steps
        )
    return out[:, inverse]


def lyapunov_exponents(
    q: SingleSitePotential,
    dist: DistributionSpec,
    energies,
    n_cells: int,
    seed: int,
    batches: int = DEFAULT_BATCHES,
    steps: int = DEFAULT_STEPS,
    trial: int = 0,
) -> list[LyapunovEstimate]:
    """Lyapunov exponents at several energies along one sampled chain.

    The column vector is renormalized after every cell and the log norms
    are summed.  The stderr comes from batch means over ``batches``
    contiguous stretches of the chain.
    """
    if batches < 2 or n_cells < batches:
        raise ValueError("need at least two batches and one cell per batch")
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    omegas = chain_displacements(q, dist, n_cells, seed, trial)
    mats = _cell_matrices(q, omegas, energies, steps)
    dets = mats[..., 0, 0] * mats[..., 1, 1] - mats[..., 0, 1] * mats[..., 1, 0]
    det_err = float(np.max(np.abs(dets - 1.0)))
    logs = np.empty((len(energies), n_cells))
    v = np.tile(np.array([1.0, 0.0]), (len(energies), 1))
    for k in range(n_cells):
        v = np.einsum("eij,ej->ei", mats[:, k], v)
        nrm = np.hypot(v[:, 0], v[:, 1])
        logs[:, k] = np.log(nrm)
        v = v / nrm[:, None]
    edges = np.linspace(0, n_cells, batches + 1).astype(int)
    means = np.stack(
        [logs[:, a:b].sum(axis=1) / (b - a) for a, b in zip(edges[:-1], edges[1:])], axis=1
    )
    gamma = logs.sum(axis=1) / n_cells
    stderr = means.std(axis=1, ddof=1) / np.sqrt(batches)
    return [
        LyapunovEstimate(float(e), float(g), float(s), n_cells, batches, det_err)
        for e, g, s in zip(energies, gamma, stderr)
    ]


def lyapunov_exponent(
    q: SingleSitePotential,
    dist: DistributionSpec,
    E: float,
    n_cells: int,
    seed: int,
    batches: int = DEFAULT_BATCHES,
    steps: int = DEFAULT_STEPS,
) -> LyapunovEstimate:
    return lyapunov_exponents(q, dist, [E], n_cells, seed, batches, steps)[0]


@dataclass(frozen=True, eq=False)
class CriticalScan:
    E0: float
    estimates: list[LyapunovEstimate]

    @property
    def energies(self) -> np.ndarray:
        return np.array([e.energy for e in self.estimates])

    @property
    def gammas(self) -> np.ndarray:
        return np.array([e.gamma for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])

    @property
    def center_index(self) -> int:
        return int(np.argmin(np.abs(self.energies - self.E0)))

    def dip_at_E0(self) -> bool:
        """True when gamma at E0 is within 2 stderr of zero and both neighbours exceed 3 stderr."""
        i = self.center_index
        if i == 0 or i == len(self.estimates) - 1:
            return False
        mid = self.estimates[i]
        flanks = (self.estimates[i - 1], self.estimates[i + 1])
        return mid.gamma <= 2 * mid.stderr and all(f.gamma > 3 * f.stderr for f in flanks)


def critical_energy_scan(
    q: SingleSitePotential,
    dist: DistributionSpec | None = None,
    offsets=(-4e-3, -2e-3, -1e-3, 0.0, 1e-3, 2e-3, 4e-3),
    n_cells: int = 100_000,
    seed: int = 0,
    batches: int = DEFAULT_BATCHES,
    steps: int = DEFAULT_STEPS,
) -> CriticalScan:
    """Lyapunov exponents at E0 + offsets, E0 being the corner ground energy of one cell."""
    dist = dist or DistributionSpec("corner_bernoulli")
    E0 = cell_neumann_ground_energy(q, q.d_max, steps)
    energies = E0 + np.asarray(offsets, dtype=float)
    return CriticalScan(E0, lyapunov_exponents(q, dist, energies, n_cells, seed, batches, steps))
