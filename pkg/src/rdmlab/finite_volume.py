"""Box Hamiltonians for displacement fields and the operator inequalities on them."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .configurations import (
    DisplacementField,
    DistributionSpec,
    closest_corner,
    corner_projection,
    is_corner_valued,
    sample_config,
)
from .grid import (
    DiscreteOperator,
    GridSpec,
    assemble_hamiltonian,
    build_laplacian,
    count_eigenvalues_below,
    lowest_eigenpairs,
    sample_cell_blocks,
)
from .parallel import parallel_map
from .potentials import SingleSitePotential
from .single_site import SpectralConstants, corner_direction, smoothstep_cutoff

BISECTION_TOL = 1e-3
FEASIBILITY_TOL = 1e-8


@lru_cache(maxsize=16)
def box_grid(dim: int, n: int, L: int) -> GridSpec:
    return GridSpec(dim, n, 2 * L + 1)


def _scatter_blocks(blocks: np.ndarray, L: int, n: int, d: int) -> np.ndarray:
    """Arrange per-cell node blocks (C^d cells x n^d nodes [x extra]) on the box grid."""
    C = 2 * L + 1
    extra = blocks.shape[2:]
    arr = blocks.reshape((C,) * d + (n,) * d + extra)
    perm = [ax for k in range(d) for ax in (k, d + k)] + list(range(2 * d, arr.ndim))
    return arr.transpose(perm).reshape((C * n,) * d + extra).reshape((C * n) ** d, *extra)


def field_potential(
    q: SingleSitePotential, fld: DisplacementField, n: int, mode: str = "cell", gradient: bool = False
) -> np.ndarray:
    """Sum over sites of q(x - i - w_i) on the box grid (or its per-site gradient)."""
    d = q.dim
    if fld.dim != d:
        raise ValueError("field and potential dimensions differ")
    if q.support_halfwidth + np.max(np.abs(fld.values), initial=0.0) > 0.5 + 1e-12:
        raise ValueError("a displaced bump protrudes from its cell")
    blocks = sample_cell_blocks(q, fld.flat, n, mode, gradient)
    return _scatter_blocks(blocks, fld.L, n, d)


def assemble_finite_volume(
    q: SingleSitePotential,
    fld: DisplacementField,
    n: int,
    mode: str = "cell",
    closure: str = "neumann",
) -> DiscreteOperator:
    grid = box_grid(q.dim, n, fld.L)
    grid.check_resolution(q.radius)
    return assemble_hamiltonian(build_laplacian(grid, closure), field_potential(q, fld, n, mode))


def ground_state_energy(q, fld: DisplacementField, n: int, mode: str = "cell") -> float:
    return lowest_eigenpairs(assemble_finite_volume(q, fld, n, mode), k=1, return_vectors=False).ground_energy


# ----------------------------------------------------------- form margins

@dataclass(frozen=True)
class FormComparisonReport:
    t_star: float
    min_eig_at_t: float
    samples: int = 1
    violation: bool = False


def _pencil(A: sp.spmatrix, B: sp.spmatrix, t: float, grid: GridSpec, lower: float) -> DiscreteOperator:
    return DiscreteOperator((A - t * B).tocsr(), grid, "hamiltonian", lower)


def _bisect(A, B, grid, lower_bound, energy_scale, tol=BISECTION_TOL) -> FormComparisonReport:
    """Largest t in [0, 1] with A - tB >= -1e-8 * scale, by inertia counts.

    t -> lambda_min(A - tB) is concave, so the feasible set is an interval
    containing 0 whenever A itself is (numerically) nonnegative.
    """
    slack = FEASIBILITY_TOL * max(1.0, energy_scale)

    def feasible(t: float) -> bool:
        op = _pencil(A, B, t, grid, lower_bound(t))
        return count_eigenvalues_below(op, [-slack])[0] == 0

    if feasible(1.0):
        t = 1.0
    elif not feasible(0.0):
        return FormComparisonReport(0.0, _min_eig(A, B, 0.0, grid, lower_bound), violation=True)
    else:
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        t = lo
    return FormComparisonReport(t, _min_eig(A, B, t, grid, lower_bound), violation=t <= 0.0)


def _min_eig(A, B, t, grid, lower_bound) -> float:
    op = _pencil(A, B, t, grid, lower_bound(t))
    return lowest_eigenpairs(op, k=1, return_vectors=False).ground_energy


def _margin(q, fld: DisplacementField, n: int, E0: float, with_distance: bool, mode: str):
    d_max = q.d_max
    proj = corner_projection(fld, d_max)
    Ha = assemble_finite_volume(q, fld, n, mode)
    Hc = assemble_finite_volume(q, proj, n, mode)
    grid = Ha.grid
    eye = sp.identity(grid.dofs, format="csr")
    A = Ha.matrix - E0 * eye
    B = Hc.matrix - E0 * eye
    dist = 0.0
    if with_distance:
        if fld.L != 0:
            raise ValueError("the distance term is defined for a single cell")
        dist = float(np.linalg.norm(fld.flat[0] - proj.flat[0]))
        B = B + dist * eye
    # (1-t)(-Lap) >= 0, so the potential part bounds the pencil from below
    lap_diag = build_laplacian(grid).matrix.diagonal()
    va = Ha.matrix.diagonal() - lap_diag
    vc = Hc.matrix.diagonal() - lap_diag

    def lower_bound(t: float) -> float:
        return float(np.min(va - t * vc)) - (1 - t) * E0 - t * dist

    scale = max(1.0, abs(E0), q.sup_norm)
    return _bisect(A.tocsr(), B.tocsr(), grid, lower_bound, scale)


def single_site_form_margin(q, a, n: int, E0: float, mode: str = "cell") -> FormComparisonReport:
    """Largest t with H(a) - E0 >= t (H(c(a)) - E0 + |a - c(a)|) on one cell."""
    fld = DisplacementField(0, np.asarray(a, dtype=float).reshape((1,) * q.dim + (q.dim,)))
    return _margin(q, fld, n, E0, True, mode)


def form_comparison_margin(q, fld: DisplacementField, n: int, E0: float, mode: str = "cell") -> FormComparisonReport:
    """Largest t with H_w - E0 >= t (H_c(w) - E0) on the box of ``fld``."""
    if is_corner_valued(fld, q.d_max):
        return FormComparisonReport(1.0, _corner_min_eig(q, fld, n, E0, mode))
    return _margin(q, fld, n, E0, False, mode)


def _corner_min_eig(q, fld, n, E0, mode) -> float:
    return ground_state_energy(q, fld, n, mode) - E0


def _form_trial(args):
    q, dist, L, n, E0, seed, trial, mode = args
    fld = sample_config(dist, L, seed, q.dim, q.d_max, trial)
    return form_comparison_margin(q, fld, n, E0, mode)


def form_comparison_batch(
    q, dist: DistributionSpec, L: int, n: int, E0: float, trials: int, seed: int,
    mode: str = "cell", workers: int = 1,
) -> list[FormComparisonReport]:
    jobs = [(q, dist, L, n, E0, seed, t, mode) for t in range(trials)]
    return parallel_map(_form_trial, jobs, workers)


# ------------------------------------------------------- vector-field sum

def field_derivative_sum(
    q: SingleSitePotential, fld: DisplacementField, psi: np.ndarray, n: int, r0: float, mode: str = "cell"
) -> float:
    """Minus the summed derivative of <psi, H psi> along the cut-off corner field.

    Each site moves its bump towards the nearest corner with weight
    eta(|c - w_i|); the value is sum_i eta_i <psi, (e_i . grad q)(. - i - w_i) psi>.
    """
    psi = np.asarray(psi, dtype=float)
    d = q.dim
    disp = fld.flat
    dirs = corner_direction(disp, q.d_max)
    dist = np.linalg.norm(closest_corner(disp, q.d_max) - disp, axis=-1)
    weights = smoothstep_cutoff(dist, r0)
    weights = np.where(dist > 1e-12, weights, 0.0)
    active = weights > 0
    if not active.any():
        return 0.0
    grads = sample_cell_blocks(q, disp[active], n, mode, gradient=True)  # (m, n^d, d)
    proj = np.einsum("mpd,md->mp", grads, dirs[active]) * weights[active, None]
    blocks = np.zeros((disp.shape[0], n**d))
    blocks[active] = proj
    field_vals = _scatter_blocks(blocks, fld.L, n, d)
    return float(np.sum(psi * psi * field_vals) / np.dot(psi, psi))


def delta2_recipe(c: SpectralConstants, safety: float = 0.99) -> float:
    """Largest delta2 satisfying both smallness conditions of the positivity argument.

    With g1 = E1 - E0 and gr = E0_r0 - E0:
      c3 x/gr + (C1/2) sqrt(x/g1) + C2 x/g1 < delta0/4,
      x/g1 + x/gr < min(delta0, 1)/2.
    The first left side is increasing in x; the root is found in closed form
    as a quadratic in sqrt(x).  ``safety`` keeps the inequalities strict.
    """
    g1 = c.E1 - c.E0_min
    gr = c.E0_r0 - c.E0_min
    if g1 <= 0 or gr <= 0 or c.delta0 <= 0:
        raise ValueError("spectral constants do not describe a corner-minimum landscape")
    alpha = c.c3 / gr + c.C2 / g1
    beta = 0.5 * c.C1 / np.sqrt(g1)
    target = c.delta0 / 4
    if alpha > 0:
        s = (-beta + np.sqrt(beta * beta + 4 * alpha * target)) / (2 * alpha)
    else:
        s = target / beta
    x1 = s * s
    x2 = 0.5 * min(c.delta0, 1.0) / (1 / g1 + 1 / gr)
    return safety * min(x1, x2)


@dataclass(frozen=True, eq=False)
class PositivityTrial:
    trial: int
    lambda_min: float
    value: float
    qualifying: bool
    corner: bool


@dataclass(frozen=True, eq=False)
class FieldPositivityReport:
    trials: list[PositivityTrial]
    delta2_used: float
    E0: float

    @property
    def qualifying(self) -> list[PositivityTrial]:
        return [t for t in self.trials if t.qualifying and not t.corner]

    @property
    def values(self) -> np.ndarray:
        return np.array([t.value for t in self.qualifying])

    @property
    def delta1_hat(self) -> float:
        v = self.values
        return float(v.min()) if v.size else float("nan")

    @property
    def violations(self) -> int:
        return int(np.sum(self.values <= 0))

    def quartiles(self) -> tuple[float, float, float]:
        v = self.values
        if not v.size:
            return (float("nan"),) * 3
        return tuple(float(x) for x in np.quantile(v, [0.25, 0.5, 0.75]))


def _positivity_trial(args) -> PositivityTrial:
    q, dist, L, n, E0, delta2, r0, seed, trial, mode = args
    fld = sample_config(dist, L, seed, q.dim, q.d_max, trial)
    op = assemble_finite_volume(q, fld, n, mode)
    res = lowest_eigenpairs(op, k=1)
    lam = res.ground_energy
    qualifies = lam <= E0 + delta2
    value = field_derivative_sum(q, fld, res.ground_state, n, r0, mode) if qualifies else float("nan")
    return PositivityTrial(trial, lam, value, bool(qualifies), is_corner_valued(fld, q.d_max))


def positivity_experiment(
    q: SingleSitePotential,
    dist: DistributionSpec,
    L: int,
    n: int,
    trials: int,
    delta2: float,
    constants: SpectralConstants,
    seed: int,
    mode: str = "cell",
    workers: int = 1,
) -> FieldPositivityReport:
    jobs = [
        (q, dist, L, n, constants.E0_min, delta2, constants.r0, seed, t, mode)
        for t in range(trials)
    ]
    return FieldPositivityReport(parallel_map(_positivity_trial, jobs, workers), delta2, constants.E0_min)


def ground_state_decay_profile(q, fld: DisplacementField, n: int, mode: str = "cell") -> np.ndarray:
    """Probability mass of the box ground state in each unit cell, shape (2L+1,)*d."""
    op = assemble_finite_volume(q, fld, n, mode)
    psi = lowest_eigenpairs(op, k=1).ground_state
    d, C = q.dim, 2 * fld.L + 1
    arr = (psi * psi).reshape(*((C, n) * d))
    mass = arr.sum(axis=tuple(range(1, 2 * d, 2)))
    return mass / mass.sum()
