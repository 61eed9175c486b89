"""Cell-centred tensor grids, Neumann finite differences and eigenvalue tools.

A box of ``2L+1`` unit cells centred at the origin is discretised with ``n``
nodes per unit length.  Nodes sit at cell centres ``x_j = -side/2 + (j+1/2)h``
so every coordinate reflection of the box maps the node set onto itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

if TYPE_CHECKING:
    from .potentials import SingleSitePotential

DENSE_THRESHOLD = 512
DEFAULT_TOL = 1e-8
ENDPOINT_NUDGE = 1e-12
QUADRATURE_ORDER = 8


class SolverError(RuntimeError):
    """An eigen-solve or factorisation that did not reach the requested accuracy."""

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = None if residuals is None else np.asarray(residuals, dtype=float)


@dataclass(frozen=True)
class GridSpec:
    dim: int
    points_per_unit: int
    cells_per_side: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.points_per_unit < 1:
            raise ValueError("points_per_unit must be positive")
        if self.cells_per_side < 1 or self.cells_per_side % 2 == 0:
            raise ValueError("cells_per_side must be an odd positive integer")

    @property
    def spacing(self) -> float:
        return 1.0 / self.points_per_unit

    @property
    def half_width(self) -> int:
        """Box radius L, so that the box holds 2L+1 cells per axis."""
        return (self.cells_per_side - 1) // 2

    @property
    def side(self) -> float:
        return float(self.cells_per_side)

    @property
    def nodes_per_axis(self) -> int:
        return self.points_per_unit * self.cells_per_side

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def dofs(self) -> int:
        return self.nodes_per_axis**self.dim

    def axis_coordinates(self) -> np.ndarray:
        j = np.arange(self.nodes_per_axis)
        return -0.5 * self.side + (j + 0.5) * self.spacing

    def coordinates(self) -> np.ndarray:
        """Node positions, shape (dofs, dim), in C order."""
        axes = np.meshgrid(*([self.axis_coordinates()] * self.dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def check_resolution(self, radius: float) -> None:
        if self.spacing > radius / 2 + 1e-15:
            raise ValueError(
                f"grid spacing {self.spacing:g} too coarse for support radius {radius:g}"
            )


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    matrix: sp.csr_matrix
    grid: GridSpec
    kind: str
    potential_min: float = 0.0

    @property
    def dofs(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    residuals: np.ndarray
    solver: str

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_state(self) -> np.ndarray:
        if self.eigenvectors is None:
            raise ValueError("eigenvectors were not requested")
        return self.eigenvectors[:, 0]


def _second_difference_1d(nodes: int, h: float, closure: str) -> sp.csr_matrix:
    main = np.full(nodes, 2.0)
    if closure == "neumann":
        main[0] = main[-1] = 1.0
    elif closure == "dirichlet":
        main[0] = main[-1] = 3.0
    else:
        raise ValueError(f"unknown closure {closure!r}")
    off = -np.ones(nodes - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


@lru_cache(maxsize=32)
def _laplacian_matrix(grid: GridSpec, closure: str) -> sp.csr_matrix:
    N = grid.nodes_per_axis
    if N < 2:
        raise ValueError("need at least 2 nodes per axis")
    T = _second_difference_1d(N, grid.spacing, closure)
    eye = sp.identity(N, format="csr")
    total = None
    for axis in range(grid.dim):
        factors = [eye] * grid.dim
        factors[axis] = T
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        total = term if total is None else total + term
    total = sp.csr_matrix(total)
    total.sort_indices()
    return total


def build_neumann_laplacian(grid: GridSpec) -> DiscreteOperator:
    """Minus the Laplacian with mirror ghost points (Neumann closure)."""
    return DiscreteOperator(_laplacian_matrix(grid, "neumann"), grid, "laplacian", 0.0)


def build_laplacian(grid: GridSpec, closure: str = "neumann") -> DiscreteOperator:
    """Minus the Laplacian; ``closure='dirichlet'`` uses antisymmetric ghosts instead."""
    return DiscreteOperator(_laplacian_matrix(grid, closure), grid, "laplacian", 0.0)


def neumann_laplacian_eigenvalues_1d(nodes: int, h: float) -> np.ndarray:
    k = np.arange(nodes)
    return (2.0 / h**2) * (1.0 - np.cos(k * np.pi / nodes))


def assemble_hamiltonian(lap: DiscreteOperator, v: np.ndarray) -> DiscreteOperator:
    if lap.kind != "laplacian":
        raise ValueError("expected a Laplacian operator")
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != lap.dofs:
        raise ValueError(f"potential has {v.shape[0]} entries, operator has {lap.dofs}")
    matrix = (lap.matrix + sp.diags(v, format="csr")).tocsr()
    matrix.sort_indices()
    vmin = float(v.min()) if v.size else 0.0
    return DiscreteOperator(matrix, lap.grid, "hamiltonian", vmin)


# ---------------------------------------------------------------- sampling

@lru_cache(maxsize=8)
def _gauss_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * x, 0.5 * w  # nodes on [-1/2, 1/2], weights summing to 1


def _cell_offsets(dim: int, h: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gauss_rule(order)
    pts = np.stack(np.meshgrid(*([x] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    wts = np.ones(1)
    for _ in range(dim):
        wts = np.multiply.outer(wts, w).ravel()
    return h * pts, wts


def local_cell_nodes(n: int) -> np.ndarray:
    """Node coordinates of one unit cell centred at the origin."""
    return -0.5 + (np.arange(n) + 0.5) / n


def sample_cell_blocks(
    q: SingleSitePotential,
    displacements: np.ndarray,
    n: int,
    mode: str = "cell",
    gradient: bool = False,
) -> np.ndarray:
    """Sample q(x - a) on the n^d nodes of a unit cell for many displacements a.

    Returns shape (M, n^d), or (M, n^d, d) when ``gradient`` is set.  In
    ``cell`` mode every node carries the average of q over its own grid cell
    (tensor Gauss-Legendre rule); in ``point`` mode the nodal value.
    """
    disp = np.atleast_2d(np.asarray(displacements, dtype=float))
    M, d = disp.shape
    if d != q.dim:
        raise ValueError("displacement dimension does not match the potential")
    h = 1.0 / n
    s = local_cell_nodes(n)
    if q.is_separable:
        if mode == "cell":
            xq, wq = _gauss_rule(QUADRATURE_ORDER)
            pts = s[:, None] + h * xq[None, :]
        elif mode == "point":
            pts, wq = s[:, None], np.ones(1)
        else:
            raise ValueError(f"unknown sampling mode {mode!r}")
        vals, ders = [], []
        for k in range(d):
            f, df = q.profile(pts[None, :, :] - disp[:, k, None, None], k)
            vals.append(f @ wq)
            ders.append(df @ wq)
        def outer(factors):
            out = factors[0]
            for f in factors[1:]:
                out = (out[:, :, None] * f[:, None, :]).reshape(M, -1)
            return out
        if not gradient:
            return q.amplitude * outer(vals)
        comps = []
        for k in range(d):
            factors = list(vals)
            factors[k] = ders[k]
            comps.append(q.amplitude * outer(factors))
        return np.stack(comps, axis=-1)

    nodes = np.stack(np.meshgrid(*([s] * d), indexing="ij"), axis=-1).reshape(-1, d)
    if mode == "cell":
        offs, wts = _cell_offsets(d, h, QUADRATURE_ORDER)
    elif mode == "point":
        offs, wts = np.zeros((1, d)), np.ones(1)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    # only nodes whose cell can meet the support need evaluating
    reach = q.support_halfwidth + h
    out_shape = (M, nodes.shape[0], d) if gradient else (M, nodes.shape[0])
    out = np.zeros(out_shape)
    for m in range(M):
        near = np.all(np.abs(nodes - disp[m]) < reach, axis=1)
        x = nodes[near][:, None, :] + offs[None, :, :] - disp[m]
        if gradient:
            out[m, near] = np.einsum("pqd,q->pd", q.gradient(x), wts)
        else:
            out[m, near] = q(x) @ wts
    return out


def sample_potential(
    q: SingleSitePotential, center, grid: GridSpec, mode: str = "cell"
) -> np.ndarray:
    """Values of q(. - center) on the grid nodes (cell averages by default)."""
    return _sample_on_grid(q, center, grid, mode, gradient=False)


def sample_potential_gradient(
    q: SingleSitePotential, center, grid: GridSpec, mode: str = "cell"
) -> np.ndarray:
    """(grad q)(. - center) on the grid nodes, shape (dofs, d)."""
    return _sample_on_grid(q, center, grid, mode, gradient=True)


def _sample_on_grid(q, center, grid: GridSpec, mode: str, gradient: bool) -> np.ndarray:
    center = np.asarray(center, dtype=float).reshape(-1)
    if center.shape[0] != grid.dim or q.dim != grid.dim:
        raise ValueError("dimension mismatch between potential, center and grid")
    grid.check_resolution(q.radius)
    lo, hi = q.support_bounds(center)
    if np.any(lo < -grid.side / 2 - 1e-12) or np.any(hi > grid.side / 2 + 1e-12):
        raise ValueError("support of the potential protrudes past the box")
    n = grid.points_per_unit
    # cell containing the centre; the support stays inside the unit cell around it
    site = np.rint(center).astype(int)
    local = center - site
    if q.support_halfwidth + np.max(np.abs(local)) > 0.5 + 1e-12:
        # support crosses into a neighbouring cell: sample the whole box directly
        return _sample_everywhere(q, center, grid, mode, gradient)
    lo_idx = (site + grid.half_width) * n
    tail = (grid.dim,) if gradient else ()
    block = sample_cell_blocks(q, local[None, :], n, mode, gradient)[0]
    out = np.zeros(grid.shape + tail)
    out[tuple(slice(int(a), int(a) + n) for a in lo_idx)] = block.reshape((n,) * grid.dim + tail)
    return out.reshape(grid.dofs, -1) if gradient else out.ravel()


def _sample_everywhere(q, center, grid: GridSpec, mode: str, gradient: bool) -> np.ndarray:
    nodes = grid.coordinates()
    h = grid.spacing
    if mode == "cell":
        offs, wts = _cell_offsets(grid.dim, h, QUADRATURE_ORDER)
    else:
        offs, wts = np.zeros((1, grid.dim)), np.ones(1)
    x = nodes[:, None, :] + offs[None, :, :] - center
    if gradient:
        return np.einsum("pqd,q->pd", q.gradient(x), wts)
    return q(x) @ wts


# ------------------------------------------------------------ eigen-solvers

def _operator_scale(A: sp.spmatrix) -> float:
    return max(1.0, float(abs(A).sum(axis=1).max()))


def _normalise_signs(V: np.ndarray) -> np.ndarray:
    V = V / np.linalg.norm(V, axis=0)
    for j in range(V.shape[1]):
        col = V[:, j]
        first = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max())[0]
        if col[first] < 0:
            V[:, j] = -col
    return V


def lowest_eigenpairs(
    op: DiscreteOperator,
    k: int = 1,
    tol: float = DEFAULT_TOL,
    *,
    method: str = "auto",
    dense_threshold: int = DENSE_THRESHOLD,
    return_vectors: bool = True,
    sigma: float | None = None,
) -> SpectralResult:
    """The k smallest eigenpairs of a symmetric operator.

    Residuals ``||Hv - lv||`` are checked against ``tol`` times the operator's
    infinity norm; a shortfall raises :class:`SolverError`.
    """
    A = op.matrix
    N = A.shape[0]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside [1, {N}]")
    if method == "auto":
        method = "dense" if N <= dense_threshold or k >= N - 1 else "iterative"
    if method == "dense":
        w, V = sla.eigh(A.toarray(), subset_by_index=[0, k - 1])
    elif method == "iterative":
        if sigma is None:
            sigma = op.potential_min - 1.0
        v0 = np.random.default_rng(20240611).standard_normal(N) + 1.0
        ncv = min(N - 1, max(2 * k + 1, 20))
        try:
            w, V = spla.eigsh(A, k=k, sigma=sigma, which="LM", v0=v0, ncv=ncv, tol=0.0)
        except spla.ArpackNoConvergence as exc:
            res = [
                np.linalg.norm(A @ exc.eigenvectors[:, j] - exc.eigenvalues[j] * exc.eigenvectors[:, j])
                for j in range(len(exc.eigenvalues))
            ]
            raise SolverError("iterative eigensolver did not converge", res) from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    else:
        raise ValueError(f"unknown method {method!r}")
    V = _normalise_signs(np.asarray(V))
    residuals = np.linalg.norm(A @ V - V * w, axis=0)
    bound = tol * _operator_scale(A)
    if np.any(residuals > bound):
        raise SolverError(
            f"eigen-residual {residuals.max():.3e} exceeds {bound:.3e}", residuals
        )
    return SpectralResult(
        np.asarray(w, dtype=float), V if return_vectors else None, residuals, method
    )


# ----------------------------------------------------------- inertia counts

class _BlockTridiagonal:
    """Dense diagonal and off-diagonal blocks of a banded sparse symmetric matrix."""

    def __init__(self, A: sp.csr_matrix, block: int):
        N = A.shape[0]
        if N % block:
            raise ValueError("block size must divide the matrix size")
        coo = A.tocoo()
        if coo.nnz and np.max(np.abs(coo.row - coo.col)) > block:
            raise ValueError("matrix bandwidth exceeds the block size")
        self.block = block
        self.count = N // block
        self.diag = [A[i * block:(i + 1) * block, i * block:(i + 1) * block].toarray()
                     for i in range(self.count)]
        self.upper = [A[i * block:(i + 1) * block, (i + 1) * block:(i + 2) * block].toarray()
                      for i in range(self.count - 1)]

    def negative_count(self, shift: float) -> tuple[int, bool]:
        """(number of eigenvalues below ``shift``, whether a pivot vanished)."""
        eye = np.eye(self.block)
        neg = 0
        X = None
        singular = False
        for i in range(self.count):
            S = self.diag[i] - shift * eye
            if X is not None:
                S -= self.upper[i - 1].T @ X
            ldu, ipiv, info = sla.lapack.dsytrf(S, lower=1)
            n_neg, zero = _ldl_inertia(ldu, ipiv, max(1.0, np.abs(S).max()))
            if info > 0 or zero:
                singular = True
                return neg + n_neg, singular
            neg += n_neg
            if i + 1 < self.count:
                X, info = sla.lapack.dsytrs(ldu, ipiv, self.upper[i], lower=1)
                if info != 0:
                    return neg, True
        return neg, singular


def _ldl_inertia(ldu: np.ndarray, ipiv: np.ndarray, scale: float) -> tuple[int, bool]:
    """Negative-eigenvalue count of the block-diagonal factor of a Bunch-Kaufman LDL^T."""
    m = ldu.shape[0]
    neg = 0
    tiny = 1e-14 * scale
    k = 0
    while k < m:
        if ipiv[k] > 0:
            d = ldu[k, k]
            if abs(d) <= tiny:
                return neg, True
            neg += d < 0
            k += 1
        else:
            a, b, c = ldu[k, k], ldu[k + 1, k], ldu[k + 1, k + 1]
            det = a * c - b * b
            if abs(det) <= tiny * tiny:
                return neg, True
            if det < 0:
                neg += 1
            elif a + c < 0:
                neg += 2
            k += 2
    return neg, False


def _sturm_counts(diag: np.ndarray, off: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Eigenvalue counts below each shift for a symmetric tridiagonal matrix."""
    shifts = np.asarray(shifts, dtype=float)
    off2 = off**2
    tiny = 1e-300
    d = diag[0] - shifts
    d = np.where(d == 0.0, tiny, d)
    neg = (d < 0).astype(np.int64)
    for j in range(1, diag.shape[0]):
        d = diag[j] - shifts - off2[j - 1] / d
        d = np.where(d == 0.0, tiny, d)
        neg += d < 0
    return neg


def _block_size(op: DiscreteOperator) -> int:
    N = op.dofs
    if op.grid.dofs == N:
        return N // op.grid.nodes_per_axis
    return N


def count_eigenvalues_below(
    op: DiscreteOperator,
    shifts,
    *,
    dense_threshold: int = DENSE_THRESHOLD,
) -> np.ndarray:
    """Number of eigenvalues strictly below each shift, from matrix inertia.

    A shift that lands on an eigenvalue (singular pivot) is nudged upward by
    a relative 1e-12 and the factorisation repeated.
    """
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    A = op.matrix
    block = _block_size(op)
    if block == 1:
        diag = A.diagonal()
        off = A.diagonal(1)
        return _sturm_counts(diag, off, shifts)
    blocks = _BlockTridiagonal(A, block)
    out = np.empty(shifts.shape[0], dtype=np.int64)
    for j, x in enumerate(shifts):
        neg, singular = blocks.negative_count(x)
        if singular:
            neg, singular = blocks.negative_count(x + ENDPOINT_NUDGE * max(1.0, abs(x)))
        if singular:
            if op.dofs > dense_threshold:
                raise SolverError(f"inertia factorisation broke down at shift {x:g}")
            w = np.linalg.eigvalsh(A.toarray())
            neg = int(np.sum(w < x))
        out[j] = neg
    return out


def count_eigenvalues_in_interval(
    op: DiscreteOperator,
    lower: float,
    upper: float,
    *,
    dense_threshold: int = DENSE_THRESHOLD,
) -> int:
    """Exact number of eigenvalues in the closed interval [lower, upper]."""
    if upper < lower:
        raise ValueError("empty interval")
    # widen both ends by rounding-level slack so eigenvalues sitting exactly on
    # an endpoint are counted whichever side the factorisation puts them
    slack = ENDPOINT_NUDGE * max(1.0, abs(lower), abs(upper), abs(op.matrix).sum(axis=1).max())
    below = count_eigenvalues_below(
        op, [lower - slack, upper + slack],
        dense_threshold=dense_threshold,
    )
    return int(below[1] - below[0])
