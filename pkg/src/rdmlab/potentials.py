"""Single-site potentials: compactly supported, reflection-symmetric bumps."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

KINDS = ("tensor_bump", "radial_bump", "laplacian_phi", "zero")


def bump(t):
    """exp(-1/(1-t^2)) on |t| < 1, zero elsewhere."""
    return bump_derivatives(t, 0)[0]


def bump_derivatives(t, order: int = 3) -> list[np.ndarray]:
    """The bump and its first ``order`` derivatives at ``t``."""
    t = np.asarray(t, dtype=float)
    s = 1.0 - t * t
    inside = s > 1e-3  # exp(-1000) underflows to zero anyway
    si = np.where(inside, s, 1.0)
    b = np.where(inside, np.exp(-1.0 / si), 0.0)
    out = [b]
    if order >= 1:
        g1 = -2.0 * t / si**2
        out.append(b * g1)
    if order >= 2:
        g2 = -2.0 / si**2 - 8.0 * t * t / si**3
        out.append(b * (g1 * g1 + g2))
    if order >= 3:
        g3 = -24.0 * t / si**3 - 48.0 * t**3 / si**4
        out.append(b * (g1**3 + 3.0 * g1 * g2 + g3))
    return out


@dataclass(frozen=True)
class SingleSitePotential:
    """A bump q on R^d supported in the cube [-r, r]^d.

    ``offset`` moves the bump off-centre; it exists only to build
    deliberately asymmetric potentials for negative tests.
    """

    kind: str
    amplitude: float
    radius: float
    dim: int
    epsilon: float = 0.0
    offset: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if not 0.0 < self.radius < 0.5:
            raise ValueError(f"radius must lie in (0, 1/2), got {self.radius}")
        if self.kind == "laplacian_phi" and not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.offset is not None and len(self.offset) != self.dim:
            raise ValueError("offset must have one entry per dimension")

    # -- geometry
    @property
    def d_max(self) -> float:
        return 0.5 - self.radius

    @property
    def radius_warning(self) -> bool:
        """Set when r >= 1/4, outside the regime where corners are well separated."""
        return self.radius >= 0.25

    @property
    def _shift(self) -> np.ndarray:
        return np.zeros(self.dim) if self.offset is None else np.asarray(self.offset, dtype=float)

    @property
    def support_halfwidth(self) -> float:
        return self.radius + float(np.max(np.abs(self._shift)))

    def support_bounds(self, center) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(center, dtype=float) + self._shift
        return c - self.radius, c + self.radius

    @property
    def is_separable(self) -> bool:
        return self.kind in ("tensor_bump", "zero")

    # -- evaluation
    def profile(self, t, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """1D factor f and f' along ``axis`` for separable kinds (amplitude excluded)."""
        if not self.is_separable:
            raise ValueError(f"{self.kind} is not a tensor product")
        if self.kind == "zero":
            z = np.zeros_like(np.asarray(t, dtype=float))
            return z, z
        u = (np.asarray(t, dtype=float) - self._shift[axis]) / self.radius
        b, db = bump_derivatives(u, 1)
        return b, db / self.radius

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float) - self._shift
        if self.kind == "zero":
            return np.zeros(x.shape[:-1])
        if self.kind == "tensor_bump":
            return self.amplitude * np.prod(bump(x / self.radius), axis=-1)
        if self.kind == "radial_bump":
            return self.amplitude * bump(np.linalg.norm(x, axis=-1) / self.radius)
        lap, _, phi, _ = self._phi_parts(x)
        return lap / phi

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float) - self._shift
        if self.kind == "zero":
            return np.zeros(x.shape)
        if self.kind == "tensor_bump":
            b, db = bump_derivatives(x / self.radius, 1)
            out = np.empty(x.shape)
            for k in range(self.dim):
                others = np.prod(np.delete(b, k, axis=-1), axis=-1)
                out[..., k] = self.amplitude * db[..., k] / self.radius * others
            return out
        if self.kind == "radial_bump":
            rho = np.linalg.norm(x, axis=-1)
            _, db = bump_derivatives(rho / self.radius, 1)
            safe = np.where(rho > 0, rho, 1.0)
            scale = np.where(rho > 0, self.amplitude * db / (self.radius * safe), 0.0)
            return scale[..., None] * x
        lap, grad_lap, phi, grad_phi = self._phi_parts(x)
        return grad_lap / phi[..., None] - (lap / phi**2)[..., None] * grad_phi

    def phi(self, x) -> np.ndarray:
        """Generator of the ``laplacian_phi`` potential: q = (Laplacian phi) / phi."""
        if self.kind != "laplacian_phi":
            raise ValueError("phi is only defined for laplacian_phi potentials")
        return self._phi_parts(np.asarray(x, dtype=float) - self._shift)[2]

    def _phi_parts(self, x):
        r = self.radius
        w0, w1, w2, w3 = bump_derivatives(x / r, 3)
        w1, w2, w3 = w1 / r, w2 / r**2, w3 / r**3
        d = self.dim
        eps = self.epsilon

        def prod_except(skip):
            out = np.ones(x.shape[:-1])
            for k in range(d):
                if k not in skip:
                    out = out * w0[..., k]
            return out

        phi = 1.0 + eps * prod_except(())
        lap = eps * sum(w2[..., j] * prod_except((j,)) for j in range(d))
        grad_phi = np.stack([eps * w1[..., j] * prod_except((j,)) for j in range(d)], axis=-1)
        grad_lap = np.empty(x.shape)
        for l in range(d):
            acc = w3[..., l] * prod_except((l,))
            for j in range(d):
                if j != l:
                    acc = acc + w2[..., j] * w1[..., l] * prod_except((j, l))
            grad_lap[..., l] = eps * acc
        return lap, grad_lap, phi, grad_phi

    # -- derived quantities
    @cached_property
    def sup_norm(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "tensor_bump":
            return abs(self.amplitude) * np.exp(-self.dim)
        if self.kind == "radial_bump":
            return abs(self.amplitude) * np.exp(-1.0)
        # no closed form: maximise |q| on a fine grid, then polish locally
        pts = {1: 4001, 2: 401, 3: 81}[self.dim]
        t = np.linspace(-self.radius, self.radius, pts)
        x = np.stack(np.meshgrid(*([t] * self.dim), indexing="ij"), axis=-1).reshape(-1, self.dim)
        vals = np.abs(self(x + self._shift))
        best = x[np.argmax(vals)]
        step = t[1] - t[0]
        fine = np.linspace(-step, step, 41)
        y = best + np.stack(np.meshgrid(*([fine] * self.dim), indexing="ij"), axis=-1).reshape(-1, self.dim)
        return float(max(vals.max(), np.abs(self(y + self._shift)).max()))

    def shifted(self, delta) -> SingleSitePotential:
        delta = np.broadcast_to(np.asarray(delta, dtype=float), (self.dim,))
        return replace(self, offset=tuple(float(v) for v in self._shift + delta))

    def recipe(self) -> dict:
        out = {"kind": self.kind, "amplitude": self.amplitude, "radius": self.radius, "dim": self.dim}
        if self.kind == "laplacian_phi":
            out["epsilon"] = self.epsilon
        if self.offset is not None:
            out["offset"] = list(self.offset)
        return out

    @classmethod
    def from_recipe(cls, recipe: dict) -> SingleSitePotential:
        rec = dict(recipe)
        if "offset" in rec and rec["offset"] is not None:
            rec["offset"] = tuple(rec["offset"])
        return cls(**rec)


def make_tensor_bump(r: float = 0.2, c0: float = 1.0, d: int = 2) -> SingleSitePotential:
    if c0 == 0:
        raise ValueError("amplitude must be nonzero")
    return SingleSitePotential("tensor_bump", float(c0), float(r), int(d))


def make_radial_bump(r: float = 0.2, c0: float = 1.0, d: int = 2) -> SingleSitePotential:
    if c0 == 0:
        raise ValueError("amplitude must be nonzero")
    return SingleSitePotential("radial_bump", float(c0), float(r), int(d))


def make_laplacian_phi(r: float = 0.2, eps: float = 0.5, d: int = 2) -> SingleSitePotential:
    """q = (Laplacian phi)/phi with phi = 1 + eps * prod_j b(x_j / r).

    phi is identically 1 near the cell boundary, so the single-site ground
    energy vanishes for every displacement.  Use ``q.phi`` to evaluate phi.
    """
    return SingleSitePotential("laplacian_phi", 1.0, float(r), int(d), epsilon=float(eps))


def zero_potential(d: int = 2, r: float = 0.2) -> SingleSitePotential:
    return SingleSitePotential("zero", 0.0, float(r), int(d))


def verify_symmetry(q: SingleSitePotential, samples: int = 1000, seed: int = 0) -> float:
    """Largest |q(x) - q(flip_k x)| over random x in the unit cell and all axes k."""
    if samples < 1:
        raise ValueError("samples must be positive")
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, size=(samples, q.dim))
    base = q(x)
    worst = 0.0
    for k in range(q.dim):
        y = x.copy()
        y[:, k] = -y[:, k]
        worst = max(worst, float(np.max(np.abs(base - q(y)))))
    return worst
