"""Displacement fields, their sampling distributions and the corner geometry."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np

DIST_KINDS = ("uniform_cube", "corner_bernoulli", "near_corner", "near_minimizer", "point_mass")


def corners(d: int, d_max: float) -> np.ndarray:
    """All 2^d corners of [-d_max, d_max]^d in lexicographic order."""
    return np.array(list(itertools.product((-d_max, d_max), repeat=d)), dtype=float)


def closest_corner(a, d_max: float) -> np.ndarray:
    """Nearest corner in the Euclidean norm; ties go to the lexicographically smallest.

    Works row-wise on arrays of shape (..., d).  The nearest corner agrees with
    sign(a) coordinate-wise, and a tie occurs exactly where a coordinate is 0,
    in which case -d_max is the smaller choice.
    """
    a = np.asarray(a, dtype=float)
    return np.where(a > 0, d_max, -d_max)


def corner_distance(a, d_max: float) -> np.ndarray | float:
    a = np.asarray(a, dtype=float)
    dist = np.linalg.norm(a - closest_corner(a, d_max), axis=-1)
    return float(dist) if dist.ndim == 0 else dist


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Displacements on the sites {-L..L}^d; ``values`` has shape (2L+1,)*d + (d,)."""

    L: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if self.L < 0:
            raise ValueError("L must be nonnegative")
        if v.ndim < 2 or v.shape[:-1] != (2 * self.L + 1,) * v.shape[-1]:
            raise ValueError(f"values shape {v.shape} inconsistent with L={self.L}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def flat(self) -> np.ndarray:
        """Displacements in C order of the sites, shape ((2L+1)^d, d)."""
        return self.values.reshape(-1, self.dim)

    def sites(self) -> np.ndarray:
        r = np.arange(-self.L, self.L + 1)
        grids = np.meshgrid(*([r] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def __getitem__(self, site) -> np.ndarray:
        idx = tuple(int(i) + self.L for i in site)
        return self.values[idx]

    def check_range(self, d_max: float, slack: float = 1e-12) -> None:
        if np.any(np.abs(self.values) > d_max + slack):
            raise ValueError("displacement outside [-d_max, d_max]^d")

    def equals(self, other: DisplacementField) -> bool:
        return self.L == other.L and np.array_equal(self.values, other.values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.dim
        w.writerow([f"i{k + 1}" for k in range(d)] + [f"w{k + 1}" for k in range(d)])
        for site, disp in zip(self.sites(), self.flat):
            w.writerow([int(s) for s in site] + [repr(float(x)) for x in disp])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> DisplacementField:
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        d = len(header) // 2
        sites = np.array([[int(x) for x in r[:d]] for r in body])
        disp = np.array([[float(x) for x in r[d:]] for r in body])
        L = int(sites.max()) if len(sites) else 0
        values = np.zeros((2 * L + 1,) * d + (d,))
        values[tuple((sites + L).T)] = disp
        return cls(L, values)


def minimizer_config(L: int, d: int, d_max: float) -> DisplacementField:
    """Alternating-corner field: site i carries ((-1)^{i_1} d_max, ..., (-1)^{i_d} d_max)."""
    r = np.arange(-L, L + 1)
    grids = np.meshgrid(*([r] * d), indexing="ij")
    values = np.stack([np.where(g % 2 == 0, d_max, -d_max) for g in grids], axis=-1)
    return DisplacementField(L, values.astype(float))


def corner_projection(fld: DisplacementField, d_max: float) -> DisplacementField:
    return DisplacementField(fld.L, closest_corner(fld.values, d_max))


def is_corner_valued(fld: DisplacementField, d_max: float, tol: float = 1e-12) -> bool:
    return bool(np.all(np.abs(np.abs(fld.values) - d_max) <= tol))


@dataclass(frozen=True)
class DistributionSpec:
    """Single-site law.

    ``uniform_cube``: uniform on [-d_max, d_max]^d.
    ``corner_bernoulli``: uniform on the 2^d corners.
    ``near_corner``: uniform corner, then uniform offset of size ``width``
    per coordinate towards the cell centre.
    ``near_minimizer``: the alternating-corner pattern, each coordinate
    pulled inwards by an independent uniform amount in [0, ``width``].
    Sites are independent but not identically distributed.
    ``point_mass``: fixed displacement ``value``; the string "minimizer"
    gives the alternating-corner pattern instead.
    """

    kind: str = "uniform_cube"
    width: float = 0.0
    value: tuple[float, ...] | str | None = None

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.kind in ("near_corner", "near_minimizer") and not self.width > 0:
            raise ValueError(f"{self.kind} needs a positive width")
        if self.kind == "point_mass" and self.value is None:
            raise ValueError("point_mass needs a value")

    def validate(self, d: int, d_max: float) -> None:
        if self.kind in ("near_corner", "near_minimizer") and self.width > 2 * d_max:
            raise ValueError(f"{self.kind} width exceeds the displacement range")
        if self.kind == "point_mass" and self.value != "minimizer":
            v = np.asarray(self.value, dtype=float)
            if v.shape != (d,) or np.any(np.abs(v) > d_max + 1e-12):
                raise ValueError("point_mass value out of range")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("near_corner", "near_minimizer"):
            out["width"] = self.width
        if self.kind == "point_mass":
            out["value"] = self.value if isinstance(self.value, str) else list(self.value)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> DistributionSpec:
        data = dict(data)
        if isinstance(data.get("value"), list):
            data["value"] = tuple(float(v) for v in data["value"])
        return cls(**data)


def _zigzag(i: np.ndarray) -> np.ndarray:
    return np.where(i >= 0, 2 * i, -2 * i - 1)


def site_uniforms(seed: int, trial: int, sites: np.ndarray, count: int) -> np.ndarray:
    """Counter-based uniforms in [0, 1): one stream per (seed, trial, site).

    Each site's numbers depend only on its own index, so growing the box
    keeps the draws at shared sites.
    """
    sites = np.atleast_2d(sites)
    out = np.empty((sites.shape[0], count))
    for j, s in enumerate(sites):
        key = [int(trial)] + [int(v) for v in _zigzag(s)]
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
        words = ss.generate_state(count, dtype=np.uint64)
        out[j] = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return out


def sample_config(
    dist: DistributionSpec, L: int, seed: int, d: int, d_max: float, trial: int = 0
) -> DisplacementField:
    dist.validate(d, d_max)
    shape = (2 * L + 1,) * d + (d,)
    if dist.kind == "point_mass":
        if dist.value == "minimizer":
            return minimizer_config(L, d, d_max)
        return DisplacementField(L, np.broadcast_to(np.asarray(dist.value, float), shape).copy())
    sites = DisplacementField(L, np.zeros(shape)).sites()
    u = site_uniforms(seed, trial, sites, 2 * d)
    if dist.kind == "uniform_cube":
        vals = d_max * (2.0 * u[:, :d] - 1.0)
    elif dist.kind == "near_minimizer":
        base = minimizer_config(L, d, d_max).flat
        vals = base - np.sign(base) * dist.width * u[:, d:]
    else:
        signs = np.where(u[:, :d] < 0.5, -1.0, 1.0)
        vals = signs * d_max
        if dist.kind == "near_corner":
            vals = vals - signs * dist.width * u[:, d:]
    return DisplacementField(L, vals.reshape(shape))
