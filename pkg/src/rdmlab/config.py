"""Experiment configuration: strict TOML parsing, per-kind defaults, validation.

A config file has top-level ``kind`` and ``seed`` keys and the optional
sections ``[potential]``, ``[distribution]``, ``[grid]`` and ``[params]``.
Missing sections are filled from the defaults of the experiment kind;
unknown keys anywhere are rejected.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Optional, Union

import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .configurations import DistributionSpec
from .potentials import SingleSitePotential

KINDS = ("landscape", "dichotomy", "formcmp", "fieldpos", "lifshitz", "wegner", "ids", "lyapunov",
         "vanhove", "decay")


class ConfigError(ValueError):
    """Raised for any invalid configuration; the CLI maps it to exit code 2."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class PotentialConfig(_Strict):
    kind: Literal["tensor_bump", "radial_bump", "laplacian_phi", "zero"] = "tensor_bump"
    amplitude: float = 1.0
    radius: float = 0.2
    dim: int = 2
    epsilon: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        self.build()
        if self.kind in ("tensor_bump", "radial_bump") and self.amplitude == 0:
            raise ValueError("bump amplitude must be nonzero")
        return self

    def build(self) -> SingleSitePotential:
        amplitude = 1.0 if self.kind == "laplacian_phi" else (0.0 if self.kind == "zero" else self.amplitude)
        return SingleSitePotential(self.kind, amplitude, self.radius, self.dim, epsilon=self.epsilon)


class DistributionConfig(_Strict):
    kind: Literal["uniform_cube", "corner_bernoulli", "near_corner", "near_minimizer", "point_mass"] = "uniform_cube"
    width: float = 0.0
    value: Optional[Union[list[float], Literal["minimizer"]]] = None

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> DistributionSpec:
        value = tuple(self.value) if isinstance(self.value, list) else self.value
        return DistributionSpec(self.kind, self.width, value)


class GridConfig(_Strict):
    n: int = Field(default=10, ge=1)
    mode: Literal["cell", "point"] = "cell"


class LandscapeParams(_Strict):
    points: int = Field(default=9, ge=2)
    off_axis: bool = True
    with_fd: bool = False


class DichotomyParams(_Strict):
    points: int = Field(default=9, ge=2)


class FormcmpParams(_Strict):
    L_list: list[int] = [1, 2, 3]
    trials: int = Field(default=100, ge=1)
    single_site_points: int = Field(default=9, ge=2)


class FieldposParams(_Strict):
    L: int = Field(default=3, ge=0)
    trials: int = Field(default=400, ge=1)
    delta2: Optional[float] = None
    delta2_factor: float = Field(default=1.0, gt=0)
    constants_points: int = Field(default=9, ge=2)


class LifshitzParams(_Strict):
    L_list: list[int] = [1, 2, 3, 4, 5]
    trials: int = Field(default=500, ge=1)
    C1: Optional[float] = None
    C1_depth_factor: float = Field(default=3.3, gt=0)


class WegnerParams(_Strict):
    L_list: list[int] = [1, 2, 3]
    trials: int = Field(default=300, ge=2)
    eps_factors: list[float] = [0.02, 0.01, 0.005]
    energy_scale: Optional[float] = None
    center_fraction: float = Field(default=0.5, ge=0, le=1)


class IdsParams(_Strict):
    L: int = Field(default=3, ge=0)
    trials: int = Field(default=50, ge=2)
    e_min: float = Field(default=0.01, gt=0)
    e_max: float = Field(default=10.0, gt=0)
    points: int = Field(default=25, ge=2)
    closures: list[Literal["neumann", "dirichlet"]] = ["neumann", "dirichlet"]


class LyapunovParams(_Strict):
    n_cells: int = Field(default=100_000, ge=20)
    offsets: list[float] = [-4e-3, -2e-3, -1e-3, 0.0, 1e-3, 2e-3, 4e-3]
    batches: int = Field(default=20, ge=2)
    steps: int = Field(default=256, ge=1)


class VanhoveParams(_Strict):
    L: int = Field(default=500, ge=1)
    trials: int = Field(default=4, ge=2)
    e_min: float = Field(default=1e-3, gt=0)
    e_max: float = Field(default=3.1622776601683795, gt=0)
    points: int = Field(default=25, ge=5)
    min_count: float = Field(default=20.0, ge=0)


class DecayParams(_Strict):
    L: int = Field(default=3, ge=0)
    trials: int = Field(default=4, ge=1)


PARAMS = {
    "landscape": LandscapeParams, "dichotomy": DichotomyParams, "formcmp": FormcmpParams,
    "fieldpos": FieldposParams, "lifshitz": LifshitzParams, "wegner": WegnerParams, "ids": IdsParams,
    "lyapunov": LyapunovParams, "vanhove": VanhoveParams, "decay": DecayParams,
}

_FINITE_VOLUME_BUMP = {"kind": "tensor_bump", "amplitude": 100.0, "radius": 0.2, "dim": 2}
DEFAULTS: dict[str, dict] = {
    "landscape": {"potential": {"kind": "tensor_bump", "amplitude": 1.0, "radius": 0.2, "dim": 2},
                  "grid": {"n": 32}},
    "dichotomy": {"potential": {"kind": "laplacian_phi", "radius": 0.2, "dim": 2, "epsilon": 0.5},
                  "grid": {"n": 128}},
    "formcmp": {"potential": _FINITE_VOLUME_BUMP, "grid": {"n": 10}},
    "fieldpos": {"potential": _FINITE_VOLUME_BUMP, "grid": {"n": 10},
                 "distribution": {"kind": "near_minimizer", "width": 2.5e-4}},
    "lifshitz": {"potential": {"kind": "tensor_bump", "amplitude": 1.0, "radius": 0.2, "dim": 2},
                 "grid": {"n": 10}},
    "wegner": {"potential": _FINITE_VOLUME_BUMP, "grid": {"n": 10}},
    "ids": {"potential": _FINITE_VOLUME_BUMP, "grid": {"n": 10}},
    "lyapunov": {"potential": {"kind": "tensor_bump", "amplitude": 1.0, "radius": 0.2, "dim": 1},
                 "grid": {"n": 64}, "distribution": {"kind": "corner_bernoulli"}},
    "vanhove": {"potential": {"kind": "laplacian_phi", "radius": 0.2, "dim": 1, "epsilon": 0.5},
                "grid": {"n": 32}},
    "decay": {"potential": _FINITE_VOLUME_BUMP, "grid": {"n": 10}},
}

ParamsModel = Union[tuple(PARAMS.values())]


class ExperimentConfig(_Strict):
    """A fully resolved experiment description (every section present)."""

    kind: Literal[KINDS]
    seed: int = Field(default=0, ge=0)
    potential: PotentialConfig
    distribution: DistributionConfig
    grid: GridConfig
    params: ParamsModel

    @model_validator(mode="after")
    def _cross_checks(self):
        q = self.potential.build()
        if not isinstance(self.params, PARAMS[self.kind]):
            raise ValueError(f"params do not match kind {self.kind!r}")
        self.distribution.build().validate(q.dim, q.d_max)
        if self.kind not in ("lyapunov",):
            h = 1.0 / self.grid.n
            if h > q.radius / 2:
                raise ValueError(f"grid spacing 1/{self.grid.n} exceeds half the bump radius {q.radius}")
        if self.kind == "lyapunov" and q.dim != 1:
            raise ValueError("lyapunov runs need a one-dimensional potential")
        return self

    def to_dict(self) -> dict:
        return _drop_none(self.model_dump(mode="json"))

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_drop_none(v) for v in obj]
    return obj


def _format_errors(err: ValidationError, prefix: str = "") -> str:
    parts = []
    for e in err.errors():
        loc = prefix + ".".join(str(p) for p in e["loc"]) or "config"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def resolve_config(data: dict, seed: int | None = None) -> ExperimentConfig:
    """Fill per-kind defaults into a raw mapping and validate it."""
    data = dict(data)
    kind = data.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}; got {kind!r}")
    allowed = {"kind", "seed", "potential", "distribution", "grid", "params"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    merged = {"kind": kind, "seed": data.get("seed", 0) if seed is None else seed}
    for section in ("potential", "distribution", "grid"):
        raw = data.get(section)
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"[{section}] must be a table")
        merged[section] = dict(DEFAULTS[kind].get(section, {})) | dict(raw or {})
    params = data.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[params] must be a table")
    try:
        merged["params"] = PARAMS[kind](**params)
    except ValidationError as err:
        raise ConfigError(_format_errors(err, "params.")) from None
    try:
        return ExperimentConfig(**merged)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def parse_config_text(text: str, seed: int | None = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"malformed config: {err}") from None
    return resolve_config(data, seed)


def load_config(path: Path | str, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config_text(text, seed)


def default_config(kind: str, seed: int = 0) -> ExperimentConfig:
    return resolve_config({"kind": kind, "seed": seed})


def config_differences(old: dict, new: dict, prefix: str = "") -> list[str]:
    """Human-readable 'key: old -> new' lines between two config mappings."""
    out = []
    for key in sorted(set(old) | set(new)):
        a, b = old.get(key), new.get(key)
        name = f"{prefix}{key}"
        if isinstance(a, dict) and isinstance(b, dict):
            out.extend(config_differences(a, b, name + "."))
        elif a != b:
            out.append(f"{name}: {a!r} -> {b!r}")
    return out
