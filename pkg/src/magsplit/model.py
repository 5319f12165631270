"""Configuration types for the magnetic double-well problem.

Natural units are used throughout (hbar = c = 2 m_e = q_e = 1).  The
separation vector is always taken along the first coordinate axis.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a config document cannot be parsed into a ModelConfig."""


@dataclass(frozen=True)
class WellSpec:
    """Piecewise-constant disc well: ``v0(r) = depth`` for ``r < radius``."""

    depth: float
    radius: float
    shape: str = "disc"

    def potential(self, r):
        import numpy as np

        r = np.asarray(r, dtype=float)
        return np.where(r < self.radius, self.depth, 0.0)

    @property
    def v_min(self) -> float:
        return self.depth


@dataclass(frozen=True)
class GridSpec:
    spacing: float | None = None  # None -> magnetic_length / 8
    margin_lengths: float = 8.0
    boundary: str = "dirichlet"


@dataclass(frozen=True)
class ToleranceSpec:
    quadrature_rel: float = 1e-10
    eigen_rel: float = 1e-8
    match_rel: float = 1e-10
    max_iterations: int = 200


@dataclass(frozen=True)
class ModelConfig:
    lam: float
    well: WellSpec
    separation: float
    b: float | None = None  # None -> b = lam
    grid: GridSpec = field(default_factory=GridSpec)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)

    @property
    def field_strength(self) -> float:
        return self.lam if self.b is None else self.b

    @property
    def magnetic_length(self) -> float:
        return math.sqrt(2.0 / self.field_strength)

    def grid_spacing(self) -> float:
        """Largest spacing <= the requested one that divides the separation."""
        target = self.grid.spacing
        if target is None:
            target = self.magnetic_length / 8.0
        n = max(1, math.ceil(self.separation / target - 1e-12))
        return self.separation / n

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def with_well(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, well=dataclasses.replace(self.well, **changes))

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "b": self.b,
            "separation": self.separation,
            "well": {"shape": self.well.shape, "depth": self.well.depth,
                     "radius": self.well.radius},
            "grid": {"spacing": self.grid.spacing,
                     "margin_lengths": self.grid.margin_lengths,
                     "boundary": self.grid.boundary},
            "tolerances": dataclasses.asdict(self.tolerances),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        _check_keys(data, {"lambda", "b", "separation", "well", "grid", "tolerances"},
                    "config", required={"lambda", "separation", "well"})
        well = data["well"]
        _check_keys(well, {"shape", "depth", "radius"}, "well", required={"depth", "radius"})
        grid = data.get("grid") or {}
        _check_keys(grid, {"spacing", "margin_lengths", "boundary"}, "grid")
        tol = data.get("tolerances") or {}
        _check_keys(tol, {f.name for f in dataclasses.fields(ToleranceSpec)}, "tolerances")
        try:
            return cls(
                lam=_num(data["lambda"]),
                b=None if data.get("b") is None else _num(data["b"]),
                separation=_num(data["separation"]),
                well=WellSpec(depth=_num(well["depth"]), radius=_num(well["radius"]),
                              shape=well.get("shape", "disc")),
                grid=GridSpec(
                    spacing=None if grid.get("spacing") is None else _num(grid["spacing"]),
                    margin_lengths=_num(grid.get("margin_lengths", 8.0)),
                    boundary=grid.get("boundary", "dirichlet"),
                ),
                tolerances=ToleranceSpec(**{k: (int(v) if k == "max_iterations" else _num(v))
                                            for k, v in tol.items()}),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_json(Path(path).read_text())


def _num(x) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"expected a number, got {x!r}")
    return float(x)


def _check_keys(d, allowed, where, required=()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]
    strict_spacing: bool
    strict_threshold: float

    @property
    def valid(self) -> bool:
        return not self.violations


def strict_spacing_threshold(well: WellSpec) -> float:
    """Separation above which the splitting bounds are claimed: 4(sqrt|v_min| + a)."""
    return 4.0 * (math.sqrt(abs(well.depth)) + well.radius)


def validate(config: ModelConfig) -> ValidationReport:
    """Check every config invariant; never raises."""
    problems = []
    w = config.well
    if w.shape != "disc":
        problems.append(f"unsupported well shape {w.shape!r}")
    if not w.depth <= 0:
        problems.append("well depth must be <= 0")
    if not w.radius > 0:
        problems.append("well radius must be > 0")
    if not config.lam > 0:
        problems.append("lambda must be > 0")
    if not config.field_strength > 0:
        problems.append("b must be > 0")
    if not config.separation > 0:
        problems.append("separation must be > 0")
    elif w.radius > 0 and not config.separation > 2 * w.radius:
        problems.append("wells overlap: separation must exceed 2*radius")
    g = config.grid
    if g.spacing is not None and not g.spacing > 0:
        problems.append("grid spacing must be > 0")
    if config.field_strength > 0 and g.spacing is not None and g.spacing > config.magnetic_length / 8:
        problems.append("grid spacing must be <= magnetic_length/8")
    if not g.margin_lengths >= 4:
        problems.append("margin_lengths must be >= 4")
    if g.boundary != "dirichlet":
        problems.append(f"unsupported boundary {g.boundary!r}")
    t = config.tolerances
    for name in ("quadrature_rel", "eigen_rel", "match_rel", "max_iterations"):
        if not getattr(t, name) > 0:
            problems.append(f"tolerance {name} must be > 0")
    threshold = strict_spacing_threshold(w) if w.depth <= 0 and w.radius > 0 else math.inf
    return ValidationReport(tuple(problems), config.separation > threshold, threshold)


def reference_config(lam: float = 10.0, **overrides) -> ModelConfig:
    """The reference configuration: depth -2, radius 0.5, separation 2, b = lam."""
    base = ModelConfig(lam=lam, well=WellSpec(depth=-2.0, radius=0.5), separation=2.0)
    return dataclasses.replace(base, **overrides) if overrides else base
