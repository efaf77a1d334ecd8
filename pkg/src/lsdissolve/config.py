"""Scenario description, its text format and grid planning.

A scenario file is a list of ``key = value`` lines followed by optional
``[particle]`` and ``[sampler]`` blocks::

    name = test1a-300
    drug = theophylline-25
    v_plus = 300
    t_end = 900 s
    dx = 1 um

    [particle]
    shape = circle
    R = 50 um

Dimensional values take an optional unit (``um``, ``mm``, ``m``, ``um2``,
``m2``, ``m3``, ``s``, ``min``, ``h``, ``deg``, ``rad``); a bare number is
read in SI. ``#`` starts a comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .geometry import PADDING_CELLS, Circle, Rectangle, Shape, Superellipse
from .levelset import Grid2D
from .physchem import DrugParams, get_preset, load_params
from .sampling import WeibullParams, sample_radii

UNITS = {
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "area": {"m2": 1.0, "mm2": 1e-6, "um2": 1e-12, "µm2": 1e-12},
    "volume": {"m3": 1.0},
    "time": {"s": 1.0, "min": 60.0, "h": 3600.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180},
}
_SI_UNIT = {"length": "m", "area": "m2", "volume": "m3", "time": "s", "angle": "rad"}


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass(frozen=True)
class ParticleSpec:
    shape: Shape
    multiplicity: int = 1

    def __post_init__(self):
        if self.multiplicity < 1:
            raise ValueError(f"multiplicity must be >= 1, got {self.multiplicity}")


@dataclass(frozen=True)
class SamplerSpec:
    """``count`` circles with Weibull radii (micrometres)."""

    count: int
    weibull: WeibullParams
    seed: int = 0
    shape: str = "circle"
    match_area: float | None = None  # rescale radii so the total area equals this [m2]

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"sampler count must be >= 1, got {self.count}")
        if self.shape != "circle":
            raise ValueError(f"sampler supports shape = circle only, got {self.shape!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.match_area is not None and not self.match_area > 0:
            raise ValueError("match_area must be positive")

    def radii(self) -> list[float]:
        """Sampled radii in metres, optionally rescaled to ``match_area``."""
        r = sample_radii(self.count, self.weibull, self.seed) * 1e-6
        if self.match_area is not None:
            r = r * math.sqrt(self.match_area / (math.pi * float((r**2).sum())))
        return [float(x) for x in r]

    def particles(self) -> list[ParticleSpec]:
        return [ParticleSpec(Circle(r)) for r in self.radii()]


@dataclass(frozen=True)
class GridSpec:
    dx: float | None = None
    n: int | None = None
    domain_factor: float = 2.5
    cells_across: int = 20
    per_particle: bool = False

    def __post_init__(self):
        if self.dx is not None and not self.dx > 0:
            raise ValueError("dx must be positive")
        if self.n is not None and self.n < 8:
            raise ValueError("n must be at least 8")
        if not self.domain_factor >= 1:
            raise ValueError("domain_factor must be >= 1")
        if self.cells_across < 4:
            raise ValueError("cells_across must be >= 4")


@dataclass(frozen=True)
class ScenarioConfig:
    t_end: float
    drug: str | None = None
    drug_file: str | None = None
    alpha: float | None = None
    v_plus: float | None = None
    v_ext: float | None = None
    particles: tuple[ParticleSpec, ...] = ()
    sampler: SamplerSpec | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    cfl: float = 0.9
    dt_max: float | None = None
    output_every: float | None = None
    snapshot_every: float | None = None
    name: str = "scenario"
    out: str | None = None

    def __post_init__(self):
        if (self.drug is None) == (self.drug_file is None):
            raise ValueError("exactly one of drug, drug_file is required")
        if (self.v_plus is None) == (self.v_ext is None):
            raise ValueError("exactly one of v_plus, v_ext is required")
        for name in ("v_plus", "v_ext", "alpha", "dt_max", "output_every", "snapshot_every"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must be in (0, 1], got {self.cfl}")
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        object.__setattr__(self, "particles", tuple(self.particles))

    @property
    def resolved_dt_max(self) -> float:
        return self.dt_max if self.dt_max is not None else self.t_end / 1e4

    @property
    def resolved_output_every(self) -> float:
        return self.output_every if self.output_every is not None else self.t_end / 200

    def drug_params(self) -> DrugParams:
        drug = get_preset(self.drug) if self.drug is not None else load_params(self.drug_file)
        return drug.with_alpha(self.alpha) if self.alpha is not None else drug

    def all_particles(self) -> list[ParticleSpec]:
        out = list(self.particles)
        if self.sampler is not None:
            out.extend(self.sampler.particles())
        return out

    def external_volume(self, initial_area: float) -> float:
        """V_ext [m3] per unit depth; ``initial_area`` is the total particle area."""
        return self.v_ext if self.v_ext is not None else self.v_plus * initial_area

    def with_overrides(self, **kw) -> ScenarioConfig:
        """Copy with top-level (``dx``, ``seed`` and config) fields replaced; None values are ignored."""
        kw = {k: v for k, v in kw.items() if v is not None}
        if "dx" in kw:
            kw["grid"] = replace(self.grid, dx=kw.pop("dx"), n=None)
        if "seed" in kw:
            seed = kw.pop("seed")
            if self.sampler is not None:
                kw["sampler"] = replace(self.sampler, seed=seed)
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# grid planning


def plan_grids(particles: list[ParticleSpec], spec: GridSpec) -> list[Grid2D]:
    """One grid per particle, centred on it.

    Shared mode gives every particle the same n and dx (dx from the
    narrowest particle); per-particle mode sizes dx from each particle.
    Either way the largest shape keeps at least PADDING_CELLS + 1 cells of
    padding.
    """
    if not particles:
        return []
    shapes = [p.shape for p in particles]
    extents = [s.extent() for s in shapes]
    widths = [s.width() for s in shapes]

    def size(extent: float, dx: float) -> int:
        n = math.ceil(spec.domain_factor * extent / dx - 1e-9)
        return max(n, math.ceil(extent / dx) + 2 * (PADDING_CELLS + 2), 8)

    if spec.per_particle:
        grids = []
        for s, ext, w in zip(shapes, extents, widths):
            dx = spec.dx if spec.dx is not None else w / spec.cells_across
            n = spec.n if spec.n is not None else size(ext, dx)
            grids.append(Grid2D.centered(n, dx, s.center))
        return grids
    dx = spec.dx if spec.dx is not None else min(widths) / spec.cells_across
    n = spec.n if spec.n is not None else size(max(extents), dx)
    return [Grid2D.centered(n, dx, s.center) for s in shapes]


# ---------------------------------------------------------------------------
# text format

_TOP = {
    "name": "str", "drug": "str", "drug_file": "str", "alpha": "float", "v_plus": "float",
    "v_ext": "volume", "t_end": "time", "cfl": "float", "dt_max": "time",
    "output_every": "time", "snapshot_every": "time", "out": "str",
    "dx": "length", "n": "int", "domain_factor": "float", "cells_across": "int",
    "per_particle_grids": "bool",
}
_PARTICLE = {
    "shape": "str", "R": "length", "a": "length", "b": "length", "exponent": "float",
    "w": "length", "h": "length", "center": "point", "rotation": "angle", "multiplicity": "int",
}
_SAMPLER = {
    "count": "int", "shape": "str", "lambda": "float", "k": "float", "x0": "float",
    "seed": "int", "match_area": "area",
}
_SHAPE_KEYS = {"circle": {"R"}, "superellipse": {"a", "b", "exponent"}, "rectangle": {"w", "h"}}


def _number(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {text!r}")
    return value


def _convert(kind: str, raw: str):
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return _number(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if kind == "point":
        parts = raw.split()
        scale = 1.0
        if len(parts) == 3:
            scale = _unit_scale("length", parts.pop())
        if len(parts) != 2:
            raise ValueError(f"expected 'x y [unit]', got {raw!r}")
        return (_number(parts[0]) * scale, _number(parts[1]) * scale)
    parts = raw.split()
    if len(parts) == 1:
        return _number(parts[0])
    if len(parts) == 2:
        return _number(parts[0]) * _unit_scale(kind, parts[1])
    raise ValueError(f"expected 'value [unit]', got {raw!r}")


def _unit_scale(kind: str, unit: str) -> float:
    try:
        return UNITS[kind][unit]
    except KeyError:
        raise ValueError(f"unknown {kind} unit {unit!r}; use one of {', '.join(UNITS[kind])}") from None


def _build_shape(values: dict, source: str, line: int) -> ParticleSpec:
    kind = values.get("shape")
    if kind not in _SHAPE_KEYS:
        raise ConfigError(f"particle shape must be one of {', '.join(_SHAPE_KEYS)}, got {kind!r}", source, line)
    needed = set(_SHAPE_KEYS[kind])
    if kind == "superellipse":
        needed.discard("exponent")
    missing = needed - values.keys()
    if missing:
        raise ConfigError(f"{kind} particle is missing {', '.join(sorted(missing))}", source, line)
    extra = values.keys() - _SHAPE_KEYS[kind] - {"shape", "center", "rotation", "multiplicity"}
    if extra:
        raise ConfigError(f"{kind} particle does not take {', '.join(sorted(extra))}", source, line)
    common = {"center": values.get("center", (0.0, 0.0)), "rotation": values.get("rotation", 0.0)}
    if kind == "circle":
        shape = Circle(values["R"], **common)
    elif kind == "superellipse":
        shape = Superellipse(values["a"], values["b"], values.get("exponent", 2.0), **common)
    else:
        shape = Rectangle(values["w"], values["h"], **common)
    return ParticleSpec(shape, values.get("multiplicity", 1))


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    top: dict = {}
    blocks: list[tuple[str, int, dict]] = []
    current = top
    table = _TOP
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line.strip("[] ").lower()
            if name == "particle":
                table = _PARTICLE
            elif name == "sampler":
                if any(b[0] == "sampler" for b in blocks):
                    raise ConfigError("only one [sampler] block is allowed", source, lineno)
                table = _SAMPLER
            else:
                raise ConfigError(f"unknown block [{name}]", source, lineno)
            current = {}
            blocks.append((name, lineno, current))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in table:
            raise ConfigError(f"unknown key {key!r}", source, lineno)
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", source, lineno)
        try:
            current[key] = _convert(table[key], value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", source, lineno) from None

    particles = []
    sampler = None
    for name, lineno, values in blocks:
        try:
            if name == "particle":
                particles.append(_build_shape(values, source, lineno))
            else:
                missing = {"count", "lambda", "k"} - values.keys()
                if missing:
                    raise ConfigError(f"sampler is missing {', '.join(sorted(missing))}", source, lineno)
                sampler = SamplerSpec(
                    count=values["count"],
                    weibull=WeibullParams(values["lambda"], values["k"], values.get("x0", 0.0)),
                    seed=values.get("seed", 0),
                    shape=values.get("shape", "circle"),
                    match_area=values.get("match_area"),
                )
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), source, lineno) from None

    if "t_end" not in top:
        raise ConfigError("missing required key 't_end'", source)
    grid_keys = {"dx": "dx", "n": "n", "domain_factor": "domain_factor",
                 "cells_across": "cells_across", "per_particle_grids": "per_particle"}
    try:
        grid = GridSpec(**{grid_keys[k]: top.pop(k) for k in list(top) if k in grid_keys})
        return ScenarioConfig(**top, particles=tuple(particles), sampler=sampler, grid=grid)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), source) from None


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def _fmt(value, kind: str) -> str:
    if kind in _SI_UNIT:
        return f"{float(value)!r} {_SI_UNIT[kind]}"
    if kind == "point":
        return f"{float(value[0])!r} {float(value[1])!r} m"
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


def serialize_config(cfg: ScenarioConfig) -> str:
    """Text form that ``parse_config`` reads back to an equal config (SI units)."""
    lines = []
    for f in fields(cfg):
        if f.name in ("particles", "sampler", "grid"):
            continue
        value = getattr(cfg, f.name)
        if value is not None:
            lines.append(f"{f.name} = {_fmt(value, _TOP[f.name])}")
    g = cfg.grid
    for key, attr in (("dx", "dx"), ("n", "n"), ("domain_factor", "domain_factor"),
                      ("cells_across", "cells_across"), ("per_particle_grids", "per_particle")):
        value = getattr(g, attr)
        if value is not None:
            lines.append(f"{key} = {_fmt(value, _TOP[key])}")
    for spec in cfg.particles:
        s = spec.shape
        lines += ["", "[particle]", f"shape = {s.kind}"]
        if isinstance(s, Circle):
            lines.append(f"R = {_fmt(s.radius, 'length')}")
        elif isinstance(s, Superellipse):
            lines += [f"a = {_fmt(s.a, 'length')}", f"b = {_fmt(s.b, 'length')}", f"exponent = {float(s.n)!r}"]
        else:
            lines += [f"w = {_fmt(s.w, 'length')}", f"h = {_fmt(s.h, 'length')}"]
        if s.center != (0.0, 0.0):
            lines.append(f"center = {_fmt(s.center, 'point')}")
        if s.rotation:
            lines.append(f"rotation = {_fmt(s.rotation, 'angle')}")
        if spec.multiplicity != 1:
            lines.append(f"multiplicity = {spec.multiplicity}")
    if cfg.sampler is not None:
        sm = cfg.sampler
        lines += [
            "", "[sampler]", f"count = {sm.count}", f"shape = {sm.shape}",
            f"lambda = {float(sm.weibull.lambda_)!r}", f"k = {float(sm.weibull.k)!r}",
            f"x0 = {float(sm.weibull.x0)!r}", f"seed = {sm.seed}",
        ]
        if sm.match_area is not None:
            lines.append(f"match_area = {_fmt(sm.match_area, 'area')}")
    return "\n".join(lines) + "\n"
