"""Physico-chemical parameters and mass-transfer coefficients.

All quantities are SI (m, s, kg). The overall coefficient combines a
hydrodynamic part ``k_d`` (curved or flat/Levich branch), an interfacial
part ``k_m`` (curvature dependent) and the boundary-layer bound ratio
``sigma``:

    K = 1 / (sigma * (1/k_d + sigma/k_m)),   sigma = 1 + D / (k_d R)

The scalar formulas live in small numba functions so the level-set
kernels and the public Python API share a single implementation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

GRAVITY = 9.81

# index layout of DrugParams.as_array(), consumed by the numba kernels
RHO_S, C_S0, C_SF, K_R, K_RB, K_M_INF, DIFF, RHO_F, ETA_F, NU_F, ALPHA, D_T, GRAV = range(13)


@dataclass(frozen=True)
class DrugParams:
    """Constants for one drug / dissolution-medium pairing."""

    rho_s: float
    C_s0: float
    C_sf: float
    k_r: float
    k_rb: float
    k_m_inf: float
    D: float
    rho_f: float
    eta_f: float
    nu_f: float
    alpha: float
    d_T: float
    g: float = GRAVITY

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"DrugParams.{f.name} must be a finite positive number, got {value!r}")
        if self.C_s0 < self.C_sf:
            raise ValueError(f"C_s0 ({self.C_s0}) must be >= C_sf ({self.C_sf})")

    def with_alpha(self, alpha: float) -> DrugParams:
        return replace(self, alpha=alpha)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    def to_text(self) -> str:
        return "".join(f"{name} = {float(value)!r}\n" for name, value in asdict(self).items())


PRESETS: dict[str, DrugParams] = {
    "theophylline-25": DrugParams(
        rho_s=1490.0, C_s0=11.6, C_sf=6.1, k_r=6e-3, k_rb=6.6e-3, k_m_inf=3.7e-3,
        D=6.2e-10, rho_f=1000.0, eta_f=1e-3, nu_f=1e-6, alpha=1e-15, d_T=1e-9,
    ),
    "theophylline-37": DrugParams(
        rho_s=1490.0, C_s0=12.495, C_sf=6.569, k_r=6e-3, k_rb=5.7e-3, k_m_inf=2e-3,
        D=8.2e-10, rho_f=993.0, eta_f=6.91e-4, nu_f=6.96e-7, alpha=1e-15, d_T=2.6e-10,
    ),
    "griseofulvin-37": DrugParams(
        rho_s=1495.0, C_s0=0.494, C_sf=0.025, k_r=8.8e-3, k_rb=8.36e-3, k_m_inf=0.126,
        D=7.057e-10, rho_f=993.0, eta_f=6.91e-4, nu_f=6.96e-7, alpha=1e-15, d_T=3.10e-10,
    ),
    "nimesulide-37": DrugParams(
        rho_s=1476.0, C_s0=4.108, C_sf=0.028, k_r=1.3e-2, k_rb=1.235e-2, k_m_inf=1.8e-7,
        D=7.388e-10, rho_f=993.0, eta_f=6.91e-4, nu_f=6.96e-7, alpha=1e-15, d_T=2.82e-10,
    ),
}


def get_preset(name: str) -> DrugParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown drug preset {name!r}; known: {', '.join(PRESETS)}") from None


def parse_params(text: str, source: str = "<string>") -> DrugParams:
    """Parse ``name = value`` lines (SI units, ``#`` comments) into DrugParams."""
    known = {f.name for f in fields(DrugParams)}
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'name = value', got {raw.strip()!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        if name not in known:
            raise ValueError(f"{source}:{lineno}: unknown parameter {name!r}")
        if name in values:
            raise ValueError(f"{source}:{lineno}: duplicate parameter {name!r}")
        try:
            values[name] = float(value)
        except ValueError:
            raise ValueError(f"{source}:{lineno}: {name} is not a number: {value!r}") from None
    missing = sorted(known - values.keys() - {"g"})
    if missing:
        raise ValueError(f"{source}: missing parameters: {', '.join(missing)}")
    return DrugParams(**values)


def load_params(path: str | Path) -> DrugParams:
    path = Path(path)
    return parse_params(path.read_text(), source=str(path))


# ---------------------------------------------------------------------------
# scalar kernels (numba); R is a curvature radius, R = inf means flat/concave


@njit(cache=True, nogil=True, error_model="numpy")
def _solubility(t, C_s0, C_sf, k_r):
    return C_sf + (C_s0 - C_sf) * math.exp(-k_r * t)


@njit(cache=True, nogil=True, error_model="numpy")
def _delta_u(R_eq, p):
    return (p[RHO_S] - p[RHO_F]) * p[GRAV] * (2.0 * R_eq) ** 2 / (18.0 * p[ETA_F])


@njit(cache=True, nogil=True, error_model="numpy")
def _k_d_curved(R, dU, p):
    D = p[DIFF]
    nu = p[NU_F]
    return D / (2.0 * R) * (2.0 + 0.6 * math.sqrt(2.0 * R * dU / nu) * (nu / D) ** (1.0 / 3.0))


@njit(cache=True, nogil=True, error_model="numpy")
def _k_d_coef(dU, p):
    """R-independent factor c of the curved law k_d = D/(2R) * (2 + c sqrt(R))."""
    nu = p[NU_F]
    return 0.6 * math.sqrt(2.0 * dU / nu) * (nu / p[DIFF]) ** (1.0 / 3.0)


@njit(cache=True, nogil=True, error_model="numpy")
def _k_d_flat(R_eq, dU, p):
    return 0.621 * p[DIFF] ** (2.0 / 3.0) * p[NU_F] ** (-1.0 / 6.0) * math.sqrt(dU / R_eq)


@njit(cache=True, nogil=True, error_model="numpy")
def _r_plane(R_eq, p):
    D = p[DIFF]
    pre = D ** (2.0 / 3.0) * p[NU_F] ** (-1.0 / 6.0)
    buoy = p[GRAV] * (p[RHO_S] - p[RHO_F]) / p[ETA_F]
    g1 = 0.1 * pre * math.sqrt(4.0 * buoy) * R_eq
    g2 = 0.207 * pre * math.sqrt(2.0 * buoy) * math.sqrt(R_eq)
    return 0.5 * g1 * (g1 + math.sqrt(g1 * g1 + 4.0 * D * g2)) / (g2 * g2) + D / g2


@njit(cache=True, nogil=True, error_model="numpy")
def _k_m(R, p):
    if not math.isfinite(R):
        return p[K_M_INF]
    return p[K_M_INF] * (p[ALPHA] / (R * R * R) + R / (R + 2.0 * p[D_T]))


@njit(cache=True, nogil=True, error_model="numpy")
def _transfer(R, p, R_plane, c_d, k_flat):
    """Return (k_d, k_m, sigma, K, flat) for curvature radius R.

    ``R_plane``, ``c_d`` (see _k_d_coef) and ``k_flat`` depend only on
    R_eq and are passed in so grid kernels can hoist them out of the node
    loop.
    """
    if not math.isfinite(R) or R > R_plane:
        # flat limit (concave, flat, or beyond R_plane): delta/R -> 0
        k_d = k_flat
        k_m = _k_m(R, p)
        sigma = 1.0
        K = 1.0 / (1.0 / k_d + 1.0 / k_m)
        return k_d, k_m, sigma, K, True
    u = 1.0 / R
    D = p[DIFF]
    k_d = 0.5 * D * u * (2.0 + c_d * math.sqrt(R))
    k_m = p[K_M_INF] * (p[ALPHA] * u * u * u + 1.0 / (1.0 + 2.0 * p[D_T] * u))
    w = 1.0 / k_d
    sigma = 1.0 + D * u * w
    K = 1.0 / (sigma * (w + sigma / k_m))
    return k_d, k_m, sigma, K, False


# ---------------------------------------------------------------------------
# public API


class TransferEval(NamedTuple):
    R: float
    R_eq: float
    k_d: float
    k_m: float
    sigma: float
    K: float
    used_flat_branch: bool


def solubility(t: float, drug: DrugParams) -> float:
    """Time-decaying interfacial solubility C_s(t)."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    return float(_solubility(float(t), drug.C_s0, drug.C_sf, drug.k_r))


def _check_sinking(drug: DrugParams) -> None:
    if drug.rho_s <= drug.rho_f:
        raise ValueError(
            f"solid density {drug.rho_s} must exceed fluid density {drug.rho_f} (sinking-particle model)"
        )


def delta_u(R_eq: float, drug: DrugParams) -> float:
    """Stokes settling velocity of the equivalent particle."""
    _check_sinking(drug)
    if R_eq < 0:
        raise ValueError(f"R_eq must be non-negative, got {R_eq}")
    return float(_delta_u(float(R_eq), drug.as_array()))


def r_equivalent(area: float) -> float:
    """Radius of the circle with the given area."""
    if area < 0:
        raise ValueError(f"area must be non-negative, got {area}")
    return math.sqrt(area / math.pi)


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def k_d_curved(R: float, R_eq: float, drug: DrugParams) -> float:
    _positive("R", R)
    _positive("R_eq", R_eq)
    p = drug.as_array()
    return float(_k_d_curved(float(R), delta_u(R_eq, drug), p))


def k_d_flat(R_eq: float, drug: DrugParams) -> float:
    _positive("R_eq", R_eq)
    p = drug.as_array()
    return float(_k_d_flat(float(R_eq), delta_u(R_eq, drug), p))


def r_plane(R_eq: float, drug: DrugParams) -> float:
    """Curvature radius where the curved k_d law meets the Levich law."""
    _positive("R_eq", R_eq)
    _check_sinking(drug)
    return float(_r_plane(float(R_eq), drug.as_array()))


def k_m_curved(R: float, drug: DrugParams) -> float:
    _positive("R", R)
    return float(_k_m(float(R), drug.as_array()))


def overall_k(R: float, R_eq: float, drug: DrugParams) -> TransferEval:
    """Overall coefficient at a boundary point.

    ``R`` is the local curvature radius; pass ``math.inf`` for flat or
    concave points. The curved k_d branch is used while R <= R_plane(R_eq).
    """
    _positive("R", R)
    _positive("R_eq", R_eq)
    _check_sinking(drug)
    p = drug.as_array()
    R = float(R)
    R_eq = float(R_eq)
    dU = _delta_u(R_eq, p)
    k_d, k_m, sigma, K, flat = _transfer(R, p, _r_plane(R_eq, p), _k_d_coef(dU, p), _k_d_flat(R_eq, dU, p))
    return TransferEval(R, R_eq, float(k_d), float(k_m), float(sigma), float(K), bool(flat))


def clamp_radius(R: float, R_eq: float, drug: DrugParams, R_min: float = 0.0) -> float:
    """Radius actually used for K: ``R`` clamped to [R_min, R_plane(R_eq)].

    ``math.inf`` (flat or concave) maps to R_plane, as in the engine.
    """
    if math.isnan(R) or R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    return min(max(float(R), R_min), r_plane(R_eq, drug))
