"""Reference solutions used to validate the level-set engine.

``solve_circle`` integrates the reduced single-circle system with a fixed
step SSP-RK3 scheme; ``recrystallization_closed_form`` evaluates the
analytical solution of the bulk recrystallization regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .physchem import DrugParams, clamp_radius, overall_k, solubility


class OracleStepError(RuntimeError):
    """Raised when the RK3 step is too large for a monotone radius."""


@dataclass
class CircleTrajectory:
    t: np.ndarray
    R: np.ndarray
    C_b: np.ndarray
    C_s: np.ndarray
    regime: list[str]
    t_star: float | None
    t_dissolved: float | None

    def radius_at(self, t: float | np.ndarray) -> np.ndarray:
        return np.interp(t, self.t, self.R)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("t,R,C_b,C_s,regime\n")
            for row in zip(self.t, self.R, self.C_b, self.C_s, self.regime):
                fh.write("{!r},{!r},{!r},{!r},{}\n".format(*(float(x) for x in row[:4]), row[4]))


def circle_rhs(t: float, R: float, C_b: float, drug: DrugParams, V_ext: float, dim: int = 2) -> tuple[float, float]:
    """Right-hand side (dR/dt, dC_b/dt) of the reduced circle system.

    ``dim=2`` uses the circle perimeter 2*pi*R (consistent with the 2D
    engine); ``dim=3`` the sphere surface 4*pi*R^2. K is evaluated at the
    clamped radius min(R, R_plane(R)), the same rule the engine applies.
    """
    if R <= 0:
        return 0.0, 0.0
    K = overall_k(clamp_radius(R, R, drug), R, drug).K
    drive = solubility(t, drug) - C_b
    surface = 2 * math.pi * R if dim == 2 else 4 * math.pi * R**2
    return -K / drug.rho_s * drive, surface * K * drive / V_ext


def solve_circle(
    R0: float,
    drug: DrugParams,
    V_ext: float,
    t_end: float,
    dt: float,
    dim: int = 2,
) -> CircleTrajectory:
    """Fixed-step SSP-RK3 integration of the reduced circle system.

    Integration stops at full dissolution (R clamped to 0) or when C_b
    reaches C_s; the remainder up to ``t_end`` is filled analytically
    (frozen radius, closed-form recrystallization or constant C_b).
    """
    if R0 <= 0 or dt <= 0:
        raise ValueError("R0 and dt must be positive")
    ts, Rs, Cbs = [0.0], [R0], [0.0]
    t, R, C = 0.0, R0, 0.0
    t_star = None
    t_dissolved = None
    while t < t_end:
        h = min(dt, t_end - t)
        f1 = circle_rhs(t, R, C, drug, V_ext, dim)
        R1, C1 = R + h * f1[0], C + h * f1[1]
        if R1 > 0:
            f2 = circle_rhs(t + h, R1, C1, drug, V_ext, dim)
            R2, C2 = 0.75 * R + 0.25 * (R1 + h * f2[0]), 0.75 * C + 0.25 * (C1 + h * f2[1])
        else:
            R2 = -1.0
        if R2 > 0:
            f3 = circle_rhs(t + 0.5 * h, R2, C2, drug, V_ext, dim)
            Rn = R / 3 + 2 / 3 * (R2 + h * f3[0])
            Cn = C / 3 + 2 / 3 * (C2 + h * f3[1])
        else:
            Rn = -1.0
        if Rn <= 0:
            # the last sliver dissolves within this step: release its mass
            Cn = C + drug.rho_s * (math.pi * R**2 if dim == 2 else 4 / 3 * math.pi * R**3) / V_ext
            Rn = 0.0
            t_dissolved = t + h
        elif Cn >= solubility(t + h, drug):
            # saturation reached inside the step; radius cannot grow past it
            Rn = min(Rn, R)
        elif Rn > R:
            raise OracleStepError(f"radius increased at t={t:.6g}; reduce dt (={dt})")
        t += h
        R, C = Rn, Cn
        ts.append(t)
        Rs.append(R)
        Cbs.append(C)
        if C >= solubility(t, drug):
            t_star = t
            break
        if R == 0.0:
            break

    regime = ["dissolution"] * len(ts)
    if t < t_end:
        tail = np.linspace(t, t_end, 201)[1:]
        if t_star is None:
            # no solid left; C_b is frozen until C_s decays below it
            t_cross = _solubility_crossing(C, drug)
            if t_cross is not None and t_cross < t_end:
                t_star = max(t_cross, t)
        for tt in tail:
            if t_star is not None and tt >= t_star:
                cb, _ = recrystallization_closed_form(tt, t_star, drug)
                # shift so C_b is continuous at t_star
                cb += (C - solubility(t_star, drug)) * math.exp(-drug.k_rb * (tt - t_star))
                regime.append("recrystallization")
            else:
                cb = C
                regime.append("dissolution")
            ts.append(float(tt))
            Rs.append(R)
            Cbs.append(cb)
    t_arr = np.array(ts)
    return CircleTrajectory(
        t_arr,
        np.array(Rs),
        np.array(Cbs),
        np.array([solubility(x, drug) for x in t_arr]),
        regime,
        t_star,
        t_dissolved,
    )


def _solubility_crossing(C_b: float, drug: DrugParams) -> float | None:
    """Time at which C_s(t) decays to ``C_b`` (None if it never does)."""
    if C_b <= drug.C_sf:
        return None
    if C_b >= drug.C_s0:
        return 0.0
    return -math.log((C_b - drug.C_sf) / (drug.C_s0 - drug.C_sf)) / drug.k_r


def recrystallization_closed_form(t: float, t_star: float, drug: DrugParams) -> tuple[float, float]:
    """Bulk concentration and M_c / (V_ext k_rb) for t >= t_star.

    Initial conditions at t_star are C_b = C_s(t_star) and M_c = 0.
    """
    if t < t_star:
        raise ValueError(f"t ({t}) must be >= t_star ({t_star})")
    k_rb, k_r = drug.k_rb, drug.k_r
    if k_rb == k_r:
        raise ValueError("closed form is singular for k_rb == k_r")
    dC = drug.C_s0 - drug.C_sf
    Cs_star = solubility(t_star, drug)
    q = k_rb - k_r
    decay = math.exp(-k_rb * (t - t_star))
    # exp(-k_rb t) (exp(q t) - exp(q t*)) written to avoid overflow for large t
    mixed = math.exp(-k_r * t) - math.exp(-k_rb * t + q * t_star)
    C_b = Cs_star * decay + dC * k_rb / q * mixed + drug.C_sf * (1 - decay)

    e_rb = math.exp(-k_rb * t) - math.exp(-k_rb * t_star)
    e_r = math.exp(-k_r * t) - math.exp(-k_r * t_star)
    m = (
        -Cs_star / k_rb * math.exp(k_rb * t_star) * e_rb
        + dC / k_r * (1 - k_rb / q) * e_r
        + (k_rb * dC * math.exp(q * t_star) + q * drug.C_sf * math.exp(k_rb * t_star)) / (k_rb * q) * e_rb
    )
    return C_b, m
