"""Uniform-grid level-set storage, curvature, normals and the upwind step.

``phi`` arrays are indexed ``phi[i, j]`` with ``i`` along x and ``j`` along
y; node ``(i, j)`` sits at ``origin + (i*dx, j*dx)``. Inside the particle
``phi < 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

EPS_GRAD = 1e-6


class CFLViolation(ValueError):
    pass


class PaddingViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid2D:
    n: int
    dx: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"grid needs at least 8 cells per side, got {self.n}")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")

    @classmethod
    def centered(cls, n: int, dx: float, center: tuple[float, float] = (0.0, 0.0)) -> Grid2D:
        half = 0.5 * n * dx
        return cls(n, dx, (center[0] - half, center[1] - half))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n + 1, self.n + 1)

    @property
    def side(self) -> float:
        return self.n * self.dx

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays X, Y with ``X[i, j] = x_i``."""
        ticks = np.arange(self.n + 1) * self.dx
        return np.meshgrid(self.origin[0] + ticks, self.origin[1] + ticks, indexing="ij")


@dataclass
class LevelSetField:
    grid: Grid2D
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.ascontiguousarray(self.phi, dtype=np.float64)
        if self.phi.shape != self.grid.shape:
            raise ValueError(f"phi shape {self.phi.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi contains non-finite values")

    def copy(self) -> LevelSetField:
        return LevelSetField(self.grid, self.phi.copy())


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True, error_model="numpy")
def _node_curvature(phi, i, j, dx):
    h1 = 0.5 / dx
    h2 = 1.0 / (dx * dx)
    px = (phi[i + 1, j] - phi[i - 1, j]) * h1
    py = (phi[i, j + 1] - phi[i, j - 1]) * h1
    g2 = px * px + py * py
    if g2 < EPS_GRAD * EPS_GRAD:
        return math.nan
    c = 2.0 * phi[i, j]
    pxx = (phi[i + 1, j] - c + phi[i - 1, j]) * h2
    pyy = (phi[i, j + 1] - c + phi[i, j - 1]) * h2
    pxy = (phi[i + 1, j + 1] - phi[i + 1, j - 1] - phi[i - 1, j + 1] + phi[i - 1, j - 1]) * (0.25 * h2)
    return (pxx * py * py - 2.0 * px * py * pxy + pyy * px * px) / (g2 * math.sqrt(g2))


@njit(cache=True, nogil=True, error_model="numpy")
def _curvature_field(phi, dx):
    """Node curvature; NaN marks a degenerate gradient.

    Boundary nodes copy the adjacent interior value.
    """
    m = phi.shape[0]
    kappa = np.empty_like(phi)
    for i in range(1, m - 1):
        for j in range(1, m - 1):
            kappa[i, j] = _node_curvature(phi, i, j, dx)
    for k in range(1, m - 1):
        kappa[0, k] = kappa[1, k]
        kappa[m - 1, k] = kappa[m - 2, k]
        kappa[k, 0] = kappa[k, 1]
        kappa[k, m - 1] = kappa[k, m - 2]
    kappa[0, 0] = kappa[1, 1]
    kappa[0, m - 1] = kappa[1, m - 2]
    kappa[m - 1, 0] = kappa[m - 2, 1]
    kappa[m - 1, m - 1] = kappa[m - 2, m - 2]
    return kappa


@njit(cache=True, nogil=True, error_model="numpy")
def _fill_degenerate(kappa, reach):
    """Replace NaN curvature with the nearest finite value (Chebyshev rings)."""
    m = kappa.shape[0]
    out = kappa.copy()
    for i in range(m):
        for j in range(m):
            if not math.isnan(kappa[i, j]):
                continue
            found = False
            for r in range(1, reach + 1):
                best = math.nan
                bestd = 1e300
                for a in range(max(i - r, 0), min(i + r, m - 1) + 1):
                    for b in range(max(j - r, 0), min(j + r, m - 1) + 1):
                        if abs(a - i) != r and abs(b - j) != r:
                            continue
                        val = kappa[a, b]
                        if math.isnan(val):
                            continue
                        d = (a - i) ** 2 + (b - j) ** 2
                        if d < bestd:
                            bestd = d
                            best = val
                if not math.isnan(best):
                    out[i, j] = best
                    found = True
                    break
            if not found:
                # locally constant phi far from any front: treat as flat
                out[i, j] = 0.0
    return out


@njit(cache=True, nogil=True, error_model="numpy")
def _upwind(phi, v, dt, dx):
    m = phi.shape[0]
    out = np.empty_like(phi)
    for i in range(m):
        for j in range(m):
            c = phi[i, j]
            # one-sided differences toward the interior on the domain boundary
            if i > 0:
                dxm = (c - phi[i - 1, j]) / dx
            else:
                dxm = (phi[i + 1, j] - c) / dx
            if i < m - 1:
                dxp = (phi[i + 1, j] - c) / dx
            else:
                dxp = dxm
            if j > 0:
                dym = (c - phi[i, j - 1]) / dx
            else:
                dym = (phi[i, j + 1] - c) / dx
            if j < m - 1:
                dyp = (phi[i, j + 1] - c) / dx
            else:
                dyp = dym
            s = v[i, j]
            if s > 0.0:
                lam = math.sqrt(
                    max(dxm, 0.0) ** 2 + min(dxp, 0.0) ** 2 + max(dym, 0.0) ** 2 + min(dyp, 0.0) ** 2
                )
                out[i, j] = c - dt * s * lam
            elif s < 0.0:
                lam = math.sqrt(
                    max(dxp, 0.0) ** 2 + min(dxm, 0.0) ** 2 + max(dyp, 0.0) ** 2 + min(dym, 0.0) ** 2
                )
                out[i, j] = c - dt * s * lam
            else:
                out[i, j] = c
    return out


# ---------------------------------------------------------------------------
# public API


def cfl_dt(speed: np.ndarray, grid: Grid2D, cfl: float, dt_max: float = math.inf) -> float:
    """Largest stable step ``cfl * dx / max|v|``; ``dt_max`` when the field is still."""
    if not 0 < cfl <= 1:
        raise ValueError(f"cfl must be in (0, 1], got {cfl}")
    vmax = float(np.max(np.abs(speed))) if speed.size else 0.0
    if vmax == 0.0:
        return dt_max
    return min(cfl * grid.dx / vmax, dt_max)


def upwind_step(field: LevelSetField, speed: np.ndarray, dt: float) -> LevelSetField:
    """Advance ``phi_t + v |grad phi| = 0`` by one first-order upwind step."""
    speed = np.asarray(speed, dtype=np.float64)
    if speed.shape != field.phi.shape:
        raise ValueError(f"speed shape {speed.shape} does not match field {field.phi.shape}")
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    vmax = float(np.max(np.abs(speed)))
    if dt * vmax > field.grid.dx * (1.0 + 1e-12):
        raise CFLViolation(f"dt*max|v| = {dt * vmax:.3e} exceeds dx = {field.grid.dx:.3e}")
    return LevelSetField(field.grid, _upwind(field.phi, speed, float(dt), field.grid.dx))


def curvature_field(field: LevelSetField, fill: bool = False) -> np.ndarray:
    """Curvature at every node (positive on convex particle boundaries).

    Degenerate-gradient nodes are NaN unless ``fill`` is set, in which case
    they take the value of the nearest non-degenerate node.
    """
    kappa = _curvature_field(field.phi, field.grid.dx)
    if fill:
        kappa = _fill_degenerate(kappa, 3)
    return kappa


def _check_interior(field: LevelSetField, i: int, j: int) -> None:
    m = field.grid.n
    if not (1 <= i < m and 1 <= j < m):
        raise IndexError(f"node ({i}, {j}) must be at least one node away from the grid boundary")


def curvature(field: LevelSetField, i: int, j: int) -> float:
    """Curvature at one interior node; NaN flags a degenerate gradient."""
    _check_interior(field, i, j)
    return float(_node_curvature(field.phi, i, j, field.grid.dx))


def normal(field: LevelSetField, i: int, j: int) -> tuple[float, float]:
    """Outward unit normal grad(phi)/|grad(phi)|; NaNs flag a degenerate gradient."""
    _check_interior(field, i, j)
    phi, dx = field.phi, field.grid.dx
    px = (phi[i + 1, j] - phi[i - 1, j]) / (2 * dx)
    py = (phi[i, j + 1] - phi[i, j - 1]) / (2 * dx)
    norm = math.hypot(px, py)
    if norm < EPS_GRAD:
        return (math.nan, math.nan)
    return (px / norm, py / norm)


def check_padding(field: LevelSetField, cells: int = 3) -> None:
    """Raise if the zero level set comes within ``cells`` of the domain boundary."""
    phi = field.phi
    band = (phi[: cells + 1, :], phi[-cells - 1 :, :], phi[:, : cells + 1], phi[:, -cells - 1 :])
    if any(float(b.min()) <= 0.0 for b in band):
        raise PaddingViolation(f"zero level set within {cells} cells of the domain boundary")


def dump_field(field: LevelSetField, path: str | Path, t: float = 0.0) -> None:
    """Write a CSV snapshot: commented header (n, dx, origin, t) then i, j, phi rows."""
    g = field.grid
    i, j = np.indices(g.shape)
    with open(path, "w") as fh:
        fh.write(f"# n={g.n} dx={float(g.dx)!r} origin_x={float(g.origin[0])!r} origin_y={float(g.origin[1])!r} t={float(t)!r}\n")
        fh.write("i,j,phi\n")
        rows = np.column_stack([i.ravel(), j.ravel()])
        for (a, b), value in zip(rows, field.phi.ravel()):
            fh.write(f"{a},{b},{float(value)!r}\n")


def load_field(path: str | Path) -> tuple[LevelSetField, float]:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    n = int(meta["n"])
    grid = Grid2D(n, float(meta["dx"]), (float(meta["origin_x"]), float(meta["origin_y"])))
    phi = np.empty(grid.shape)
    phi[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2]
    return LevelSetField(grid, phi), float(meta["t"])
