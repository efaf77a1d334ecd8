"""Coupled level-set / bulk-concentration engine.

Every particle owns a level-set field on its own grid; particles whose
grids have the same node count are stored as one ``(P, m, m)`` stack so a
single numba call measures, evaluates and advances all of them. The bulk
concentration is advanced by forward Euler with the same dt as the
level-set step. In the recrystallization regime the fields are frozen and
the bulk state follows the closed-form solution.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from numba import njit

from .config import ScenarioConfig, plan_grids
from .geometry import (
    ContourPolyline,
    _marching_squares,
    _segment_transfer,
    extract_contour,
    sdf_init,
)
from .levelset import LevelSetField, _curvature_field, _fill_degenerate, _upwind
from .oracle import recrystallization_closed_form
from .physchem import DrugParams, _delta_u, _k_d_coef, _k_d_flat, _r_plane, _transfer, solubility

# stats columns written by the kernels
_COUNT, _PERIM, _AREA, _FLUX, _VMAX, _MIN_R, _MAX_K, _RATE = range(8)
_NSTATS = 8
_RATE_SAMPLES = 96
_SEED_CELLS = 3


class Regime(str, Enum):
    DISSOLUTION = "dissolution"
    RECRYSTALLIZATION = "recrystallization"


class SimulationError(RuntimeError):
    """Engine failure with the step, time and (when known) particle involved."""

    def __init__(self, message: str, step: int, t: float, particle_id: int | None = None, partial=None):
        where = f"step {step}, t={t:.6g} s" + (f", particle {particle_id}" if particle_id is not None else "")
        super().__init__(f"{message} ({where})")
        self.step = step
        self.t = t
        self.particle_id = particle_id
        self.partial = partial


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True, error_model="numpy")
def _diffusion_number(p, R_min, R_plane, c_d, k_flat, dx):
    """max over R of 4 * dK/dkappa / dx^2 on the unclamped curved range.

    The speed depends on the node curvature, so the explicit step carries
    an implicit curvature-diffusion term with coefficient dv/dkappa; K
    depends on R only, so sampling R bounds it for every node at once.
    """
    best = 0.0
    if R_plane <= R_min:
        return best
    ratio = R_plane / R_min
    h = 1e-4
    for s in range(_RATE_SAMPLES + 1):
        R = R_min * ratio ** (s / _RATE_SAMPLES)
        kap = 1.0 / R
        Rlo = min(max(1.0 / (kap * (1.0 + h)), R_min), R_plane)
        Rhi = min(max(1.0 / (kap * (1.0 - h)), R_min), R_plane)
        dK = _transfer(Rlo, p, R_plane, c_d, k_flat)[3] - _transfer(Rhi, p, R_plane, c_d, k_flat)[3]
        eps = dK / (2.0 * h * kap)
        if eps > best:
            best = eps
    return 4.0 * best / (dx * dx)


@njit(cache=True, nogil=True, error_model="numpy")
def _nearest_segment(segs, count, m):
    """Index of the contour segment whose midpoint is nearest each node.

    Nodes within ``_SEED_CELLS`` of a midpoint are labelled exactly (this
    covers the band the upwind stencil reads); the labels are then
    propagated by one forward and one backward raster sweep over the
    8-neighbour stencil, each node keeping the closer candidate. Far from
    the front the result may be a near-nearest segment, which only affects
    nodes the front has not reached yet.
    """
    near = np.full((m, m), -1, dtype=np.int64)
    best = np.full((m, m), np.inf)
    mx = 0.5 * (segs[:count, 0] + segs[:count, 2])
    my = 0.5 * (segs[:count, 1] + segs[:count, 3])
    for s in range(count):
        i0 = int(math.floor(mx[s]))
        j0 = int(math.floor(my[s]))
        for i in range(max(i0 - _SEED_CELLS, 0), min(i0 + _SEED_CELLS + 2, m)):
            for j in range(max(j0 - _SEED_CELLS, 0), min(j0 + _SEED_CELLS + 2, m)):
                d = (i - mx[s]) ** 2 + (j - my[s]) ** 2
                if d < best[i, j]:
                    best[i, j] = d
                    near[i, j] = s
    for i in range(m):
        for j in range(m):
            for di, dj in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
                a = i + di
                b = j + dj
                if 0 <= a < m and 0 <= b < m and near[a, b] >= 0:
                    s = near[a, b]
                    d = (i - mx[s]) ** 2 + (j - my[s]) ** 2
                    if d < best[i, j]:
                        best[i, j] = d
                        near[i, j] = s
    for i in range(m - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            for di, dj in ((1, 1), (1, 0), (1, -1), (0, 1)):
                a = i + di
                b = j + dj
                if 0 <= a < m and 0 <= b < m and near[a, b] >= 0:
                    s = near[a, b]
                    d = (i - mx[s]) ** 2 + (j - my[s]) ** 2
                    if d < best[i, j]:
                        best[i, j] = d
                        near[i, j] = s
    return near


@njit(cache=True, nogil=True, error_model="numpy")
def _evaluate(phi, dx, p, drive, v, out):
    """Measure one particle and write v = -K * drive at every node.

    K is evaluated on the contour segments and each node takes the value
    of its nearest segment, so the front moves with the same K that the
    flux integral uses. ``drive`` is (C_s - C_b) / rho_s and ``out``
    receives the stats row.
    """
    segs, edges, count, area_cells = _marching_squares(phi)
    area = area_cells * dx * dx
    out[_COUNT] = count
    out[_AREA] = area
    if count == 0 or area <= 0.0:
        v[:, :] = 0.0
        out[_PERIM] = 0.0
        out[_FLUX] = 0.0
        out[_VMAX] = 0.0
        out[_MIN_R] = math.inf
        out[_MAX_K] = 0.0
        out[_RATE] = 0.0
        return
    R_eq = math.sqrt(area / math.pi)
    R_min = 0.5 * dx
    kappa = _fill_degenerate(_curvature_field(phi, dx), 3)
    length, kap, rad, Kseg = _segment_transfer(segs, count, kappa, dx, p, R_eq, R_min)
    perim = 0.0
    flux = 0.0
    min_R = math.inf
    max_K = 0.0
    for s in range(count):
        perim += length[s]
        flux += Kseg[s] * length[s]
        if rad[s] < min_R:
            min_R = rad[s]
        if Kseg[s] > max_K:
            max_K = Kseg[s]
    m = phi.shape[0]
    near = _nearest_segment(segs, count, m)
    for i in range(m):
        for j in range(m):
            v[i, j] = -Kseg[near[i, j]] * drive
    dU = _delta_u(R_eq, p)
    R_plane = _r_plane(R_eq, p)
    rate = 2.0 * max_K / dx + _diffusion_number(p, R_min, R_plane, _k_d_coef(dU, p), _k_d_flat(R_eq, dU, p), dx)
    out[_PERIM] = perim
    out[_FLUX] = flux
    out[_VMAX] = max_K * abs(drive)
    out[_RATE] = rate * abs(drive)
    out[_MIN_R] = min_R
    out[_MAX_K] = max_K


@njit(cache=True, nogil=True, error_model="numpy")
def _evaluate_stack(phi, dx, alive, p, drive, v, stats):
    for k in range(phi.shape[0]):
        if alive[k]:
            _evaluate(phi[k], dx[k], p, drive, v[k], stats[k])
        else:
            v[k] = 0.0
            stats[k] = 0.0
            stats[k, _MIN_R] = math.inf


@njit(cache=True, nogil=True, error_model="numpy")
def _advance_stack(phi, v, dt, dx, alive, stats):
    """Upwind-step the live fields in place, then re-measure p and A."""
    for k in range(phi.shape[0]):
        if not alive[k]:
            continue
        phi[k] = _upwind(phi[k], v[k], dt, dx[k])
        segs, edges, count, area_cells = _marching_squares(phi[k])
        perim = 0.0
        for s in range(count):
            perim += math.hypot(segs[s, 2] - segs[s, 0], segs[s, 3] - segs[s, 1])
        stats[k, _COUNT] = count
        stats[k, _PERIM] = perim * dx[k]
        stats[k, _AREA] = area_cells * dx[k] * dx[k]


# ---------------------------------------------------------------------------
# state


@dataclass
class ParticleState:
    id: int
    field: LevelSetField
    multiplicity: int = 1
    alive: bool = True
    perimeter: float = math.nan
    area: float = math.nan
    min_R: float = math.nan
    max_K: float = math.nan

    def __post_init__(self):
        if self.multiplicity < 1:
            raise ValueError(f"multiplicity must be >= 1, got {self.multiplicity}")

    @property
    def R_eq(self) -> float:
        return math.sqrt(max(self.area, 0.0) / math.pi)


@dataclass
class BulkState:
    V_ext: float
    C_b: float = 0.0
    M_c: float = 0.0
    regime: Regime = Regime.DISSOLUTION
    t_star: float | None = None
    # bulk values at the latest switch, used to continue the closed form
    C_b_switch: float = math.nan
    M_c_switch: float = 0.0

    def __post_init__(self):
        if not self.V_ext > 0:
            raise ValueError(f"V_ext must be positive, got {self.V_ext}")


class _Stack:
    """Particles sharing a node count, stored contiguously."""

    def __init__(self, members: list[ParticleState]):
        self.members = members
        self.phi = np.ascontiguousarray(np.stack([p.field.phi for p in members]))
        self.dx = np.array([p.field.grid.dx for p in members])
        self.alive = np.array([p.alive for p in members])
        self.v = np.zeros_like(self.phi)
        self.stats = np.zeros((len(members), _NSTATS))
        for k, p in enumerate(members):
            p.field.phi = self.phi[k]

    def chunks(self, jobs: int) -> list[slice]:
        n = len(self.members)
        jobs = max(1, min(jobs, n))
        bounds = np.linspace(0, n, jobs + 1).astype(int)
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass
class SimState:
    particles: list[ParticleState]
    bulk: BulkState
    drug: DrugParams
    t: float = 0.0
    step: int = 0
    jobs: int = 1
    _stacks: list[_Stack] = field(default_factory=list, init=False, repr=False)
    _pool: ThreadPoolExecutor | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        groups: dict[tuple, list[ParticleState]] = {}
        for p in self.particles:
            groups.setdefault(p.field.phi.shape, []).append(p)
        self._stacks = [_Stack(members) for members in groups.values()]
        self._params = self.drug.as_array()
        self.refresh()

    def _map(self, fn, stack: _Stack) -> None:
        parts = stack.chunks(self.jobs)
        if len(parts) == 1:
            fn(parts[0])
            return
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.jobs)
        for fut in [self._pool.submit(fn, s) for s in parts]:
            fut.result()

    def _evaluate(self, drive: float) -> None:
        for st in self._stacks:
            def work(s, st=st):
                _evaluate_stack(st.phi[s], st.dx[s], st.alive[s], self._params, drive, st.v[s], st.stats[s])
            self._map(work, st)
            bad = ~np.isfinite(st.stats[:, _VMAX]) | ~np.all(np.isfinite(st.v), axis=(1, 2))
            if bad.any():
                pid = st.members[int(np.argmax(bad))].id
                raise SimulationError("non-finite front speed", self.step, self.t, pid)
            for k, p in enumerate(st.members):
                if p.alive:
                    p.perimeter = float(st.stats[k, _PERIM])
                    p.area = float(st.stats[k, _AREA])
                    p.min_R = float(st.stats[k, _MIN_R])
                    p.max_K = float(st.stats[k, _MAX_K])

    def refresh(self) -> None:
        """Re-measure every live particle (no time advance)."""
        self._evaluate(0.0)
        self.bulk.C_b += self._bury() / self.bulk.V_ext

    def _bury(self) -> float:
        """Mark particles below one cell as dissolved; returns the released mass."""
        released = 0.0
        for st in self._stacks:
            for k, p in enumerate(st.members):
                if not p.alive:
                    continue
                dx = st.dx[k]
                if st.stats[k, _COUNT] == 0 or st.stats[k, _AREA] < dx * dx:
                    released += self.drug.rho_s * p.multiplicity * max(float(st.stats[k, _AREA]), 0.0)
                    p.alive = False
                    st.alive[k] = False
                    p.perimeter = p.area = 0.0
                    p.min_R, p.max_K = math.inf, 0.0
        return released

    def solid_area(self) -> float:
        return math.fsum(p.multiplicity * p.area for p in self.particles if p.alive)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


# ---------------------------------------------------------------------------
# operations


def speed_field(particle: ParticleState, bulk: BulkState, t: float, drug: DrugParams) -> np.ndarray:
    """Normal speed v = -K (C_s - C_b) / rho_s at every node of one particle."""
    v = np.zeros_like(particle.field.phi)
    if not particle.alive:
        return v
    drive = (solubility(t, drug) - bulk.C_b) / drug.rho_s
    stats = np.zeros(_NSTATS)
    _evaluate(particle.field.phi, particle.field.grid.dx, drug.as_array(), drive, v, stats)
    return v


def step_dissolution(state: SimState, cfl: float, dt_max: float = math.inf, dt_cap: float = math.inf) -> SimState:
    """One coupled step in the dissolution regime; advances ``state`` in place.

    dt is ``cfl / (2 max|v|/dx + 4 max(dv/dkappa)/dx^2)`` minimised over
    live particles. The factor 2 is the 2D monotonicity bound of the
    four-term upwind Hamiltonian (all four one-sided terms are active at
    the interior kink); the second term is the diffusion-number bound of
    the curvature-dependent speed. It is capped by ``dt_max`` and ``dt_cap`` (the caller's
    distance to the next output time).
    """
    if state.bulk.regime is not Regime.DISSOLUTION:
        raise ValueError("step_dissolution called outside the dissolution regime")
    if not 0 < cfl <= 1:
        raise ValueError(f"cfl must be in (0, 1], got {cfl}")
    C_s = solubility(state.t, state.drug)
    gap = C_s - state.bulk.C_b
    if gap < 0:
        raise ValueError(f"C_b ({state.bulk.C_b}) exceeds C_s ({C_s}); check_regime first")
    state._evaluate(gap / state.drug.rho_s)

    dt = min(dt_max, dt_cap)
    for st in state._stacks:
        rate = float(np.max(st.stats[st.alive, _RATE], initial=0.0))
        if rate > 0:
            dt = min(dt, cfl / rate)
    if not (math.isfinite(dt) and dt > 0):
        raise SimulationError(f"invalid time step {dt}", state.step, state.t)

    # flux reduction in particle order so results do not depend on grouping
    flux = {p.id: 0.0 for p in state.particles}
    for st in state._stacks:
        for k, p in enumerate(st.members):
            if p.alive:
                flux[p.id] = p.multiplicity * float(st.stats[k, _FLUX])
    total = math.fsum(flux[p.id] for p in state.particles)

    for st in state._stacks:
        def work(s, st=st):
            _advance_stack(st.phi[s], st.v[s], dt, st.dx[s], st.alive[s], st.stats[s])
        state._map(work, st)
        for k, p in enumerate(st.members):
            if p.alive:
                p.perimeter = float(st.stats[k, _PERIM])
                p.area = float(st.stats[k, _AREA])

    bulk = state.bulk
    bulk.C_b += dt * gap / bulk.V_ext * total
    bulk.C_b += state._bury() / bulk.V_ext
    state.t += dt
    state.step += 1
    return state


def check_regime(state: SimState) -> SimState:
    """Guard-based switch between dissolution and recrystallization."""
    bulk = state.bulk
    C_s = solubility(state.t, state.drug)
    if bulk.regime is Regime.DISSOLUTION and bulk.C_b >= C_s:
        if state.drug.k_rb == state.drug.k_r:
            raise ValueError("recrystallization closed form needs k_rb != k_r")
        bulk.regime = Regime.RECRYSTALLIZATION
        bulk.t_star = state.t
        bulk.C_b_switch = bulk.C_b
        bulk.M_c_switch = bulk.M_c
    elif bulk.regime is Regime.RECRYSTALLIZATION and bulk.C_b < C_s:
        bulk.regime = Regime.DISSOLUTION
    return state


def step_recrystallization(state: SimState, dt: float) -> SimState:
    """Advance the bulk by the exact closed-form solution; fields stay frozen.

    The Euler step that triggered the switch may leave C_b slightly above
    C_s(t*); that excess decays with rate k_rb and is carried into M_c so
    mass stays balanced.
    """
    bulk = state.bulk
    if bulk.regime is not Regime.RECRYSTALLIZATION:
        raise ValueError("step_recrystallization called outside the recrystallization regime")
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    drug = state.drug
    t_new = state.t + dt
    C_b, m = recrystallization_closed_form(t_new, bulk.t_star, drug)
    excess = bulk.C_b_switch - solubility(bulk.t_star, drug)
    decay = math.exp(-drug.k_rb * (t_new - bulk.t_star))
    bulk.C_b = C_b + excess * decay
    bulk.M_c = bulk.M_c_switch + bulk.V_ext * (drug.k_rb * m + excess * (1 - decay))
    state.t = t_new
    state.step += 1
    return state


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class RunResult:
    timeseries: list[tuple] = field(default_factory=list)
    particles: list[tuple] = field(default_factory=list)
    trajectory: list[tuple] = field(default_factory=list)
    snapshots: list[tuple[int, float, list[ContourPolyline]]] = field(default_factory=list)
    switches: list[tuple[float, str]] = field(default_factory=list)
    initial_mass: float = 0.0
    V_ext: float = math.nan
    max_mass_residual: float = 0.0
    steps: int = 0
    state: SimState | None = None

    TIMESERIES_HEADER = ("t", "C_b", "C_s", "regime", "M_c", "alive_count", "total_p", "total_A")
    PARTICLE_HEADER = ("particle_id", "t", "multiplicity", "p", "A", "R_eq", "min_R", "max_K", "alive")
    TRAJECTORY_HEADER = ("t", "R", "C_b", "C_s", "regime")

    def column(self, name: str) -> np.ndarray:
        idx = self.TIMESERIES_HEADER.index(name)
        return np.array([row[idx] for row in self.timeseries])


def initial_state(config: ScenarioConfig, jobs: int = 1) -> SimState:
    drug = config.drug_params()
    specs = config.all_particles()
    grids = plan_grids(specs, config.grid)
    particles = [
        ParticleState(i, sdf_init(spec.shape, grid), spec.multiplicity) for i, (spec, grid) in enumerate(zip(specs, grids))
    ]
    area0 = math.fsum(s.multiplicity * s.shape.area() for s in specs)
    V_ext = config.external_volume(area0) if specs or config.v_ext is not None else 1.0
    return SimState(particles, BulkState(V_ext), drug, jobs=jobs)


def mass_residual(state: SimState, initial_mass: float) -> float:
    """|M_0 - (M_s + C_b V_ext + M_c)| / M_0 (0 when there is no solid)."""
    if initial_mass <= 0:
        return 0.0
    total = state.drug.rho_s * state.solid_area() + state.bulk.C_b * state.bulk.V_ext + state.bulk.M_c
    return abs(initial_mass - total) / initial_mass


def run(
    config: ScenarioConfig,
    jobs: int = 1,
    reinit: Callable[[LevelSetField], LevelSetField] | None = None,
    reinit_every: int = 0,
    progress: Callable[[SimState], None] | None = None,
) -> RunResult:
    """Advance a scenario to ``t_end`` and collect records.

    Records are taken at every multiple of the output interval; contour
    snapshots at multiples of the snapshot interval (plus t=0 and t_end).
    ``reinit`` is an optional field rebuild applied every ``reinit_every``
    dissolution steps; it is off unless both are given.
    """
    state = initial_state(config, jobs)
    result = RunResult(state=state, V_ext=state.bulk.V_ext)
    result.initial_mass = state.drug.rho_s * state.solid_area()
    t_end = config.t_end
    out_dt = config.resolved_output_every
    snap_dt = config.snapshot_every
    dt_max = config.resolved_dt_max
    tol = 1e-9 * min(out_dt, snap_dt or out_dt)

    def record():
        state.refresh()
        drug, bulk, t = state.drug, state.bulk, state.t
        C_s = solubility(t, drug)
        live = [p for p in state.particles if p.alive]
        result.timeseries.append((
            t, bulk.C_b, C_s, bulk.regime.value, bulk.M_c,
            sum(p.multiplicity for p in live),
            math.fsum(p.multiplicity * p.perimeter for p in live),
            state.solid_area(),
        ))
        for p in state.particles:
            result.particles.append((
                p.id, t, p.multiplicity, p.perimeter if p.alive else 0.0, p.area if p.alive else 0.0,
                p.R_eq if p.alive else 0.0, p.min_R, p.max_K, int(p.alive),
            ))
        if state.particles:
            first = state.particles[0]
            result.trajectory.append((t, first.R_eq if first.alive else 0.0, bulk.C_b, C_s, bulk.regime.value))
        result.max_mass_residual = max(result.max_mass_residual, mass_residual(state, result.initial_mass))

    def snapshot():
        for p in state.particles:
            if p.alive:
                result.snapshots.append((p.id, state.t, extract_contour(p.field)))

    check_regime(state)
    record()
    if snap_dt:
        snapshot()
    k_out, k_snap = 1, 1
    try:
        while state.t < t_end - tol:
            target = min(k_out * out_dt, k_snap * snap_dt if snap_dt else math.inf, t_end)
            regime = state.bulk.regime
            if regime is Regime.DISSOLUTION:
                step_dissolution(state, config.cfl, dt_max, target - state.t)
                if reinit is not None and reinit_every > 0 and state.step % reinit_every == 0:
                    for p in state.particles:
                        if p.alive:
                            p.field.phi[:] = reinit(p.field).phi
            else:
                step_recrystallization(state, min(dt_max, target - state.t))
            if abs(state.t - target) <= tol:
                state.t = target
            check_regime(state)
            if state.bulk.regime is not regime:
                result.switches.append((state.t, state.bulk.regime.value))
            if state.t >= k_out * out_dt - tol:
                record()
                k_out += 1
            if snap_dt and state.t >= k_snap * snap_dt - tol:
                snapshot()
                k_snap += 1
            if progress is not None:
                progress(state)
        if result.timeseries[-1][0] < state.t:
            record()
        if snap_dt and (not result.snapshots or result.snapshots[-1][1] < state.t):
            snapshot()
    except SimulationError as exc:
        exc.partial = result
        raise
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        raise SimulationError(str(exc), state.step, state.t, partial=result) from exc
    finally:
        result.steps = state.step
        state.close()
    return result
