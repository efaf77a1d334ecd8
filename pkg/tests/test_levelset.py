import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdissolve.geometry import Circle, field_area, sdf_init
from lsdissolve.levelset import (
    CFLViolation,
    Grid2D,
    LevelSetField,
    PaddingViolation,
    cfl_dt,
    check_padding,
    curvature,
    curvature_field,
    dump_field,
    load_field,
    normal,
    upwind_step,
)

UM = 1e-6


def circle_field(R, dx, n=None, center=(0.0, 0.0)):
    n = n or int(math.ceil(2.6 * R / dx))
    grid = Grid2D.centered(n, dx, center)
    X, Y = grid.coords()
    return LevelSetField(grid, np.hypot(X - center[0], Y - center[1]) - R)


def planar_field(x0, dx, n=40, axis=0):
    grid = Grid2D(n, dx)
    X, Y = grid.coords()
    return LevelSetField(grid, (X if axis == 0 else Y) - x0)


def equivalent_radius(field):
    return math.sqrt(field_area(field) / math.pi)


class TestGrid:
    def test_shape_and_coords(self):
        g = Grid2D(10, 0.5, (1.0, 2.0))
        X, Y = g.coords()
        assert g.shape == (11, 11)
        assert X[3, 0] == 2.5 and Y[0, 4] == 4.0
        assert g.side == 5.0

    def test_centered(self):
        g = Grid2D.centered(10, 1.0, (3.0, 4.0))
        X, Y = g.coords()
        assert X[5, 5] == 3.0 and Y[5, 5] == 4.0

    @pytest.mark.parametrize("n, dx", [(7, 1.0), (10, 0.0), (10, -1.0)])
    def test_invalid(self, n, dx):
        with pytest.raises(ValueError):
            Grid2D(n, dx)

    def test_field_validation(self):
        g = Grid2D(8, 1.0)
        with pytest.raises(ValueError, match="shape"):
            LevelSetField(g, np.zeros((8, 8)))
        phi = np.zeros((9, 9))
        phi[2, 2] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            LevelSetField(g, phi)


class TestCFL:
    def test_formula(self):
        g = Grid2D(10, 1e-6)
        assert cfl_dt(np.full(g.shape, -1.0), g, 0.9) == pytest.approx(9e-7, rel=1e-15)

    def test_still_field(self):
        g = Grid2D(10, 1e-6)
        assert cfl_dt(np.zeros(g.shape), g, 0.9, dt_max=2.5) == 2.5

    def test_halving_dx_halves_dt(self):
        v = np.full((11, 11), 3.0)
        assert cfl_dt(v, Grid2D(10, 0.5e-6), 0.9) == pytest.approx(0.5 * cfl_dt(v, Grid2D(10, 1e-6), 0.9))

    @pytest.mark.parametrize("cfl", [0.0, 1.5, -0.1])
    def test_rejects_ratio(self, cfl):
        with pytest.raises(ValueError):
            cfl_dt(np.ones((11, 11)), Grid2D(10, 1.0), cfl)


class TestUpwind:
    def test_zero_speed_is_identity(self):
        f = circle_field(10.0, 1.0)
        out = upwind_step(f, np.zeros_like(f.phi), 0.3)
        assert np.array_equal(out.phi, f.phi)

    def test_rejects_cfl_violation(self):
        f = circle_field(10.0, 1.0)
        with pytest.raises(CFLViolation):
            upwind_step(f, np.full_like(f.phi, -1.0), 1.01)

    def test_rejects_shape_mismatch(self):
        f = circle_field(10.0, 1.0)
        with pytest.raises(ValueError):
            upwind_step(f, np.zeros((3, 3)), 0.1)

    def test_planar_front(self):
        # phi0 = x - x0 with v = -1: phi = x - x0 + t, so the front sits at x0 - t
        # (the shrinking side); the linear profile is advanced without dissipation
        dx = 1.0
        f = planar_field(30.0, dx)
        t, dt = 0.0, 0.5
        while t < 12.0 - 1e-12:
            f = upwind_step(f, np.full_like(f.phi, -1.0), dt)
            t += dt
        row = f.phi[:, 5]
        i = int(np.argmax(row > 0))
        x = (i - 1) + (-row[i - 1]) / (row[i] - row[i - 1])
        assert abs(x * dx - (30.0 - t)) <= dx

    def test_shrinking_circle_constant_speed(self):
        # phi0 = |x| - R0 with v = -c: radius R0 - c t; dt = 0.45 dx / c keeps the
        # four-term Hamiltonian monotone in 2D
        R0, dx, c = 20.0, 0.5, 1.0
        f = circle_field(R0, dx)
        dt = 0.45 * dx / c
        steps = int(round(12.0 / dt))
        for _ in range(steps):
            f = upwind_step(f, np.full_like(f.phi, -c), dt)
        assert abs(equivalent_radius(f) - (R0 - c * steps * dt)) <= 2 * dx

    def test_first_order_convergence(self):
        R0, c, T = 20.0, 1.0, 12.0
        errors = []
        for dx in (1.0, 0.5, 0.25):
            f = circle_field(R0, dx)
            dt = 0.45 * dx / c
            steps = int(round(T / dt))
            for _ in range(steps):
                f = upwind_step(f, np.full_like(f.phi, -c), dt)
            errors.append(abs(equivalent_radius(f) - (R0 - c * steps * dt)))
        ratios = [errors[0] / errors[1], errors[1] / errors[2]]
        assert all(1.7 <= r <= 2.3 for r in ratios), (errors, ratios)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(4.0, 12.0), st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
    def test_dissolution_keeps_min_phi_non_decreasing(self, R, scale, seed):
        f = circle_field(R, 1.0)
        rng = np.random.default_rng(seed)
        v = -scale * rng.random(f.phi.shape)
        out = upwind_step(f, v, 0.45 / scale)
        assert out.phi.min() >= f.phi.min() - 1e-12
        assert np.all(out.phi >= f.phi - 1e-12)

    def test_deterministic(self):
        f = circle_field(10.0, 1.0)
        v = np.full_like(f.phi, -0.7)
        assert np.array_equal(upwind_step(f, v, 0.5).phi, upwind_step(f, v, 0.5).phi)


class TestCurvature:
    def test_circle(self):
        R, dx = 50 * UM, 1 * UM
        f = circle_field(R, dx)
        X, Y = f.grid.coords()
        r = np.hypot(X, Y)
        # nodes adjacent to the zero level
        near = np.argwhere(np.abs(r - R) <= 0.5 * dx)
        kap = np.array([curvature(f, i, j) for i, j in near])
        assert len(near) > 100
        assert np.max(np.abs(kap * R - 1)) <= 0.02
        # each node also carries the curvature 1/r of its own level set
        band = np.argwhere(np.abs(r - R) <= 2 * dx)
        kap = np.array([curvature(f, i, j) for i, j in band])
        assert np.max(np.abs(kap * r[band[:, 0], band[:, 1]] - 1)) <= 0.005

    def test_planar(self):
        dx = 1 * UM
        f = planar_field(20 * UM, dx)
        assert abs(curvature(f, 15, 20)) <= 1e-6 / dx

    def test_scaling(self):
        dx = 1 * UM
        k1 = curvature_field(circle_field(20 * UM, dx, n=120), fill=True)
        k2 = curvature_field(circle_field(40 * UM, dx, n=120), fill=True)
        # node due east of the centre, on each circle
        assert k1[60 + 20, 60] == pytest.approx(2 * k2[60 + 40, 60], rel=1e-2)

    def test_degenerate_flag_and_fill(self):
        f = circle_field(10.0, 1.0, n=26)
        kap = curvature_field(f)
        assert np.isnan(kap[13, 13])
        filled = curvature_field(f, fill=True)
        assert np.isfinite(filled[13, 13])

    def test_boundary_node_rejected(self):
        f = circle_field(10.0, 1.0)
        with pytest.raises(IndexError):
            curvature(f, 0, 5)


class TestNormal:
    def test_radial(self):
        f = circle_field(10.0, 1.0, n=40)
        nx, ny = normal(f, 32, 20)
        assert nx == pytest.approx(1.0, abs=1e-12) and ny == pytest.approx(0.0, abs=1e-12)

    def test_planar(self):
        f = planar_field(7.0, 1.0, axis=1)
        for i, j in [(3, 3), (10, 20), (30, 9)]:
            assert normal(f, i, j) == pytest.approx((0.0, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_unit_norm(self, seed):
        rng = np.random.default_rng(seed)
        g = Grid2D(16, 0.1)
        X, Y = g.coords()
        a, b, c, d = rng.normal(size=4)
        f = LevelSetField(g, np.sin(a * X + b) + np.cos(c * Y + d) + 0.3 * X * Y)
        for i, j in rng.integers(1, 16, size=(10, 2)):
            n = normal(f, int(i), int(j))
            if not math.isnan(n[0]):
                assert math.hypot(*n) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate(self):
        f = circle_field(10.0, 1.0, n=26)
        assert all(math.isnan(x) for x in normal(f, 13, 13))


class TestPaddingAndDump:
    def test_padding(self):
        check_padding(circle_field(10.0, 1.0, n=30))
        with pytest.raises(PaddingViolation):
            check_padding(circle_field(10.0, 1.0, n=24))

    def test_dump_round_trip(self, tmp_path):
        f = sdf_init(Circle(4e-6), Grid2D.centered(16, 1e-6))
        dump_field(f, tmp_path / "phi.csv", t=1.25)
        g, t = load_field(tmp_path / "phi.csv")
        assert t == 1.25
        assert g.grid == f.grid
        assert np.array_equal(g.phi, f.phi)
