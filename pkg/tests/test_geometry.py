import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdissolve.geometry import (
    Circle,
    Rectangle,
    Superellipse,
    boundary_integral_k,
    extract_contour,
    field_area,
    measure,
    reinitialize,
    sdf_init,
    superellipse_polar_area,
    turning_angle,
    write_contours_csv,
    write_contours_json,
)
from lsdissolve.levelset import Grid2D, LevelSetField, PaddingViolation
from lsdissolve.physchem import get_preset, overall_k, r_equivalent
from lsdissolve.presets import EQUAL_AREA, SQUARE_EXPONENT, square_half_side

UM = 1e-6
THEO = get_preset("theophylline-37")


def grid_for(shape, dx, factor=1.3):
    n = int(math.ceil(factor * 2 * shape.extent() / dx)) + 8
    n += n % 2
    return Grid2D.centered(n, dx, shape.center)


def measured(shape, dx, drug=THEO):
    f = sdf_init(shape, grid_for(shape, dx))
    return f, measure(extract_contour(f), f, drug)


def square():
    a = square_half_side(EQUAL_AREA)
    return Superellipse(a, a, SQUARE_EXPONENT)


class TestShapes:
    def test_superellipse_area_matches_quadrature(self):
        s = Superellipse(40 * UM, 25 * UM, 3.0)
        assert s.area() == pytest.approx(superellipse_polar_area(s), rel=1e-9)

    def test_ellipse_area(self):
        assert Superellipse(3.0, 2.0, 2.0).area() == pytest.approx(6 * math.pi, rel=1e-14)

    def test_equal_area_square(self):
        assert square().area() == pytest.approx(EQUAL_AREA, rel=1e-12)

    @pytest.mark.parametrize("bad", [
        lambda: Circle(0.0), lambda: Superellipse(1.0, -1.0), lambda: Superellipse(1.0, 1.0, 1.5),
        lambda: Rectangle(0.0, 1.0),
    ])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            bad()

    def test_boundary_is_ccw(self):
        for s in (Circle(2.0), Superellipse(3.0, 1.0, 4.0), Rectangle(4.0, 1.0, rotation=0.3)):
            pts = s.boundary(400)
            x, y = pts[:, 0], pts[:, 1]
            signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            assert signed > 0
            assert signed == pytest.approx(s.area(), rel=1e-3)

    def test_scaled(self):
        r = Rectangle(4.0, 1.0, center=(1.0, 2.0)).scaled(0.5)
        assert (r.w, r.h, r.center) == (2.0, 0.5, (1.0, 2.0))


class TestSignedDistance:
    def test_circle(self):
        dx = 1 * UM
        c = Circle(20 * UM)
        f = sdf_init(c, grid_for(c, dx))
        X, Y = f.grid.coords()
        assert np.max(np.abs(f.phi - (np.hypot(X, Y) - c.radius))) <= 1e-3 * dx

    def test_square_centre(self):
        r = Rectangle(20 * UM, 20 * UM)
        f = sdf_init(r, Grid2D.centered(40, 1 * UM))
        assert f.phi[20, 20] == pytest.approx(-10 * UM, rel=1e-12)

    def test_offset_rotated_rectangle_sign(self):
        r = Rectangle(6.0, 2.0, center=(3.0, -1.0), rotation=0.5)
        f = sdf_init(r, Grid2D.centered(40, 0.25, r.center))
        X, Y = f.grid.coords()
        c, s = math.cos(0.5), math.sin(0.5)
        u = c * (X - 3.0) + s * (Y + 1.0)
        v = -s * (X - 3.0) + c * (Y + 1.0)
        inside = (np.abs(u) < 3.0 - 0.01) & (np.abs(v) < 1.0 - 0.01)
        outside = (np.abs(u) > 3.0 + 0.01) | (np.abs(v) > 1.0 + 0.01)
        assert np.all(f.phi[inside] < 0) and np.all(f.phi[outside] > 0)

    def test_superellipse_area(self):
        s = Superellipse(25 * UM, 25 * UM, SQUARE_EXPONENT)
        f = sdf_init(s, grid_for(s, s.a / 50))
        assert field_area(f) == pytest.approx(superellipse_polar_area(s), rel=1e-2)

    def test_padding(self):
        with pytest.raises(PaddingViolation):
            sdf_init(Circle(10.0), Grid2D.centered(24, 1.0))


class TestContour:
    def test_circle_points_near_boundary(self):
        dx = 1 * UM
        c = Circle(30 * UM)
        (loop,) = extract_contour(sdf_init(c, grid_for(c, dx)))
        assert loop.closed
        assert np.array_equal(loop.points[0], loop.points[-1])
        assert np.max(np.abs(np.hypot(*loop.points.T) - c.radius)) <= 0.5 * dx

    def test_no_sign_change(self):
        g = Grid2D(10, 1.0)
        assert extract_contour(LevelSetField(g, np.ones(g.shape))) == []
        assert field_area(LevelSetField(g, np.ones(g.shape))) == 0.0

    def test_square_turning_angle(self):
        (loop,) = extract_contour(sdf_init(square(), grid_for(square(), 1 * UM)))
        assert turning_angle(loop) == pytest.approx(2 * math.pi, abs=1e-9)

    def test_two_disjoint_loops(self):
        g = Grid2D.centered(60, 1.0)
        X, Y = g.coords()
        phi = np.minimum(np.hypot(X - 12, Y) - 6, np.hypot(X + 12, Y) - 6)
        loops = extract_contour(LevelSetField(g, phi))
        assert len(loops) == 2 and all(lp.closed for lp in loops)
        assert sum(lp.shoelace_area() for lp in loops) == pytest.approx(2 * math.pi * 36, rel=1e-2)

    def test_area_consistency(self):
        # cell-clipped area and polygon shoelace agree to within two cell areas
        dx = 1 * UM
        for s in (Circle(20 * UM), square(), Rectangle(60 * UM, 9 * UM, rotation=0.4)):
            f = sdf_init(s, grid_for(s, dx))
            (loop,) = extract_contour(f)
            assert abs(field_area(f) - loop.shoelace_area()) <= 2 * dx**2

    def test_reinitialize_keeps_contour(self):
        g = Grid2D.centered(60, 1.0)
        X, Y = g.coords()
        f = LevelSetField(g, 3.0 * (np.hypot(X, Y) - 15.0))
        r = reinitialize(f)
        assert field_area(r) == pytest.approx(field_area(f), rel=1e-3)
        assert r.phi[30, 30] == pytest.approx(-15.0, abs=0.05)


class TestMeasure:
    def test_circle_perimeter_and_area(self):
        _, m = measured(Circle(50 * UM), 1 * UM)
        assert m.perimeter == pytest.approx(2 * math.pi * 50 * UM, rel=1e-2)
        assert m.area == pytest.approx(math.pi * (50 * UM) ** 2, rel=1e-2)
        assert m.R_eq == pytest.approx(r_equivalent(m.area))

    def test_small_circle_totals(self):
        # 100 circles R = 5.39 um: reference total perimeter 3386.41 um
        _, m = measured(Circle(5.39 * UM), 1 * UM)
        assert 100 * m.perimeter == pytest.approx(3386.41 * UM, rel=5e-3)

    def test_empty_contour_rejected(self):
        g = Grid2D(10, 1.0)
        with pytest.raises(ValueError):
            measure([], LevelSetField(g, np.ones(g.shape)), THEO)

    def test_constant_k_integral(self):
        # on a circle K is the same at every segment, so the integral is K * p
        _, m = measured(Circle(30 * UM), 0.5 * UM)
        K = overall_k(30 * UM, m.R_eq, THEO).K
        assert np.allclose(m.K, K, rtol=2e-2)
        assert boundary_integral_k(m) == pytest.approx(K * 2 * math.pi * 30 * UM, rel=2e-2)
        assert m.flux_factor() == boundary_integral_k(m)

    def test_square_corner_enhancement(self):
        s = square()
        _, m = measured(s, 1 * UM)
        x, y = m.midpoints.T
        corner = (np.abs(x) > 0.8 * s.a) & (np.abs(y) > 0.8 * s.a)
        mid_edge = (np.abs(np.abs(x) - s.a) < 2 * UM) & (np.abs(y) < 0.1 * s.a)
        assert mid_edge.any() and corner.any()
        assert m.K[corner].max() >= 2 * m.K[mid_edge].mean()

    def test_isoperimetric_shapes(self):
        for s in (Circle(20 * UM), square(), Superellipse(30 * UM, 10 * UM, 3.0), Rectangle(50 * UM, 8 * UM)):
            _, m = measured(s, 1 * UM)
            assert m.perimeter**2 >= 4 * math.pi * m.area * (1 - 1e-9)

    @settings(max_examples=15, deadline=None)
    @given(
        st.floats(6.0, 20.0), st.floats(0.3, 1.0), st.floats(2.0, 12.0), st.floats(0.0, math.pi),
    )
    def test_isoperimetric_property(self, a, ratio, n, rot):
        s = Superellipse(a * UM, a * ratio * UM, n, rotation=rot)
        _, m = measured(s, 0.5 * UM)
        assert m.perimeter**2 >= 4 * math.pi * m.area


class TestExports:
    def test_csv_and_json(self, tmp_path):
        f = sdf_init(Circle(4.0), Grid2D.centered(16, 1.0))
        rows = [(0, 0.0, extract_contour(f))]
        write_contours_csv(tmp_path / "c.csv", rows)
        write_contours_json(tmp_path / "c.json", rows)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "particle_id,t,loop,x,y"
        assert len(lines) - 1 == len(rows[0][2][0])
        payload = json.loads((tmp_path / "c.json").read_text())
        assert payload[0]["loops"][0]["closed"] is True
        assert np.allclose(payload[0]["loops"][0]["points"], rows[0][2][0].points)
