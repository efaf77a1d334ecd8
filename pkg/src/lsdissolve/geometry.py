"""Particle shapes, signed-distance initialisation and zero-contour measurement."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .levelset import Grid2D, LevelSetField, PaddingViolation, curvature_field
from .physchem import DrugParams, _delta_u, _k_d_coef, _k_d_flat, _r_plane, _transfer, r_equivalent

BASE_SAMPLES = 4096
REFINE = 4
PADDING_CELLS = 3


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Shape:
    center: tuple[float, float] = field(default=(0.0, 0.0), kw_only=True)
    rotation: float = field(default=0.0, kw_only=True)

    kind = "shape"

    def _local_boundary(self, m: int) -> np.ndarray:
        raise NotImplementedError

    def area(self) -> float:
        raise NotImplementedError

    def boundary(self, m: int = BASE_SAMPLES) -> np.ndarray:
        """Closed, counter-clockwise polyline (last point != first) in world coordinates."""
        pts = self._local_boundary(m)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = pts @ np.array([[c, s], [-s, c]])
        return rot + np.asarray(self.center)

    def dense_boundary(self) -> np.ndarray:
        """Boundary sampled at BASE_SAMPLES points, segments longer than the
        mean spacing subdivided REFINE times."""
        pts = self.boundary(BASE_SAMPLES)
        nxt = np.roll(pts, -1, axis=0)
        seg = np.linalg.norm(nxt - pts, axis=1)
        long = seg > 1.5 * seg.mean()
        if not long.any():
            return pts
        out = []
        fractions = np.arange(REFINE) / REFINE
        for a, b, split in zip(pts, nxt, long):
            if split:
                out.extend(a + f * (b - a) for f in fractions)
            else:
                out.append(a)
        return np.array(out)

    def bbox(self) -> tuple[float, float, float, float]:
        pts = self.boundary(1024)
        return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()

    def extent(self) -> float:
        """Largest bounding-box side."""
        x0, y0, x1, y1 = self.bbox()
        return max(x1 - x0, y1 - y0)

    def width(self) -> float:
        """Smallest unrotated width (the 'across' size used for grid resolution)."""
        raise NotImplementedError

    def perimeter(self) -> float:
        pts = self.dense_boundary()
        return float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())

    def scaled(self, factor: float) -> Shape:
        raise NotImplementedError


@dataclass(frozen=True)
class Circle(Shape):
    radius: float
    kind = "circle"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    def _local_boundary(self, m):
        theta = 2 * np.pi * np.arange(m) / m
        return self.radius * np.column_stack([np.cos(theta), np.sin(theta)])

    def area(self):
        return math.pi * self.radius**2

    def perimeter(self):
        return 2 * math.pi * self.radius

    def width(self):
        return 2 * self.radius

    def scaled(self, factor):
        return Circle(self.radius * factor, center=self.center, rotation=self.rotation)


@dataclass(frozen=True)
class Superellipse(Shape):
    """``|x/a|^n + |y/b|^n = 1`` with semi-axes a, b (n = 2 is an ellipse)."""

    a: float
    b: float
    n: float = 2.0
    kind = "superellipse"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"superellipse semi-axes must be positive, got a={self.a}, b={self.b}")
        if self.n < 2:
            raise ValueError(f"superellipse exponent must be >= 2, got {self.n}")

    def radius_at(self, theta):
        c = np.abs(np.cos(theta) / self.a) ** self.n
        s = np.abs(np.sin(theta) / self.b) ** self.n
        return (c + s) ** (-1.0 / self.n)

    def _local_boundary(self, m):
        theta = 2 * np.pi * np.arange(m) / m
        r = self.radius_at(theta)
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    def area(self):
        n = self.n
        return 4 * self.a * self.b * math.gamma(1 + 1 / n) ** 2 / math.gamma(1 + 2 / n)

    def width(self):
        return 2 * min(self.a, self.b)

    def scaled(self, factor):
        return Superellipse(self.a * factor, self.b * factor, self.n, center=self.center, rotation=self.rotation)


@dataclass(frozen=True)
class Rectangle(Shape):
    w: float
    h: float
    kind = "rectangle"

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"rectangle sides must be positive, got w={self.w}, h={self.h}")

    def _local_boundary(self, m):
        # arc-length sampling with the four corners included exactly
        hw, hh = self.w / 2, self.h / 2
        corners = np.array([[hw, -hh], [hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]])
        sides = np.array([self.h, self.w, self.h, self.w])
        counts = np.maximum(1, np.round(m * sides / sides.sum()).astype(int))
        pieces = []
        for k in range(4):
            f = np.arange(counts[k]) / counts[k]
            pieces.append(corners[k] + f[:, None] * (corners[k + 1] - corners[k]))
        return np.vstack(pieces)

    def area(self):
        return self.w * self.h

    def perimeter(self):
        return 2 * (self.w + self.h)

    def width(self):
        return min(self.w, self.h)

    def scaled(self, factor):
        return Rectangle(self.w * factor, self.h * factor, center=self.center, rotation=self.rotation)


def superellipse_polar_area(shape: Superellipse, samples: int = 200_001) -> float:
    """Area from the polar equation by composite Simpson quadrature of r(theta)^2 / 2."""
    from scipy.integrate import simpson

    theta = np.linspace(0.0, 2 * np.pi, samples)
    return float(0.5 * simpson(shape.radius_at(theta) ** 2, x=theta))


# ---------------------------------------------------------------------------
# signed distance initialisation


@njit(cache=True, nogil=True, error_model="numpy")
def _inside(px, py, poly):
    """Even-odd ray casting (ray toward +x)."""
    inside = np.zeros(px.shape[0], dtype=np.bool_)
    m = poly.shape[0]
    for k in range(px.shape[0]):
        x = px[k]
        y = py[k]
        c = False
        j = m - 1
        for i in range(m):
            yi = poly[i, 1]
            yj = poly[j, 1]
            if (yi > y) != (yj > y):
                xc = poly[i, 0] + (y - yi) * (poly[j, 0] - poly[i, 0]) / (yj - yi)
                if x < xc:
                    c = not c
            j = i
        inside[k] = c
    return inside


def _segment_distance(p, a, b):
    ab = b - a
    # zero-length segments (contour through a node) fall back to the endpoint
    den = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(den > 0, den, 1.0), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def check_shape_padding(shape: Shape, grid: Grid2D, cells: int = PADDING_CELLS) -> None:
    x0, y0, x1, y1 = shape.bbox()
    lo = np.asarray(grid.origin) + cells * grid.dx
    hi = np.asarray(grid.origin) + (grid.n - cells) * grid.dx
    if x0 <= lo[0] or y0 <= lo[1] or x1 >= hi[0] or y1 >= hi[1]:
        raise PaddingViolation(
            f"{shape.kind} does not fit inside the grid with {cells}-cell padding"
        )


def _signed_distance(loops: list[np.ndarray], grid: Grid2D) -> np.ndarray:
    """Distance to the union of closed polylines, negative inside (even-odd rule)."""
    X, Y = grid.coords()
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    dist = np.full(len(nodes), np.inf)
    inside = np.zeros(len(nodes), dtype=bool)
    for poly in loops:
        _, idx = cKDTree(poly).query(nodes)
        m = len(poly)
        prev, nxt = poly[(idx - 1) % m], poly[(idx + 1) % m]
        d = np.minimum(_segment_distance(nodes, prev, poly[idx]), _segment_distance(nodes, poly[idx], nxt))
        dist = np.minimum(dist, d)
        x0, y0, x1, y1 = poly[:, 0].min(), poly[:, 1].min(), poly[:, 0].max(), poly[:, 1].max()
        in_box = (nodes[:, 0] >= x0) & (nodes[:, 0] <= x1) & (nodes[:, 1] >= y0) & (nodes[:, 1] <= y1)
        inside[in_box] ^= _inside(nodes[in_box, 0].copy(), nodes[in_box, 1].copy(), poly)
    return np.where(inside, -dist, dist).reshape(grid.shape)


def sdf_init(shape: Shape, grid: Grid2D) -> LevelSetField:
    """Signed distance to the shape boundary: negative inside, positive outside."""
    check_shape_padding(shape, grid)
    return LevelSetField(grid, _signed_distance([shape.dense_boundary()], grid))


# ---------------------------------------------------------------------------
# marching squares


@njit(cache=True, nogil=True, error_model="numpy")
def _edge_point(pa, pb, xa, ya, xb, yb):
    t = pa / (pa - pb)
    return xa + t * (xb - xa), ya + t * (yb - ya)


@njit(cache=True, nogil=True, error_model="numpy")
def _shoelace(xs, ys, k):
    s = 0.0
    for a in range(k):
        b = (a + 1) % k
        s += xs[a] * ys[b] - xs[b] * ys[a]
    return 0.5 * s


@njit(cache=True, nogil=True, error_model="numpy")
def _marching_squares(phi):
    """Zero-contour segments and the area of {phi < 0}, in cell units.

    Returns (segs, edges, count, area): ``segs[k] = (x0, y0, x1, y1)`` in
    index coordinates, oriented with the interior on the left; ``edges[k]``
    holds the ids of the start and end grid edges, used to chain segments.
    Saddle cells are resolved by the sign of the cell-average of phi.
    """
    m = phi.shape[0]
    n = m - 1
    segs = np.empty((2 * n * n, 4))
    edges = np.empty((2 * n * n, 2), dtype=np.int64)
    count = 0
    area = 0.0
    cx = np.empty(4)
    cy = np.empty(4)
    cv = np.empty(4)
    ex = np.empty(4)
    ey = np.empty(4)
    eid = np.empty(4, dtype=np.int64)
    has = np.empty(4, dtype=np.bool_)
    px = np.empty(8)
    py = np.empty(8)
    for i in range(n):
        for j in range(n):
            # corners counter-clockwise: (i,j) (i+1,j) (i+1,j+1) (i,j+1)
            cv[0] = phi[i, j]
            cv[1] = phi[i + 1, j]
            cv[2] = phi[i + 1, j + 1]
            cv[3] = phi[i, j + 1]
            nin = 0
            for c in range(4):
                if cv[c] < 0.0:
                    nin += 1
            if nin == 4:
                area += 1.0
                continue
            if nin == 0:
                continue
            cx[0] = i
            cy[0] = j
            cx[1] = i + 1
            cy[1] = j
            cx[2] = i + 1
            cy[2] = j + 1
            cx[3] = i
            cy[3] = j + 1
            # edge e connects corner e and corner e+1
            eid[0] = 2 * (i * m + j)
            eid[1] = 2 * ((i + 1) * m + j) + 1
            eid[2] = 2 * (i * m + j + 1)
            eid[3] = 2 * (i * m + j) + 1
            for e in range(4):
                a = e
                b = (e + 1) % 4
                has[e] = (cv[a] < 0.0) != (cv[b] < 0.0)
                if has[e]:
                    ex[e], ey[e] = _edge_point(cv[a], cv[b], cx[a], cy[a], cx[b], cy[b])

            saddle = nin == 2 and (cv[0] < 0.0) == (cv[2] < 0.0)
            if saddle:
                connected = 0.25 * (cv[0] + cv[1] + cv[2] + cv[3]) < 0.0
                # each segment cuts off one corner: the outside corners when
                # the interior is connected through the cell centre
                for c in range(4):
                    inside_c = cv[c] < 0.0
                    if inside_c == connected:
                        continue
                    before = (c + 3) % 4
                    if inside_c:
                        _emit(segs, edges, count, ex, ey, eid, c, before)
                    else:
                        _emit(segs, edges, count, ex, ey, eid, before, c)
                    count += 1
                if connected:
                    k = 0
                    for c in range(4):
                        if cv[c] < 0.0:
                            px[k] = cx[c]
                            py[k] = cy[c]
                            k += 1
                        px[k] = ex[c]
                        py[k] = ey[c]
                        k += 1
                    area += _shoelace(px, py, k)
                else:
                    for c in range(4):
                        if cv[c] < 0.0:
                            ea = (c + 3) % 4
                            px[0] = cx[c]
                            py[0] = cy[c]
                            px[1] = ex[c]
                            py[1] = ey[c]
                            px[2] = ex[ea]
                            py[2] = ey[ea]
                            area += _shoelace(px, py, 3)
                continue

            # walking the cell CCW, the segment starts where we leave the
            # interior and ends where we re-enter it
            start = -1
            end = -1
            for e in range(4):
                if has[e]:
                    if cv[e] < 0.0:
                        start = e
                    else:
                        end = e
            _emit(segs, edges, count, ex, ey, eid, start, end)
            count += 1
            k = 0
            for c in range(4):
                if cv[c] < 0.0:
                    px[k] = cx[c]
                    py[k] = cy[c]
                    k += 1
                if has[c]:
                    px[k] = ex[c]
                    py[k] = ey[c]
                    k += 1
            area += _shoelace(px, py, k)
    return segs, edges, count, area


@njit(cache=True, nogil=True, error_model="numpy")
def _emit(segs, edges, k, ex, ey, eid, a, b):
    segs[k, 0] = ex[a]
    segs[k, 1] = ey[a]
    segs[k, 2] = ex[b]
    segs[k, 3] = ey[b]
    edges[k, 0] = eid[a]
    edges[k, 1] = eid[b]


@njit(cache=True, nogil=True, error_model="numpy")
def _bilinear(kappa, x, y):
    m = kappa.shape[0]
    i = min(max(int(math.floor(x)), 0), m - 2)
    j = min(max(int(math.floor(y)), 0), m - 2)
    fx = x - i
    fy = y - j
    return (
        kappa[i, j] * (1 - fx) * (1 - fy)
        + kappa[i + 1, j] * fx * (1 - fy)
        + kappa[i, j + 1] * (1 - fx) * fy
        + kappa[i + 1, j + 1] * fx * fy
    )


@njit(cache=True, nogil=True, error_model="numpy")
def _radius(kap, R_min, R_max):
    """Curvature radius clamped to [R_min, R_max]; flat or concave points get R_max.

    Sending kappa <= 0 to R_max keeps K continuous in kappa: the flat
    branch (sigma = 1) sits well above K(R_plane), and the sign of a
    near-zero curvature is grid noise on straight sides.
    """
    if kap > 0.0:
        return min(max(1.0 / kap, R_min), R_max)
    return R_max


@njit(cache=True, nogil=True, error_model="numpy")
def _segment_transfer(segs, count, kappa, dx, p, R_eq, R_min):
    """Per-segment length, midpoint curvature, clamped radius and K."""
    length = np.empty(count)
    kap = np.empty(count)
    rad = np.empty(count)
    K = np.empty(count)
    dU = _delta_u(R_eq, p)
    R_plane = _r_plane(R_eq, p)
    k_flat = _k_d_flat(R_eq, dU, p)
    c_d = _k_d_coef(dU, p)
    for s in range(count):
        x0, y0, x1, y1 = segs[s, 0], segs[s, 1], segs[s, 2], segs[s, 3]
        length[s] = math.hypot(x1 - x0, y1 - y0) * dx
        kap[s] = _bilinear(kappa, 0.5 * (x0 + x1), 0.5 * (y0 + y1))
        rad[s] = _radius(kap[s], R_min, R_plane)
        K[s] = _transfer(rad[s], p, R_plane, c_d, k_flat)[3]
    return length, kap, rad, K


# ---------------------------------------------------------------------------
# public API


@dataclass
class ContourPolyline:
    points: np.ndarray  # (k, 2) world coordinates
    closed: bool

    def __len__(self) -> int:
        return len(self.points)

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def shoelace_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return float(0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


@dataclass
class CellContour:
    """Unordered marching-squares output for one field (index coordinates)."""

    segs: np.ndarray
    edges: np.ndarray
    area_cells: float

    @classmethod
    def of(cls, phi: np.ndarray) -> CellContour:
        segs, edges, count, area = _marching_squares(phi)
        return cls(segs[:count], edges[:count], area)

    def __len__(self) -> int:
        return len(self.segs)


def _chain(cells: CellContour) -> list[tuple[np.ndarray, bool]]:
    starts = {int(e): k for k, e in enumerate(cells.edges[:, 0])}
    used = np.zeros(len(cells), dtype=bool)
    loops = []
    for k0 in range(len(cells)):
        if used[k0]:
            continue
        order = []
        k = k0
        closed = False
        while True:
            used[k] = True
            order.append(k)
            k = starts.get(int(cells.edges[k, 1]), -1)
            if k == k0:
                closed = True
                break
            if k < 0 or used[k]:
                break
        seg = cells.segs[order]
        pts = np.vstack([seg[:, :2], seg[-1:, 2:]])
        loops.append((pts, closed))
    return loops


def extract_contour(field: LevelSetField) -> list[ContourPolyline]:
    """Ordered zero-level polylines; an empty list means no sign change anywhere.

    Each closed loop repeats its first point at the end and runs
    counter-clockwise around the particle interior.
    """
    cells = CellContour.of(field.phi)
    g = field.grid
    origin = np.asarray(g.origin)
    return [ContourPolyline(origin + g.dx * pts, closed) for pts, closed in _chain(cells)]


@dataclass
class ContourMeasure:
    perimeter: float
    area: float
    R_eq: float
    midpoints: np.ndarray
    seg_length: np.ndarray
    kappa: np.ndarray
    R: np.ndarray
    K: np.ndarray

    def flux_factor(self) -> float:
        return boundary_integral_k(self)


def reinitialize(field: LevelSetField) -> LevelSetField:
    """Rebuild phi as the signed distance to its current zero contour.

    Not used by default; the engine only calls it through an explicit hook.
    """
    loops = [c.points[:-1] if c.closed else c.points for c in extract_contour(field)]
    loops = [lp for lp in loops if len(lp) >= 3]
    if not loops:
        return field.copy()
    return LevelSetField(field.grid, _signed_distance(loops, field.grid))


def field_area(field: LevelSetField) -> float:
    """Area of {phi < 0}: full interior cells plus clipped partial cells."""
    return CellContour.of(field.phi).area_cells * field.grid.dx**2


def measure(
    contours: list[ContourPolyline],
    field: LevelSetField,
    drug: DrugParams,
    kappa: np.ndarray | None = None,
    R_min: float | None = None,
) -> ContourMeasure:
    """Perimeter, area and per-segment K along the given contours.

    Curvature is taken from the nodes by bilinear interpolation at segment
    midpoints and clamped to [``R_min``, R_plane] (``R_min`` defaults to
    dx/2); flat or concave points use R_plane.
    """
    if not contours:
        raise ValueError("cannot measure an empty contour")
    g = field.grid
    if kappa is None:
        kappa = curvature_field(field, fill=True)
    if R_min is None:
        R_min = 0.5 * g.dx
    origin = np.asarray(g.origin)
    segs = np.vstack(
        [np.hstack([(c.points[:-1] - origin) / g.dx, (c.points[1:] - origin) / g.dx]) for c in contours]
    )
    area = field_area(field)
    R_eq = r_equivalent(area)
    if R_eq > 0:
        length, kap, rad, K = _segment_transfer(segs, len(segs), kappa, g.dx, drug.as_array(), R_eq, R_min)
    else:
        length = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]) * g.dx
        kap = rad = K = np.zeros(len(segs))
    mid = origin + g.dx * 0.5 * (segs[:, :2] + segs[:, 2:])
    return ContourMeasure(float(length.sum()), area, R_eq, mid, length, kap, rad, K)


def boundary_integral_k(m: ContourMeasure) -> float:
    """Midpoint-rule integral of K along the contour."""
    return float(np.sum(m.K * m.seg_length))


def turning_angle(poly: ContourPolyline) -> float:
    """Total signed turning of a closed polyline (2*pi for a CCW simple loop)."""
    d = np.diff(poly.points, axis=0)
    d = d[np.linalg.norm(d, axis=1) > 0]
    ang = np.arctan2(d[:, 1], d[:, 0])
    turn = np.diff(np.append(ang, ang[0]))
    return float(np.sum((turn + np.pi) % (2 * np.pi) - np.pi))


# ---------------------------------------------------------------------------
# exports


def write_contours_csv(path: str | Path, rows: list[tuple[int, float, list[ContourPolyline]]]) -> None:
    """CSV rows ``particle_id, t, loop, x, y`` for each snapshot."""
    with open(path, "w") as fh:
        fh.write("particle_id,t,loop,x,y\n")
        for pid, t, loops in rows:
            for k, loop in enumerate(loops):
                for x, y in loop.points:
                    fh.write(f"{pid},{float(t)!r},{k},{float(x)!r},{float(y)!r}\n")


def write_contours_json(path: str | Path, rows: list[tuple[int, float, list[ContourPolyline]]]) -> None:
    payload = [
        {
            "particle_id": pid,
            "t": t,
            "loops": [{"closed": loop.closed, "points": loop.points.tolist()} for loop in loops],
        }
        for pid, t, loops in rows
    ]
    Path(path).write_text(json.dumps(payload))
