"""Gas container geometry: boundary primitives, measures and ray queries.

The container is a tube ``[0, 1] x P`` along the x axis (the piston moves
along x) with an end region glued to each side.  ``P`` is the interval
``[0, ell]`` in 2D and the rectangle ``[0, a] x [0, b]`` in 3D.  End regions
are built from four primitive kinds:

* 2D: :class:`Segment`, :class:`Arc`
* 3D: :class:`Facet` (convex polygon, optionally with one circular hole),
  :class:`SpherePatch` (spherical cap around an axis)

An empty cap means the tube is closed by a flat wall.  All intersection
queries are solved in closed form (linear for flats, quadratic for arcs and
spheres); the kernels at the bottom of this module are numba-compiled when
available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from ._jit import njit

__all__ = [
    "Arc",
    "BoundaryPiece",
    "Container",
    "Facet",
    "GeometryError",
    "Hit",
    "PackedBoundary",
    "Segment",
    "SpherePatch",
    "dome_cap",
    "first_hit",
    "specular_reflect",
    "subdomain_measure",
]

# kind codes shared with the kernels
SEGMENT = 0
ARC = 1
FACET = 2
SPHERE = 3

NPAR = 16
MAXV = 8

CORNER_TOL = 1e-9  # arc-length distance to a piece edge that counts as a corner hit
GRAZE_TOL = 1e-9  # |cos(phi)| below this is a tangential hit
EXTENT_SLACK = 1e-12
T_MIN = 1e-14

ROLE_CAP = 0
ROLE_WALL = 1
ROLE_PISTON = 2


class GeometryError(ValueError):
    """Invalid or corrupted container geometry."""


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Segment:
    p0: tuple[float, float]
    p1: tuple[float, float]
    kind: str = field(default="segment", init=False)

    def __post_init__(self):
        if math.dist(self.p0, self.p1) <= 0.0:
            raise GeometryError("segment endpoints must be distinct")

    @property
    def length(self) -> float:
        return math.dist(self.p0, self.p1)

    @property
    def start(self):
        return self.p0

    @property
    def end(self):
        return self.p1

    def reversed(self) -> Segment:
        return Segment(self.p1, self.p0)

    def flux(self) -> float:
        # integral of (x dy - y dx) along the segment
        (x0, y0), (x1, y1) = self.p0, self.p1
        return x0 * y1 - x1 * y0

    def sample_points(self):
        return [self.p0, self.p1]

    def pack(self):
        (x0, y0), (x1, y1) = self.p0, self.p1
        L = self.length
        tx, ty = (x1 - x0) / L, (y1 - y0) / L
        par = np.zeros(NPAR)
        # inward normal = left normal of the (counterclockwise) traversal
        par[:9] = (x0, y0, x1, y1, tx, ty, -ty, tx, L)
        return SEGMENT, par, np.zeros((MAXV, 2)), 0


@dataclass(frozen=True)
class Arc:
    """Circular arc traversed from ``theta0`` to ``theta1`` (radians, signed sweep)."""

    center: tuple[float, float]
    radius: float
    theta0: float
    theta1: float
    kind: str = field(default="arc", init=False)

    def __post_init__(self):
        if not self.radius > 0.0:
            raise GeometryError("arc radius must be positive")
        sweep = self.theta1 - self.theta0
        if sweep == 0.0 or abs(sweep) > 2.0 * math.pi + 1e-12:
            raise GeometryError("arc sweep must be non-zero and at most 2*pi")

    @property
    def sweep(self) -> float:
        return self.theta1 - self.theta0

    @property
    def length(self) -> float:
        return self.radius * abs(self.sweep)

    def _point(self, th):
        return (self.center[0] + self.radius * math.cos(th), self.center[1] + self.radius * math.sin(th))

    @property
    def start(self):
        return self._point(self.theta0)

    @property
    def end(self):
        return self._point(self.theta1)

    def reversed(self) -> Arc:
        return Arc(self.center, self.radius, self.theta1, self.theta0)

    def flux(self) -> float:
        cx, cy = self.center
        R, a, b = self.radius, self.theta0, self.theta1
        return R * R * (b - a) + R * cx * (math.sin(b) - math.sin(a)) - R * cy * (math.cos(b) - math.cos(a))

    def sample_points(self):
        pts = [self.start, self.end]
        lo, hi = sorted((self.theta0, self.theta1))
        k = math.ceil(lo / (0.5 * math.pi))
        while k * 0.5 * math.pi <= hi:
            pts.append(self._point(k * 0.5 * math.pi))
            k += 1
        return pts

    def pack(self):
        par = np.zeros(NPAR)
        sgn = 1.0 if self.sweep > 0 else -1.0
        par[:7] = (self.center[0], self.center[1], self.radius, self.theta0, self.sweep, sgn, self.length)
        return ARC, par, np.zeros((MAXV, 2)), 0


@dataclass(frozen=True)
class Facet:
    """Planar convex polygon in the frame ``origin + u*U + w*W``.

    ``polygon`` lists (U, W) vertices counterclockwise; ``normal`` is the
    inward normal of the domain.  An optional circular hole ``(u, w, r)``
    is cut out of the polygon.
    """

    origin: tuple[float, float, float]
    normal: tuple[float, float, float]
    u: tuple[float, float, float]
    w: tuple[float, float, float]
    polygon: tuple[tuple[float, float], ...]
    hole: tuple[float, float, float] | None = None
    kind: str = field(default="facet", init=False)

    def __post_init__(self):
        if not 3 <= len(self.polygon) <= MAXV:
            raise GeometryError(f"facet polygon needs 3..{MAXV} vertices")
        if _polygon_area(self.polygon) <= 0.0:
            raise GeometryError("facet polygon must be counterclockwise with positive area")

    @property
    def area(self) -> float:
        a = _polygon_area(self.polygon)
        if self.hole is not None:
            a -= math.pi * self.hole[2] ** 2
        return a

    length = area

    def flux(self) -> float:
        # integral of p . n_out over the facet (p . n is constant on the plane)
        return -float(np.dot(self.origin, self.normal)) * self.area

    def sample_points(self):
        o, u, w = map(np.asarray, (self.origin, self.u, self.w))
        return [tuple(o + pu * u + pw * w) for pu, pw in self.polygon]

    def pack(self):
        par = np.zeros(NPAR)
        par[0:3] = self.origin
        par[3:6] = self.normal
        par[6:9] = self.u
        par[9:12] = self.w
        if self.hole is not None:
            par[12:15] = self.hole
        par[15] = self.area
        verts = np.zeros((MAXV, 2))
        verts[: len(self.polygon)] = self.polygon
        return FACET, par, verts, len(self.polygon)


@dataclass(frozen=True)
class SpherePatch:
    """Spherical cap ``{p : (p - c).axis >= R*cos_limit}`` of a sphere.

    ``concave`` means the domain lies inside the sphere.
    """

    center: tuple[float, float, float]
    radius: float
    axis: tuple[float, float, float]
    cos_limit: float
    concave: bool = True
    kind: str = field(default="sphere", init=False)

    def __post_init__(self):
        if not self.radius > 0.0:
            raise GeometryError("sphere radius must be positive")
        if not -1.0 <= self.cos_limit < 1.0:
            raise GeometryError("cos_limit must lie in [-1, 1)")

    @property
    def area(self) -> float:
        return 2.0 * math.pi * self.radius**2 * (1.0 - self.cos_limit)

    length = area

    def flux(self) -> float:
        R, c, a = self.radius, np.asarray(self.center), np.asarray(self.axis)
        sin2 = 1.0 - self.cos_limit**2
        val = float(np.dot(c, a)) * math.pi * R * R * sin2 + R * self.area
        return val if self.concave else -val

    def sample_points(self):
        c, a = np.asarray(self.center), np.asarray(self.axis)
        return [tuple(c + self.radius * a)]

    def pack(self):
        par = np.zeros(NPAR)
        a = np.asarray(self.axis, dtype=float)
        ref = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = ref - np.dot(ref, a) * a
        e1 /= np.linalg.norm(e1)
        par[0:3] = self.center
        par[3] = self.radius
        par[4:7] = a
        par[7] = self.cos_limit
        par[8] = 1.0 if self.concave else -1.0
        par[9] = self.area
        par[10:13] = e1
        return SPHERE, par, np.zeros((MAXV, 2)), 0


BoundaryPiece = Union[Segment, Arc, Facet, SpherePatch]


def _polygon_area(poly) -> float:
    s = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % len(poly)]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def dome_cap(side: int, size: tuple[float, float], base_radius: float, height: float,
             base_center: tuple[float, float] | None = None) -> tuple[Facet, SpherePatch]:
    """End region for a 3D box tube: flat end wall with a shallow spherical dome.

    The dome's circular base (radius ``base_radius``) sits on the end face of
    the tube and bulges ``height`` outwards.
    """
    a, b = size
    yc, zc = base_center if base_center is not None else (0.5 * a, 0.5 * b)
    if not 0.0 < height <= base_radius:
        raise GeometryError("dome height must lie in (0, base_radius] (shallow cap)")
    if min(yc - base_radius, a - yc - base_radius, zc - base_radius, b - zc - base_radius) <= 0.0:
        raise GeometryError("dome base must lie strictly inside the tube cross-section")
    R = (base_radius**2 + height**2) / (2.0 * height)
    x_face = 0.0 if side == 1 else 1.0
    out = -1.0 if side == 1 else 1.0  # direction the dome bulges
    end = _end_facet(side, size)
    end = Facet(end.origin, end.normal, end.u, end.w, end.polygon, hole=(yc, zc, base_radius))
    center = (x_face - out * (R - height), yc, zc)
    sphere = SpherePatch(center, R, (out, 0.0, 0.0), (R - height) / R, concave=True)
    return end, sphere


def _end_facet(side: int, size) -> Facet:
    a, b = size
    if side == 1:
        # plane x = 0, inward normal +x; (U, W) = (y, z) is counterclockwise seen from +x
        return Facet((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
                     ((0.0, 0.0), (a, 0.0), (a, b), (0.0, b)))
    return Facet((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
                 ((0.0, 0.0), (a, 0.0), (a, b), (0.0, b)))


# ---------------------------------------------------------------------------
# packed boundary (what the kernels see)


@dataclass(frozen=True, eq=False)
class PackedBoundary:
    """Array form of a closed boundary, consumed by the numba kernels."""

    dim: int
    kinds: np.ndarray
    par: np.ndarray
    verts: np.ndarray
    nverts: np.ndarray
    roles: np.ndarray
    sizes: np.ndarray  # length (2D) or area (3D) of each piece
    offsets: np.ndarray  # cumulative sizes (2D arc-length coordinate r)
    piston: int  # index of the piston piece, -1 if absent

    @classmethod
    def from_pieces(cls, pieces: Sequence[BoundaryPiece], roles: Sequence[int] | None = None,
                    piston: int = -1) -> PackedBoundary:
        n = len(pieces)
        kinds = np.zeros(n, dtype=np.int64)
        par = np.zeros((n, NPAR))
        verts = np.zeros((n, MAXV, 2))
        nverts = np.zeros(n, dtype=np.int64)
        sizes = np.zeros(n)
        dims = set()
        for i, p in enumerate(pieces):
            kinds[i], par[i], verts[i], nverts[i] = p.pack()
            sizes[i] = p.length
            dims.add(2 if kinds[i] in (SEGMENT, ARC) else 3)
        if len(dims) != 1:
            raise GeometryError("cannot mix 2D and 3D pieces")
        roles_arr = np.asarray(roles if roles is not None else [ROLE_CAP] * n, dtype=np.int64)
        offsets = np.concatenate([[0.0], np.cumsum(sizes)])
        return cls(dims.pop(), kinds, par, verts, nverts, roles_arr, sizes, offsets, piston)

    @property
    def total_size(self) -> float:
        return float(self.offsets[-1])

    def __len__(self):
        return len(self.kinds)

    def arrays(self):
        return self.kinds, self.par, self.verts, self.nverts


# ---------------------------------------------------------------------------
# container


@dataclass(frozen=True, eq=False)
class Container:
    """Tube ``[0,1] x P`` with end regions; immutable after construction.

    ``cross_section`` is ``ell`` (2D) or ``(a, b)`` (3D).  ``left_cap`` and
    ``right_cap`` are sequences of boundary pieces; an empty cap closes the
    tube with a flat wall.
    """

    dimension: int
    cross_section: float | tuple[float, float]
    left_cap: tuple[BoundaryPiece, ...] = ()
    right_cap: tuple[BoundaryPiece, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise GeometryError("dimension must be 2 or 3")
        if self.dimension == 2:
            ell = float(self.cross_section)
            if not ell > 0:
                raise GeometryError("tube cross-section length must be positive")
            object.__setattr__(self, "cross_section", ell)
            left = self.left_cap or (Segment((0.0, ell), (0.0, 0.0)),)
            right = self.right_cap or (Segment((1.0, 0.0), (1.0, ell)),)
            left = _chain(left, (0.0, ell), (0.0, 0.0), "left_cap")
            right = _chain(right, (1.0, 0.0), (1.0, ell), "right_cap")
            iface_l, iface_r = Segment((0.0, 0.0), (0.0, ell)), Segment((1.0, ell), (1.0, 0.0))
        else:
            a, b = (float(v) for v in self.cross_section)
            if not (a > 0 and b > 0):
                raise GeometryError("tube cross-section sides must be positive")
            object.__setattr__(self, "cross_section", (a, b))
            left = tuple(self.left_cap) or (_end_facet(1, (a, b)),)
            right = tuple(self.right_cap) or (_end_facet(2, (a, b)),)
            # tube openings, normals pointing into the end regions
            rect = _end_facet(1, (a, b))
            iface_l = Facet((0.0, 0.0, 0.0), (-1.0, 0.0, 0.0), rect.u, rect.w, rect.polygon)
            iface_r = Facet((1.0, 0.0, 0.0), (1.0, 0.0, 0.0), rect.u, rect.w, rect.polygon)
        object.__setattr__(self, "left_cap", tuple(left))
        object.__setattr__(self, "right_cap", tuple(right))
        d = self.dimension
        vols = []
        for cap, iface in ((left, iface_l), (right, iface_r)):
            vol = (sum(p.flux() for p in cap) + iface.flux()) / d
            if vol < -1e-12:
                raise GeometryError("end region is inside-out (wrong side of the tube)")
            vols.append(max(vol, 0.0))
        object.__setattr__(self, "_cap_measure", tuple(vols))
        object.__setattr__(self, "_cap_boundary", (sum(p.length for p in left), sum(p.length for p in right)))
        for side in (1, 2):
            cap = left if side == 1 else right
            for pt in (q for p in cap for q in p.sample_points()):
                x = pt[0]
                if (side == 1 and x > 1e-9) or (side == 2 and x < 1.0 - 1e-9):
                    raise GeometryError(f"{'left' if side == 1 else 'right'} cap crosses into the tube")
        if d == 3:
            self._probe_closure()

    # -- presets ----------------------------------------------------------

    @classmethod
    def rectangle(cls, ell: float = 1.0) -> Container:
        return cls(2, ell, name="rectangle")

    @classmethod
    def stadium(cls, ell: float = 1.0, left: bool = True, right: bool = True) -> Container:
        """Tube closed by half-disks of radius ell/2 (Bunimovich stadium)."""
        r = 0.5 * ell
        lcap = (Arc((0.0, r), r, 0.5 * math.pi, 1.5 * math.pi),) if left else ()
        rcap = (Arc((1.0, r), r, -0.5 * math.pi, 0.5 * math.pi),) if right else ()
        return cls(2, ell, lcap, rcap, name="stadium")

    @classmethod
    def box(cls, a: float = 1.0, b: float = 1.0) -> Container:
        return cls(3, (a, b), name="box")

    @classmethod
    def box_with_domes(cls, a: float = 1.0, b: float = 1.0, base_radius: float = 0.45,
                       height: float = 0.25) -> Container:
        return cls(3, (a, b), dome_cap(1, (a, b), base_radius, height),
                   dome_cap(2, (a, b), base_radius, height), name="box_with_domes")

    # -- measures ---------------------------------------------------------

    @property
    def ell(self) -> float:
        """Piston cross-measure: length (2D) or area (3D)."""
        if self.dimension == 2:
            return self.cross_section
        a, b = self.cross_section
        return a * b

    @property
    def _wall_perimeter(self) -> float:
        if self.dimension == 2:
            return 2.0
        a, b = self.cross_section
        return 2.0 * (a + b)

    def subdomain_measure(self, side: int, Q: float) -> float:
        """Area (2D) or volume (3D) of the subdomain on ``side`` for piston at ``Q``."""
        _check_side_q(side, Q)
        tube = Q if side == 1 else 1.0 - Q
        return self._cap_measure[side - 1] + self.ell * tube

    def boundary_measure(self, side: int, Q: float) -> float:
        """Length (2D) or area (3D) of the subdomain boundary, piston face included."""
        _check_side_q(side, Q)
        tube = Q if side == 1 else 1.0 - Q
        return self._cap_boundary[side - 1] + self._wall_perimeter * tube + self.ell

    def cap_measure(self, side: int) -> float:
        return self._cap_measure[side - 1]

    # -- packed boundaries -----------------------------------------------

    def table(self, side: int, Q: float) -> PackedBoundary:
        """Closed boundary of the frozen subdomain (walls cut at the piston)."""
        _check_side_q(side, Q)
        return _table_cached(self, side, float(Q))

    def flight_table(self, side: int) -> PackedBoundary:
        """Static walls seen by a particle on ``side``; the piston is handled separately."""
        return _flight_cached(self, side)

    def _build_table(self, side: int, Q: float | None) -> PackedBoundary:
        x0, x1 = (0.0, 1.0) if Q is None else ((0.0, Q) if side == 1 else (Q, 1.0))
        cap = self.left_cap if side == 1 else self.right_cap
        pieces: list = []
        roles: list = []
        piston = -1
        walls = self._walls(x0, x1)
        if self.dimension == 2:
            ell = self.ell
            bottom, top = walls
            face = None
            if Q is not None:
                face = Segment((Q, 0.0), (Q, ell)) if side == 1 else Segment((Q, ell), (Q, 0.0))
            # counterclockwise traversal of the subdomain boundary
            if side == 1:
                seq = [(bottom, ROLE_WALL), (face, ROLE_PISTON), (top, ROLE_WALL)] + [(p, ROLE_CAP) for p in cap]
            else:
                seq = [(bottom, ROLE_WALL)] + [(p, ROLE_CAP) for p in cap] + [(top, ROLE_WALL), (face, ROLE_PISTON)]
        else:
            face = None
            if Q is not None:
                face = _piston_facet(side, Q, self.cross_section)
            seq = [(w, ROLE_WALL) for w in walls] + [(p, ROLE_CAP) for p in cap] + [(face, ROLE_PISTON)]
        for p, role in seq:
            if p is None:
                continue
            if role == ROLE_PISTON:
                piston = len(pieces)
            pieces.append(p)
            roles.append(role)
        return PackedBoundary.from_pieces(pieces, roles, piston)

    def _walls(self, x0: float, x1: float):
        if x1 - x0 <= 1e-15:
            return (None, None) if self.dimension == 2 else ()
        if self.dimension == 2:
            ell = self.ell
            return Segment((x0, 0.0), (x1, 0.0)), Segment((x1, ell), (x0, ell))
        a, b = self.cross_section
        L = x1 - x0
        rect = lambda p, q: ((0.0, 0.0), (p, 0.0), (p, q), (0.0, q))  # noqa: E731
        return (
            # y = 0 (inward +y), frame (z, x)
            Facet((x0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), rect(b, L)),
            # y = a (inward -y), frame (x, z)
            Facet((x0, a, 0.0), (0.0, -1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), rect(L, b)),
            # z = 0 (inward +z), frame (x, y)
            Facet((x0, 0.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), rect(L, a)),
            # z = b (inward -z), frame (y, x)
            Facet((x0, 0.0, b), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), rect(a, L)),
        )

    # -- point queries ----------------------------------------------------

    def contains(self, side: int, Q: float, point) -> bool:
        tb = self.table(side, Q)
        p = np.asarray(point, dtype=float)
        return bool(_contains(*tb.arrays(), p))

    def bounding_box(self, side: int, Q: float):
        _check_side_q(side, Q)
        pts = []
        pieces = (self.left_cap if side == 1 else self.right_cap)
        for p in pieces:
            if isinstance(p, SpherePatch):
                c = np.asarray(p.center)
                pts += [tuple(c - p.radius), tuple(c + p.radius)]
            else:
                pts += list(p.sample_points())
        x0, x1 = (0.0, Q) if side == 1 else (Q, 1.0)
        if self.dimension == 2:
            pts += [(x0, 0.0), (x1, self.ell)]
        else:
            a, b = self.cross_section
            pts += [(x0, 0.0, 0.0), (x1, a, b)]
        pts = np.asarray(pts, dtype=float)
        return pts.min(axis=0), pts.max(axis=0)

    @property
    def diameter(self) -> float:
        lo1, hi1 = self.bounding_box(1, 1.0)
        lo2, hi2 = self.bounding_box(2, 0.0)
        lo, hi = np.minimum(lo1, lo2), np.maximum(hi1, hi2)
        return float(np.linalg.norm(hi - lo))

    def _probe_closure(self, n_rays: int = 64):
        """Watertightness probe: rays from interior points must all hit the boundary."""
        rng = np.random.default_rng(12345)
        for side in (1, 2):
            tb = self._build_table(side, 0.5)
            lo, hi = np.array([0.0 if side == 1 else 0.5, 0.0, 0.0]), np.array([0.5 if side == 1 else 1.0, *self.cross_section])
            for _ in range(n_rays):
                p = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=3)
                d = rng.normal(size=3)
                d /= np.linalg.norm(d)
                t, piece, _ = _first_hit(*tb.arrays(), p, d)
                if piece < 0 or not math.isfinite(t):
                    raise GeometryError(f"boundary of side {side} is not closed (ray escaped)")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "cross_section": self.cross_section,
            "ell": self.ell,
            "cap_measure": list(self._cap_measure),
            "cap_boundary": list(self._cap_boundary),
        }


@lru_cache(maxsize=256)
def _table_cached(container: Container, side: int, Q: float) -> PackedBoundary:
    return container._build_table(side, Q)


@lru_cache(maxsize=64)
def _flight_cached(container: Container, side: int) -> PackedBoundary:
    return container._build_table(side, None)


def _piston_facet(side: int, Q: float, size) -> Facet:
    a, b = size
    if side == 1:
        # inward normal -x; frame (z, y) is counterclockwise seen from -x
        return Facet((Q, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0),
                     ((0.0, 0.0), (b, 0.0), (b, a), (0.0, a)))
    return Facet((Q, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
                 ((0.0, 0.0), (a, 0.0), (a, b), (0.0, b)))


def _check_side_q(side: int, Q: float):
    if side not in (1, 2):
        raise ValueError(f"side must be 1 or 2, got {side}")
    if not 0.0 <= Q <= 1.0:
        raise ValueError(f"piston position Q={Q} outside [0, 1]")


def _chain(pieces, start, end, label, tol=1e-9):
    """Order and orient 2D pieces into a path from ``start`` to ``end``."""
    remaining = list(pieces)
    for p in remaining:
        if not isinstance(p, (Segment, Arc)):
            raise GeometryError(f"{label}: 2D caps accept only segments and arcs")
    out = []
    cur = start
    while remaining:
        for i, p in enumerate(remaining):
            if math.dist(p.start, cur) < tol:
                break
            if math.dist(p.end, cur) < tol:
                p = p.reversed()
                break
        else:
            raise GeometryError(f"{label}: boundary is not watertight near point {cur}")
        remaining.pop(i)
        out.append(p)
        cur = p.end
    if math.dist(cur, end) > tol:
        raise GeometryError(f"{label}: boundary chain ends at {cur}, expected {end}")
    return tuple(out)


# ---------------------------------------------------------------------------
# public query wrappers


@dataclass(frozen=True)
class Hit:
    time: float
    piece: int
    point: np.ndarray
    normal: np.ndarray
    singular: bool


def subdomain_measure(container: Container, side: int, Q: float) -> float:
    return container.subdomain_measure(side, Q)


def first_hit(container: Container, side: int, Q: float, origin, direction) -> Hit:
    """First intersection of the ray ``origin + t*direction`` with the subdomain boundary.

    ``singular`` flags hits within ``CORNER_TOL`` of a piece edge or with
    ``|cos(phi)| < GRAZE_TOL``.  Raises :class:`GeometryError` when nothing is hit.
    """
    tb = container.table(side, Q)
    p = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    t, piece, singular = _first_hit(*tb.arrays(), p, d)
    if piece < 0:
        raise GeometryError("ray left the container: geometry is corrupted or origin is outside")
    h = p + t * d
    n = np.empty_like(p)
    _normal_at(tb.kinds[piece], tb.par[piece], h, n)
    return Hit(float(t), int(piece), h, n, bool(singular))


def specular_reflect(velocity, normal, tol: float = GRAZE_TOL):
    """Mirror ``velocity`` in the plane with unit ``normal``; returns ``(v', grazing)``."""
    v = np.asarray(velocity, dtype=float)
    n = np.asarray(normal, dtype=float)
    vn = float(v @ n)
    grazing = abs(vn) < tol * float(np.linalg.norm(v))
    return v - 2.0 * vn * n, grazing


# ---------------------------------------------------------------------------
# kernels


@njit
def _wrap_angle(x):
    two_pi = 2.0 * math.pi
    x = x - two_pi * math.floor(x / two_pi)
    if x >= two_pi:
        x -= two_pi
    return x


@njit
def _ray_piece(kind, par, verts, nv, p, d):
    """Smallest exiting intersection time with one piece, plus edge distance."""
    best_t = math.inf
    best_edge = math.inf
    if kind == SEGMENT:
        nx, ny = par[6], par[7]
        dn = d[0] * nx + d[1] * ny
        if dn >= 0.0:
            return best_t, best_edge
        t = ((par[0] - p[0]) * nx + (par[1] - p[1]) * ny) / dn
        if t <= T_MIN:
            return best_t, best_edge
        hx = p[0] + t * d[0]
        hy = p[1] + t * d[1]
        s = (hx - par[0]) * par[4] + (hy - par[1]) * par[5]
        L = par[8]
        if s < -EXTENT_SLACK or s > L + EXTENT_SLACK:
            return best_t, best_edge
        return t, min(s, L - s)
    if kind == ARC:
        cx, cy, R = par[0], par[1], par[2]
        th0, dth, sgn = par[3], par[4], par[5]
        ox = p[0] - cx
        oy = p[1] - cy
        a = d[0] * d[0] + d[1] * d[1]
        b = ox * d[0] + oy * d[1]
        c = ox * ox + oy * oy - R * R
        disc = b * b - a * c
        if disc < 0.0:
            return best_t, best_edge
        sq = math.sqrt(disc)
        full = abs(dth) >= 2.0 * math.pi - 1e-12
        for k in range(2):
            t = (-b - sq) / a if k == 0 else (-b + sq) / a
            if t <= T_MIN:
                continue
            hx = ox + t * d[0]
            hy = oy + t * d[1]
            # inward normal = sgn * (c - h) / R ; exiting needs d . n < 0
            dn = -sgn * (hx * d[0] + hy * d[1]) / R
            if dn >= 0.0:
                continue
            if full:
                return t, math.inf
            th = math.atan2(hy, hx)
            if dth > 0.0:
                u = _wrap_angle(th - th0)
            else:
                u = _wrap_angle(th0 - th)
            sweep = abs(dth)
            if u <= sweep + EXTENT_SLACK / R:
                return t, R * min(u, sweep - u)
            if u >= 2.0 * math.pi - EXTENT_SLACK / R:
                return t, R * (2.0 * math.pi - u)
        return best_t, best_edge
    if kind == FACET:
        nx, ny, nz = par[3], par[4], par[5]
        dn = d[0] * nx + d[1] * ny + d[2] * nz
        if dn >= 0.0:
            return best_t, best_edge
        t = ((par[0] - p[0]) * nx + (par[1] - p[1]) * ny + (par[2] - p[2]) * nz) / dn
        if t <= T_MIN:
            return best_t, best_edge
        rx = p[0] + t * d[0] - par[0]
        ry = p[1] + t * d[1] - par[1]
        rz = p[2] + t * d[2] - par[2]
        hu = rx * par[6] + ry * par[7] + rz * par[8]
        hw = rx * par[9] + ry * par[10] + rz * par[11]
        edge = _polygon_edge_distance(verts, nv, hu, hw)
        if edge < -EXTENT_SLACK:
            return best_t, best_edge
        if par[14] > 0.0:
            dh = math.hypot(hu - par[12], hw - par[13]) - par[14]
            if dh < -EXTENT_SLACK:
                return best_t, best_edge
            edge = min(edge, dh)
        return t, edge
    # SPHERE
    R = par[3]
    ox = p[0] - par[0]
    oy = p[1] - par[1]
    oz = p[2] - par[2]
    a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    b = ox * d[0] + oy * d[1] + oz * d[2]
    c = ox * ox + oy * oy + oz * oz - R * R
    disc = b * b - a * c
    if disc < 0.0:
        return best_t, best_edge
    sq = math.sqrt(disc)
    sgn = par[8]
    for k in range(2):
        t = (-b - sq) / a if k == 0 else (-b + sq) / a
        if t <= T_MIN:
            continue
        hx = ox + t * d[0]
        hy = oy + t * d[1]
        hz = oz + t * d[2]
        dn = -sgn * (hx * d[0] + hy * d[1] + hz * d[2]) / R
        if dn >= 0.0:
            continue
        ca = (hx * par[4] + hy * par[5] + hz * par[6]) / R
        if ca < par[7] - EXTENT_SLACK / R:
            continue
        ca = min(ca, 1.0)
        edge = R * (math.acos(max(par[7], -1.0)) - math.acos(max(ca, -1.0)))
        return t, abs(edge)
    return best_t, best_edge


@njit
def _polygon_edge_distance(verts, nv, u, w):
    """Signed distance from (u, w) to the polygon boundary (positive inside)."""
    best = math.inf
    for i in range(nv):
        j = i + 1 if i + 1 < nv else 0
        ex = verts[j, 0] - verts[i, 0]
        ew = verts[j, 1] - verts[i, 1]
        L = math.hypot(ex, ew)
        dist = (ex * (w - verts[i, 1]) - ew * (u - verts[i, 0])) / L
        if dist < best:
            best = dist
    return best


@njit
def _first_hit(kinds, par, verts, nverts, p, d):
    """Return ``(t, piece, singular)`` for the first boundary hit of a ray."""
    best_t = math.inf
    best_i = -1
    best_edge = math.inf
    second_t = math.inf
    for i in range(kinds.shape[0]):
        t, edge = _ray_piece(kinds[i], par[i], verts[i], nverts[i], p, d)
        if t < best_t:
            second_t = best_t
            best_t = t
            best_i = i
            best_edge = edge
        elif t < second_t:
            second_t = t
    singular = False
    if best_i >= 0:
        if best_edge < CORNER_TOL:
            singular = True
        elif second_t - best_t < CORNER_TOL:
            singular = True
        else:
            h = np.empty(p.shape[0])
            n = np.empty(p.shape[0])
            for k in range(p.shape[0]):
                h[k] = p[k] + best_t * d[k]
            _normal_at(kinds[best_i], par[best_i], h, n)
            dn = 0.0
            for k in range(p.shape[0]):
                dn += d[k] * n[k]
            if abs(dn) < GRAZE_TOL:
                singular = True
    return best_t, best_i, singular


@njit
def _normal_at(kind, par, h, out):
    """Inward unit normal of piece at surface point ``h`` (written into ``out``)."""
    if kind == SEGMENT:
        out[0] = par[6]
        out[1] = par[7]
    elif kind == ARC:
        # normalise by the actual distance so reflections stay exactly norm-preserving
        dx = par[0] - h[0]
        dy = par[1] - h[1]
        s = par[5] / math.sqrt(dx * dx + dy * dy)
        out[0] = s * dx
        out[1] = s * dy
    elif kind == FACET:
        out[0] = par[3]
        out[1] = par[4]
        out[2] = par[5]
    else:
        dx = par[0] - h[0]
        dy = par[1] - h[1]
        dz = par[2] - h[2]
        s = par[8] / math.sqrt(dx * dx + dy * dy + dz * dz)
        out[0] = s * dx
        out[1] = s * dy
        out[2] = s * dz


@njit
def _reflect(v, n):
    vn = 0.0
    for k in range(v.shape[0]):
        vn += v[k] * n[k]
    for k in range(v.shape[0]):
        v[k] -= 2.0 * vn * n[k]


@njit
def _count_crossings(kinds, par, verts, nverts, p, d):
    """Number of boundary crossings along a ray, in either direction."""
    count = 0
    for i in range(kinds.shape[0]):
        count += _crossings_piece(kinds[i], par[i], verts[i], nverts[i], p, d)
    return count


@njit
def _crossings_piece(kind, par, verts, nv, p, d):
    n = 0
    if kind == SEGMENT:
        nx, ny = par[6], par[7]
        dn = d[0] * nx + d[1] * ny
        if dn == 0.0:
            return 0
        t = ((par[0] - p[0]) * nx + (par[1] - p[1]) * ny) / dn
        if t <= 0.0:
            return 0
        s = (p[0] + t * d[0] - par[0]) * par[4] + (p[1] + t * d[1] - par[1]) * par[5]
        return 1 if 0.0 <= s < par[8] else 0
    if kind == ARC:
        ox = p[0] - par[0]
        oy = p[1] - par[1]
        b = ox * d[0] + oy * d[1]
        c = ox * ox + oy * oy - par[2] * par[2]
        disc = b * b - c
        if disc <= 0.0:
            return 0
        sq = math.sqrt(disc)
        for k in range(2):
            t = -b - sq if k == 0 else -b + sq
            if t <= 0.0:
                continue
            th = math.atan2(oy + t * d[1], ox + t * d[0])
            u = _wrap_angle(th - par[3]) if par[4] > 0 else _wrap_angle(par[3] - th)
            if u < abs(par[4]):
                n += 1
        return n
    if kind == FACET:
        dn = d[0] * par[3] + d[1] * par[4] + d[2] * par[5]
        if dn == 0.0:
            return 0
        t = ((par[0] - p[0]) * par[3] + (par[1] - p[1]) * par[4] + (par[2] - p[2]) * par[5]) / dn
        if t <= 0.0:
            return 0
        rx = p[0] + t * d[0] - par[0]
        ry = p[1] + t * d[1] - par[1]
        rz = p[2] + t * d[2] - par[2]
        hu = rx * par[6] + ry * par[7] + rz * par[8]
        hw = rx * par[9] + ry * par[10] + rz * par[11]
        if _polygon_edge_distance(verts, nv, hu, hw) < 0.0:
            return 0
        if par[14] > 0.0 and math.hypot(hu - par[12], hw - par[13]) < par[14]:
            return 0
        return 1
    R = par[3]
    ox = p[0] - par[0]
    oy = p[1] - par[1]
    oz = p[2] - par[2]
    b = ox * d[0] + oy * d[1] + oz * d[2]
    c = ox * ox + oy * oy + oz * oz - R * R
    disc = b * b - c
    if disc <= 0.0:
        return 0
    sq = math.sqrt(disc)
    for k in range(2):
        t = -b - sq if k == 0 else -b + sq
        if t <= 0.0:
            continue
        ca = ((ox + t * d[0]) * par[4] + (oy + t * d[1]) * par[5] + (oz + t * d[2]) * par[6]) / R
        if ca >= par[7]:
            n += 1
    return n


@njit
def _contains(kinds, par, verts, nverts, p):
    # irrational-ish direction keeps the parity ray off piece joints
    if p.shape[0] == 2:
        d = np.array([0.6180339887498949, 0.7861513777574233])
    else:
        d = np.array([0.5773502691896258, 0.6172133998483676, 0.5345224838248488])
    nrm = 0.0
    for k in range(d.shape[0]):
        nrm += d[k] * d[k]
    nrm = math.sqrt(nrm)
    for k in range(d.shape[0]):
        d[k] /= nrm
    return _count_crossings(kinds, par, verts, nverts, p, d) % 2 == 1


@njit
def _contains_many(kinds, par, verts, nverts, pts):
    out = np.zeros(pts.shape[0], dtype=np.bool_)
    for i in range(pts.shape[0]):
        out[i] = _contains(kinds, par, verts, nverts, pts[i])
    return out
