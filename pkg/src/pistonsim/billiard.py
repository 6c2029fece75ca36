"""Billiard in a frozen subdomain (infinitely heavy piston).

Boundary phase points are stored per piece in a local chart:

* 2D: ``(s, phi)`` with ``s`` the arc length along the piece and ``phi``
  the signed angle of the outgoing direction from the inward normal,
  ``v = cos(phi) n + sin(phi) t``.
* 3D: ``(c1, c2, p1, p2)`` with ``(c1, c2)`` surface coordinates (planar
  frame on facets, polar/azimuth angles on sphere patches) and
  ``(p1, p2)`` the tangential components of the unit outgoing direction.

With these charts the invariant cross-section measure is uniform in the
surface coordinate (by length/area) times ``cos(phi) dphi / 2`` in 2D or the
uniform law on the unit disk for ``(p1, p2)`` in 3D.

Batch kernels are numba-compiled; the Python wrappers take a
``numpy.random.Generator`` and never touch global RNG state.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from ._jit import njit
from .geometry import (ARC, FACET, SEGMENT, SPHERE, Container, PackedBoundary,
                       _contains_many, _first_hit, _normal_at, _polygon_edge_distance,
                       _wrap_angle)

__all__ = [
    "CrossSectionPoint",
    "InducedPoint",
    "KacResult",
    "VerificationRecord",
    "collision_map",
    "df_norm_diagnostic",
    "induce_on_piston",
    "involution_check",
    "invariance_ks",
    "kac_check",
    "momentum_expectation",
    "momentum_flux_average",
    "pressure_target",
    "run_verification",
    "sample_mu",
    "sample_nu",
    "sample_nu_hat",
    "santalo_check",
    "santalo_target",
    "singularity_neighborhood_measure",
    "write_report",
]

OK = 0
SINGULAR = 1
NONRETURN = 2

NONRETURN_CAP = 1_000_000


# ---------------------------------------------------------------------------
# chart kernels


@njit
def _frame(kind, par, c, p, t1, t2, n):
    """Surface point and orthonormal frame ``(t1, t2, n)`` at chart coordinates ``c``."""
    if kind == SEGMENT:
        s = c[0]
        p[0] = par[0] + s * par[4]
        p[1] = par[1] + s * par[5]
        t1[0] = par[4]
        t1[1] = par[5]
        n[0] = par[6]
        n[1] = par[7]
    elif kind == ARC:
        R = par[2]
        sgn = par[5]
        th = par[3] + sgn * c[0] / R
        ct = math.cos(th)
        st = math.sin(th)
        p[0] = par[0] + R * ct
        p[1] = par[1] + R * st
        t1[0] = -sgn * st
        t1[1] = sgn * ct
        n[0] = -sgn * ct
        n[1] = -sgn * st
    elif kind == FACET:
        for k in range(3):
            p[k] = par[k] + c[0] * par[6 + k] + c[1] * par[9 + k]
            t1[k] = par[6 + k]
            t2[k] = par[9 + k]
            n[k] = par[3 + k]
    else:
        R = par[3]
        sgn = par[8]
        a0, a1, a2 = par[4], par[5], par[6]
        e10, e11, e12 = par[10], par[11], par[12]
        # e2 = axis x e1
        e20 = a1 * e12 - a2 * e11
        e21 = a2 * e10 - a0 * e12
        e22 = a0 * e11 - a1 * e10
        ca = math.cos(c[0])
        sa = math.sin(c[0])
        cb = math.cos(c[1])
        sb = math.sin(c[1])
        rx = cb * e10 + sb * e20
        ry = cb * e11 + sb * e21
        rz = cb * e12 + sb * e22
        ux = ca * a0 + sa * rx
        uy = ca * a1 + sa * ry
        uz = ca * a2 + sa * rz
        p[0] = par[0] + R * ux
        p[1] = par[1] + R * uy
        p[2] = par[2] + R * uz
        t1[0] = -sa * a0 + ca * rx
        t1[1] = -sa * a1 + ca * ry
        t1[2] = -sa * a2 + ca * rz
        t2[0] = -sb * e10 + cb * e20
        t2[1] = -sb * e11 + cb * e21
        t2[2] = -sb * e12 + cb * e22
        n[0] = -sgn * ux
        n[1] = -sgn * uy
        n[2] = -sgn * uz


@njit
def _surface_coords(kind, par, h, c):
    """Inverse of the surface part of :func:`_frame`: write chart coordinates of point ``h``."""
    if kind == SEGMENT:
        c[0] = (h[0] - par[0]) * par[4] + (h[1] - par[1]) * par[5]
    elif kind == ARC:
        R = par[2]
        th = math.atan2(h[1] - par[1], h[0] - par[0])
        if par[4] > 0.0:
            u = _wrap_angle(th - par[3])
        else:
            u = _wrap_angle(par[3] - th)
        if u > abs(par[4]) and u > math.pi + 0.5 * abs(par[4]):
            u -= 2.0 * math.pi  # just before the start of the arc
        c[0] = R * u
    elif kind == FACET:
        rx = h[0] - par[0]
        ry = h[1] - par[1]
        rz = h[2] - par[2]
        c[0] = rx * par[6] + ry * par[7] + rz * par[8]
        c[1] = rx * par[9] + ry * par[10] + rz * par[11]
    else:
        R = par[3]
        a0, a1, a2 = par[4], par[5], par[6]
        e10, e11, e12 = par[10], par[11], par[12]
        e20 = a1 * e12 - a2 * e11
        e21 = a2 * e10 - a0 * e12
        e22 = a0 * e11 - a1 * e10
        rx = (h[0] - par[0]) / R
        ry = (h[1] - par[1]) / R
        rz = (h[2] - par[2]) / R
        ca = min(1.0, max(-1.0, rx * a0 + ry * a1 + rz * a2))
        c[0] = math.acos(ca)
        c[1] = _wrap_angle(math.atan2(rx * e20 + ry * e21 + rz * e22, rx * e10 + ry * e11 + rz * e12))


@njit
def _chart_to_state(kind, par, c, p, v, t1, t2, n):
    """Footpoint ``p`` and unit outgoing direction ``v`` of chart point ``c``."""
    _frame(kind, par, c, p, t1, t2, n)
    if p.shape[0] == 2:
        cp = math.cos(c[1])
        sp = math.sin(c[1])
        v[0] = cp * n[0] + sp * t1[0]
        v[1] = cp * n[1] + sp * t1[1]
    else:
        q = 1.0 - c[2] * c[2] - c[3] * c[3]
        cn = math.sqrt(q) if q > 0.0 else 0.0
        for k in range(3):
            v[k] = c[2] * t1[k] + c[3] * t2[k] + cn * n[k]


@njit
def _state_to_chart(kind, par, h, v, c, p, t1, t2, n):
    _surface_coords(kind, par, h, c)
    _frame(kind, par, c, p, t1, t2, n)
    if h.shape[0] == 2:
        c[1] = math.atan2(v[0] * t1[0] + v[1] * t1[1], v[0] * n[0] + v[1] * n[1])
    else:
        c[2] = v[0] * t1[0] + v[1] * t1[1] + v[2] * t1[2]
        c[3] = v[0] * t2[0] + v[1] * t2[1] + v[2] * t2[2]


@njit
def _cos_out(c, dim):
    if dim == 2:
        return math.cos(c[1])
    q = 1.0 - c[2] * c[2] - c[3] * c[3]
    return math.sqrt(q) if q > 0.0 else 0.0


@njit
def _step(kinds, par, verts, nverts, piece, c, out):
    """One application of the collision map in chart form.

    Returns ``(next piece, chord length, status)``; ``out`` receives the new chart.
    """
    dim = 2 if kinds[0] <= ARC else 3
    p = np.empty(dim)
    v = np.empty(dim)
    t1 = np.zeros(dim)
    t2 = np.zeros(dim)
    n = np.empty(dim)
    _chart_to_state(kinds[piece], par[piece], c, p, v, t1, t2, n)
    t, j, singular = _first_hit(kinds, par, verts, nverts, p, v)
    if j < 0:
        return -1, math.inf, SINGULAR
    h = np.empty(dim)
    for k in range(dim):
        h[k] = p[k] + t * v[k]
    _normal_at(kinds[j], par[j], h, n)
    vn = 0.0
    for k in range(dim):
        vn += v[k] * n[k]
    for k in range(dim):
        v[k] -= 2.0 * vn * n[k]
    _state_to_chart(kinds[j], par[j], h, v, out, p, t1, t2, n)
    return j, t, SINGULAR if singular else OK


@njit
def _map_batch(kinds, par, verts, nverts, pieces, C):
    m = pieces.shape[0]
    out_p = np.empty(m, dtype=np.int64)
    out_c = np.empty_like(C)
    chord = np.empty(m)
    status = np.empty(m, dtype=np.int64)
    for i in range(m):
        j, t, st = _step(kinds, par, verts, nverts, pieces[i], C[i], out_c[i])
        out_p[i] = j
        chord[i] = t
        status[i] = st
    return out_p, out_c, chord, status


@njit
def _induce_batch(kinds, par, verts, nverts, target, pieces, C, cap):
    m = pieces.shape[0]
    out_p = np.empty(m, dtype=np.int64)
    out_c = np.empty_like(C)
    chord = np.zeros(m)
    ret = np.zeros(m, dtype=np.int64)
    status = np.zeros(m, dtype=np.int64)
    cur = np.empty(C.shape[1])
    nxt = np.empty(C.shape[1])
    for i in range(m):
        cur[:] = C[i]
        piece = pieces[i]
        total = 0.0
        st = NONRETURN
        for r in range(1, cap + 1):
            j, t, s = _step(kinds, par, verts, nverts, piece, cur, nxt)
            if s != OK:
                st = SINGULAR
                ret[i] = r
                break
            total += t
            piece = j
            cur[:] = nxt
            if j == target:
                st = OK
                ret[i] = r
                break
        if st == NONRETURN:
            ret[i] = cap
        out_p[i] = piece
        out_c[i] = cur
        chord[i] = total
        status[i] = st
    return out_p, out_c, ret, chord, status


@njit
def _flux_orbit(kinds, par, verts, nverts, target, p0, v0, speed, horizon):
    """Time average of ``|v_perp|`` over hits on ``target`` along one orbit from ``(p0, v0)``."""
    dim = p0.shape[0]
    p = p0.copy()
    v = v0.copy()
    n = np.empty(dim)
    clock = 0.0
    total = 0.0
    hits = 0
    singular = 0
    while True:
        t, j, sing = _first_hit(kinds, par, verts, nverts, p, v)
        if j < 0:
            return math.nan, hits, singular + 1
        clock += t / speed
        if clock > horizon:
            break
        for k in range(dim):
            p[k] += t * v[k]
        _normal_at(kinds[j], par[j], p, n)
        vn = 0.0
        for k in range(dim):
            vn += v[k] * n[k]
        if sing:
            singular += 1
        if j == target:
            total += -vn * speed
            hits += 1
        for k in range(dim):
            v[k] -= 2.0 * vn * n[k]
    return total / horizon, hits, singular


@njit
def _edge_distance(kind, par, verts, nv, c):
    """Distance from chart point to the edge of its piece, in surface units."""
    if kind == SEGMENT or kind == ARC:
        L = par[8] if kind == SEGMENT else par[6]
        return min(c[0], L - c[0])
    if kind == FACET:
        e = _polygon_edge_distance(verts, nv, c[0], c[1])
        if par[14] > 0.0:
            e = min(e, math.hypot(c[0] - par[12], c[1] - par[13]) - par[14])
        return e
    return par[3] * (math.acos(max(-1.0, min(1.0, par[7]))) - c[0])


@njit
def _boundary_distance(kinds, par, verts, nverts, piece, c, dim):
    """Distance to the boundary of the piece's component of the cross-section.

    Surface and angle coordinates are combined as in a product metric, so
    the distance is the smaller of the edge distance and ``pi/2 - |phi|``.
    """
    e = _edge_distance(kinds[piece], par[piece], verts[piece], nverts[piece], c)
    if dim == 2:
        a = 0.5 * math.pi - abs(c[1])
    else:
        a = 0.5 * math.pi - math.acos(_cos_out(c, 3))
    return min(e, a)


@njit
def _neighborhood_batch(kinds, par, verts, nverts, pieces, C, gamma):
    m = pieces.shape[0]
    dim = 2 if kinds[0] <= ARC else 3
    hit = np.zeros(m, dtype=np.bool_)
    nxt = np.empty(C.shape[1])
    for i in range(m):
        if _boundary_distance(kinds, par, verts, nverts, pieces[i], C[i], dim) < gamma:
            hit[i] = True
            continue
        j, t, st = _step(kinds, par, verts, nverts, pieces[i], C[i], nxt)
        if st != OK or _boundary_distance(kinds, par, verts, nverts, j, nxt, dim) < gamma:
            hit[i] = True
    return hit


@njit
def _facet_accept(verts, nv, hu, hw, hr, U, W):
    out = np.zeros(U.shape[0], dtype=np.bool_)
    for i in range(U.shape[0]):
        if _polygon_edge_distance(verts, nv, U[i], W[i]) < 0.0:
            continue
        if hr > 0.0 and math.hypot(U[i] - hu, W[i] - hw) < hr:
            continue
        out[i] = True
    return out


# ---------------------------------------------------------------------------
# public types


@dataclass(frozen=True)
class CrossSectionPoint:
    """Boundary phase point: piece, chart coordinates and particle speed.

    ``coords`` is ``(s, phi)`` in 2D and ``(c1, c2, p1, p2)`` in 3D.
    """

    piece: int
    coords: tuple[float, ...]
    speed: float = 1.0

    @property
    def phi(self) -> float:
        """Angle between outgoing direction and inward normal (signed in 2D)."""
        if len(self.coords) == 2:
            return self.coords[1]
        return math.acos(_cos_out(np.asarray(self.coords), 3))


@dataclass(frozen=True)
class InducedPoint:
    point: CrossSectionPoint
    returns: int
    flight_time: float
    status: int = OK


def _table(container: Container, side: int, Q: float) -> PackedBoundary:
    return container.table(side, Q)


def _speed(E1: float) -> float:
    if not E1 > 0.0:
        raise ValueError("particle energy must be positive")
    return math.sqrt(2.0 * E1)


def global_r(tb: PackedBoundary, pieces, C) -> np.ndarray:
    """Global arc-length coordinate (2D only)."""
    return tb.offsets[np.asarray(pieces)] + np.asarray(C)[:, 0]


def collision_map(container: Container, side: int, Q: float, E1: float,
                  x: CrossSectionPoint) -> tuple[CrossSectionPoint, float]:
    """Next collision ``F(x)`` and the flight time to reach it.

    Raises ``ValueError`` when the next hit is a corner or tangency.
    """
    tb = _table(container, side, Q)
    speed = _speed(E1)
    C = np.asarray([x.coords], dtype=float)
    j, c2, chord, st = _map_batch(*tb.arrays(), np.array([x.piece]), C)
    if st[0] != OK:
        raise ValueError("collision map is singular at this point (corner or tangential hit)")
    return CrossSectionPoint(int(j[0]), tuple(float(v) for v in c2[0]), speed), float(chord[0]) / speed


# ---------------------------------------------------------------------------
# sampling


def _sample_surface(tb: PackedBoundary, piece_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Area/length-uniform surface coordinates on the given pieces."""
    m = piece_ids.shape[0]
    dim = tb.dim
    out = np.zeros((m, 1 if dim == 2 else 2))
    for k in np.unique(piece_ids):
        idx = np.nonzero(piece_ids == k)[0]
        kind, par = tb.kinds[k], tb.par[k]
        cnt = idx.shape[0]
        if kind in (SEGMENT, ARC):
            out[idx, 0] = rng.uniform(0.0, tb.sizes[k], size=cnt)
        elif kind == FACET:
            verts = tb.verts[k, : tb.nverts[k]]
            lo, hi = verts.min(axis=0), verts.max(axis=0)
            got = np.empty((0, 2))
            while got.shape[0] < cnt:
                need = cnt - got.shape[0]
                U = rng.uniform(lo[0], hi[0], size=2 * need + 16)
                W = rng.uniform(lo[1], hi[1], size=2 * need + 16)
                ok = _facet_accept(tb.verts[k], tb.nverts[k], par[12], par[13], par[14], U, W)
                got = np.vstack([got, np.column_stack([U[ok], W[ok]])])
            out[idx] = got[:cnt]
        else:
            ca = rng.uniform(par[7], 1.0, size=cnt)
            out[idx, 0] = np.arccos(ca)
            out[idx, 1] = rng.uniform(0.0, 2.0 * math.pi, size=cnt)
    return out


def _sample_direction(dim: int, m: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 2:
        return np.arcsin(2.0 * rng.random(m) - 1.0)[:, None]
    # cosine-weighted hemisphere: tangential part uniform on the unit disk
    rad = np.sqrt(rng.random(m))
    ang = rng.uniform(0.0, 2.0 * math.pi, size=m)
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def _sample_on(tb: PackedBoundary, piece_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    surf = _sample_surface(tb, piece_ids, rng)
    return np.hstack([surf, _sample_direction(tb.dim, piece_ids.shape[0], rng)])


def sample_nu(container: Container, side: int, Q: float, n: int,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` i.i.d. draws from the invariant cross-section measure; returns ``(pieces, charts)``."""
    tb = _table(container, side, Q)
    pieces = rng.choice(len(tb), size=n, p=tb.sizes / tb.total_size)
    return pieces.astype(np.int64), _sample_on(tb, pieces, rng)


def sample_nu_hat(container: Container, side: int, Q: float, n: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draws from the cross-section measure conditioned on the piston face."""
    tb = _table(container, side, Q)
    if tb.piston < 0:
        raise ValueError("subdomain has no piston face")
    pieces = np.full(n, tb.piston, dtype=np.int64)
    return pieces, _sample_on(tb, pieces, rng)


def sample_mu(container: Container, side: int, Q: float, E1: float, n: int,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Liouville samples: uniform position in the subdomain, uniform direction, speed ``sqrt(2 E1)``."""
    tb = _table(container, side, Q)
    speed = _speed(E1)
    lo, hi = container.bounding_box(side, Q)
    pts = np.empty((0, tb.dim))
    while pts.shape[0] < n:
        need = n - pts.shape[0]
        cand = rng.uniform(lo, hi, size=(2 * need + 16, tb.dim))
        ok = _contains_many(*tb.arrays(), cand)
        pts = np.vstack([pts, cand[ok]])
    pts = pts[:n]
    d = rng.normal(size=(n, tb.dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return pts, speed * d


# ---------------------------------------------------------------------------
# closed-form targets


def santalo_target(container: Container, side: int, Q: float, E1: float) -> float:
    """Mean free flight time under the cross-section measure."""
    area = container.subdomain_measure(side, Q)
    perim = container.boundary_measure(side, Q)
    const = math.pi if container.dimension == 2 else 4.0
    return const * area / (_speed(E1) * perim)


def momentum_expectation(dimension: int) -> float:
    """Mean ``cos(phi)`` under the cross-section measure: ``pi/4`` in 2D, ``2/3`` in 3D."""
    return math.pi / 4.0 if dimension == 2 else 2.0 / 3.0


def pressure_target(container: Container, side: int, Q: float, E1: float) -> float:
    """Long-time average of momentum delivered to the piston per unit time, ``E ell / (d |D|)``."""
    return E1 * container.ell / (container.dimension * container.subdomain_measure(side, Q))


# ---------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class VerificationRecord:
    check: str
    target: float
    estimate: float
    stderr: float
    z: float

    @classmethod
    def from_samples(cls, check: str, target: float, samples) -> VerificationRecord:
        x = np.asarray(samples, dtype=float)
        est = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(x.shape[0]))
        return cls(check, float(target), est, se, _z(est, target, se))


def _z(est, target, se):
    if se > 0.0:
        return float((est - target) / se)
    return 0.0 if est == target else math.copysign(math.inf, est - target)


def write_report(records, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([asdict(r) for r in records], indent=2, sort_keys=True) + "\n")
    return path


def santalo_check(container: Container, side: int, Q: float, E1: float, N: int,
                  rng: np.random.Generator) -> tuple[VerificationRecord, int]:
    """Mean flight time of i.i.d. cross-section samples against the closed form.

    Returns the record and the number of discarded singular samples.
    """
    if N < 1000:
        raise ValueError("santalo_check needs N >= 1000")
    tb = _table(container, side, Q)
    pieces, C = sample_nu(container, side, Q, N, rng)
    _, _, chord, st = _map_batch(*tb.arrays(), pieces, C)
    ok = st == OK
    zeta = chord[ok] / _speed(E1)
    rec = VerificationRecord.from_samples(f"santalo_{container.dimension}d", santalo_target(container, side, Q, E1), zeta)
    return rec, int((~ok).sum())


def induce_on_piston(container: Container, side: int, Q: float, E1: float,
                     x: CrossSectionPoint, cap: int = NONRETURN_CAP) -> InducedPoint:
    """First return of the orbit of ``x`` (on the piston face) to the piston face."""
    tb = _table(container, side, Q)
    if x.piece != tb.piston:
        raise ValueError("induced map starts on the piston face")
    speed = _speed(E1)
    p, c, R, chord, st = _induce_batch(*tb.arrays(), tb.piston, np.array([x.piece]),
                                       np.asarray([x.coords], dtype=float), cap)
    pt = CrossSectionPoint(int(p[0]), tuple(float(v) for v in c[0]), speed)
    return InducedPoint(pt, int(R[0]), float(chord[0]) / speed, int(st[0]))


@dataclass(frozen=True)
class KacResult:
    returns: VerificationRecord  # E[R] vs 1 / nu(piston)
    flight: VerificationRecord  # E[zeta_hat] * nu(piston) vs mean flight time
    momentum: VerificationRecord  # E[cos phi] at the returned point vs pi/4 or 2/3
    singular: int
    nonreturn: int


def kac_check(container: Container, side: int, Q: float, E1: float, N: int,
              rng: np.random.Generator, cap: int = NONRETURN_CAP) -> KacResult:
    """Return-time and flight-time identities of the map induced on the piston face."""
    tb = _table(container, side, Q)
    speed = _speed(E1)
    nu_hat = container.ell / container.boundary_measure(side, Q)
    pieces, C = sample_nu_hat(container, side, Q, N, rng)
    p, c, R, chord, st = _induce_batch(*tb.arrays(), tb.piston, pieces, C, cap)
    ok = st == OK
    r_rec = VerificationRecord.from_samples("kac_return_time", 1.0 / nu_hat, R[ok].astype(float))
    flight = chord[ok] / speed * nu_hat
    f_rec = VerificationRecord.from_samples("kac_flight_time", santalo_target(container, side, Q, E1), flight)
    cosp = np.array([_cos_out(c[i], tb.dim) for i in np.nonzero(ok)[0]])
    m_rec = VerificationRecord.from_samples(f"momentum_{tb.dim}d", momentum_expectation(tb.dim), cosp)
    return KacResult(r_rec, f_rec, m_rec, int((st == SINGULAR).sum()), int((st == NONRETURN).sum()))


def momentum_flux_average(container: Container, side: int, Q: float, E1: float,
                          horizon: float, rng: np.random.Generator,
                          orbits: int = 32) -> tuple[float, np.ndarray]:
    """Median over independent Liouville starts of the orbit time average of ``|v_perp|`` on the piston.

    Returns ``(median, per-orbit averages)``.
    """
    tb = _table(container, side, Q)
    speed = _speed(E1)
    pts, vel = sample_mu(container, side, Q, E1, orbits, rng)
    vals = np.empty(orbits)
    for i in range(orbits):
        vals[i], _, _ = _flux_orbit(*tb.arrays(), tb.piston, pts[i], vel[i] / speed, speed, float(horizon))
    return float(np.median(vals)), vals


def invariance_ks(container: Container, side: int, Q: float, N: int,
                  rng: np.random.Generator) -> dict[str, float]:
    """Kolmogorov-Smirnov distances between ``F``-pushed samples and the invariant law.

    2D: global arc length against the uniform law and ``phi`` against
    ``(1 + sin phi)/2``.  3D: ``sin^2 phi`` against the uniform law and the
    tangential azimuth against the uniform law on ``[0, 2 pi)``.
    """
    tb = _table(container, side, Q)
    pieces, C = sample_nu(container, side, Q, N, rng)
    p2, c2, _, st = _map_batch(*tb.arrays(), pieces, C)
    ok = st == OK
    p2, c2 = p2[ok], c2[ok]
    if tb.dim == 2:
        r = global_r(tb, p2, c2) / tb.total_size
        a = stats.kstest(r, "uniform").statistic
        b = stats.kstest(c2[:, 1], lambda x: 0.5 * (1.0 + np.sin(x))).statistic
        return {"r": float(a), "phi": float(b)}
    s2 = c2[:, 2] ** 2 + c2[:, 3] ** 2
    az = np.mod(np.arctan2(c2[:, 3], c2[:, 2]), 2.0 * math.pi) / (2.0 * math.pi)
    return {"sin2phi": float(stats.kstest(s2, "uniform").statistic),
            "azimuth": float(stats.kstest(az, "uniform").statistic)}


def _involute(tb: PackedBoundary, C: np.ndarray) -> np.ndarray:
    out = C.copy()
    if tb.dim == 2:
        out[:, 1] = -out[:, 1]
    else:
        out[:, 2:] = -out[:, 2:]
    return out


def involution_check(container: Container, side: int, Q: float, N: int,
                     rng: np.random.Generator) -> tuple[float, int]:
    """Max chart error of ``F(I(F(I x))) = x`` over regular samples.

    Returns ``(max error, number of samples used)``; samples whose chain
    meets a corner or changes piece unexpectedly count as errors.
    """
    tb = _table(container, side, Q)
    pieces, C = sample_nu(container, side, Q, N, rng)
    p1, c1, _, s1 = _map_batch(*tb.arrays(), pieces, _involute(tb, C))
    p2, c2, _, s2 = _map_batch(*tb.arrays(), p1, _involute(tb, c1))
    ok = (s1 == OK) & (s2 == OK)
    if not ok.any():
        return math.inf, 0
    err = np.abs(c2[ok] - C[ok]).max(axis=1)
    err[p2[ok] != pieces[ok]] = math.inf
    return float(err.max()), int(ok.sum())


def df_norm_diagnostic(container: Container, side: int, Q: float, E1: float, N: int,
                       rng: np.random.Generator, step: float = 1e-7,
                       margin: float = 1e-3) -> dict:
    """Finite-difference Jacobian of the collision map in chart coordinates.

    Reports the distribution of ``||DF(x)|| cos(phi(Fx))`` (spectral norm)
    over samples whose image stays ``margin`` away from tangency and whose
    stencil does not straddle a corner.
    """
    tb = _table(container, side, Q)
    pieces, C = sample_nu(container, side, Q, N, rng)
    dimc = C.shape[1]
    base_p, base_c, _, base_s = _map_batch(*tb.arrays(), pieces, C)
    vals = []
    jacs = []
    skipped = 0
    for i in range(N):
        if base_s[i] != OK:
            skipped += 1
            continue
        cos_img = _cos_out(base_c[i], tb.dim)
        if math.acos(min(1.0, cos_img)) > 0.5 * math.pi - margin:
            skipped += 1
            continue
        J = _jacobian(tb, pieces[i], C[i], base_p[i], step)
        if J is None:
            skipped += 1
            continue
        jacs.append(J)
        vals.append(np.linalg.norm(J, 2) * cos_img)
    vals = np.asarray(vals)
    return {
        "samples": int(vals.shape[0]),
        "skipped": skipped,
        "max": float(vals.max()) if vals.size else math.nan,
        "median": float(np.median(vals)) if vals.size else math.nan,
        "q99": float(np.quantile(vals, 0.99)) if vals.size else math.nan,
        "chart_dim": dimc,
    }


def _jacobian(tb: PackedBoundary, piece: int, c: np.ndarray, target: int, step: float):
    k = c.shape[0]
    J = np.empty((k, k))
    stencil = np.repeat(c[None, :], 2 * k, axis=0)
    for a in range(k):
        stencil[2 * a, a] += step
        stencil[2 * a + 1, a] -= step
    p, out, _, st = _map_batch(*tb.arrays(), np.full(2 * k, piece, dtype=np.int64), stencil)
    if np.any(st != OK) or np.any(p != target):
        return None
    wrap = tb.dim == 3 and tb.kinds[target] == SPHERE
    for a in range(k):
        diff = out[2 * a] - out[2 * a + 1]
        if wrap:
            # azimuth is periodic
            diff[1] = (diff[1] + math.pi) % (2.0 * math.pi) - math.pi
        J[:, a] = diff / (2.0 * step)
    return J


def singularity_neighborhood_measure(container: Container, side: int, Q: float, gamma: float,
                                     N: int, rng: np.random.Generator) -> tuple[float, float]:
    """Cross-section measure of points within ``gamma`` of the singular set, or mapped there.

    Returns ``(estimate, standard error)``.
    """
    if not 0.0 <= gamma < 0.5:
        raise ValueError("gamma must lie in [0, 0.5)")
    tb = _table(container, side, Q)
    pieces, C = sample_nu(container, side, Q, N, rng)
    hit = _neighborhood_batch(*tb.arrays(), pieces, C, float(gamma))
    p = float(hit.mean())
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / N)


def run_verification(container: Container, rng: np.random.Generator, Q: float = 0.5,
                     E1: float = 0.5, samples: int = 100_000, horizon: float = 1e4,
                     orbits: int = 8) -> list[VerificationRecord]:
    """Standard battery of frozen-billiard checks on side 1."""
    recs = [santalo_check(container, 1, Q, E1, samples, rng)[0]]
    kac = kac_check(container, 1, Q, E1, samples, rng)
    recs += [kac.returns, kac.flight, kac.momentum]
    med, vals = momentum_flux_average(container, 1, Q, E1, horizon, rng, orbits)
    se = float(1.2533 * vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    target = pressure_target(container, 1, Q, E1)
    recs.append(VerificationRecord("pressure_time_average", target, med, se, _z(med, target, se)))
    return recs
