"""Averaged slow dynamics of the piston and the two gases.

The slow state ``h = (Q, W, E_1j, E_2j)`` evolves on the slow time
``tau = eps * t``.  Each side acts as an ideal gas with pressure
``2 E_i / (d |D_i|)``; the gases compress adiabatically, so ``(Q, W)``
moves in an effective potential well.  Everything here depends on the
container only through ``ell``, the dimension and the two cap measures,
because ``|D_1(Q)| = cap_1 + ell Q`` and ``|D_2(Q)| = cap_2 + ell (1 - Q)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._jit import njit
from .geometry import Container
from .states import Region, SlowState, _contains_vec

__all__ = [
    "AveragedPath",
    "Oscillation",
    "adiabatic_energies",
    "averaged_vector_field",
    "effective_force",
    "effective_hamiltonian",
    "effective_potential",
    "equilibrium_position",
    "integrate",
    "period_and_equilibrium",
    "write_path_csv",
]

DRIFT_TOL = 1e-10
MAX_HALVINGS = 12


def _shape(container: Container):
    return (container.cap_measure(1), container.cap_measure(2), container.ell,
            float(container.dimension))


def _as_vec(h) -> np.ndarray:
    return h.as_array() if isinstance(h, SlowState) else np.asarray(h, dtype=float)


def _n1(h, n1):
    if isinstance(h, SlowState):
        return h.n1
    if n1 is None:
        if len(h) != 4:
            raise ValueError("pass n1 for a flat state with several particles per side")
        return 1
    return n1


@njit
def _measures(q, cap1, cap2, ell):
    return cap1 + ell * q, cap2 + ell * (1.0 - q)


@njit
def _field(h, n1, cap1, cap2, ell, d, out):
    a1, a2 = _measures(h[0], cap1, cap2, ell)
    w = h[1]
    e1 = 0.0
    for j in range(2, 2 + n1):
        e1 += h[j]
    e2 = 0.0
    for j in range(2 + n1, h.shape[0]):
        e2 += h[j]
    k1 = 2.0 * ell / (d * a1)
    k2 = 2.0 * ell / (d * a2)
    out[0] = w
    out[1] = e1 * k1 - e2 * k2
    for j in range(2, 2 + n1):
        out[j] = -w * h[j] * k1
    for j in range(2 + n1, h.shape[0]):
        out[j] = w * h[j] * k2


@njit
def _heff(q, w, c1, c2, cap1, cap2, ell, d):
    a1, a2 = _measures(q, cap1, cap2, ell)
    p = 2.0 / d
    return 0.5 * w * w + c1 / a1**p + c2 / a2**p


@njit
def _rk4(h, dt, n1, cap1, cap2, ell, d, k1, k2, k3, k4, tmp):
    m = h.shape[0]
    _field(h, n1, cap1, cap2, ell, d, k1)
    for i in range(m):
        tmp[i] = h[i] + 0.5 * dt * k1[i]
    _field(tmp, n1, cap1, cap2, ell, d, k2)
    for i in range(m):
        tmp[i] = h[i] + 0.5 * dt * k2[i]
    _field(tmp, n1, cap1, cap2, ell, d, k3)
    for i in range(m):
        tmp[i] = h[i] + dt * k3[i]
    _field(tmp, n1, cap1, cap2, ell, d, k4)
    for i in range(m):
        h[i] += dt * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0


@njit
def _integrate(h0, n1, cap1, cap2, ell, d, dtau, nsteps, bounds, check_region):
    """Fixed-grid RK4; each grid step is retried with 2, 4, ... substeps when H_eff drifts.

    Returns (path, last valid index, exited flag, rejected step count).
    """
    m = h0.shape[0]
    path = np.empty((nsteps + 1, m))
    path[0] = h0
    p = 2.0 / d
    a1, a2 = _measures(h0[0], cap1, cap2, ell)
    e1 = 0.0
    for j in range(2, 2 + n1):
        e1 += h0[j]
    e2 = 0.0
    for j in range(2 + n1, m):
        e2 += h0[j]
    c1 = e1 * a1**p
    c2 = e2 * a2**p
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    trial = np.empty(m)
    h = h0.copy()
    rejected = 0
    if check_region and not _contains_vec(h, bounds):
        return path[:1], 0, True, 0
    for i in range(1, nsteps + 1):
        h_before = _heff(h[0], h[1], c1, c2, cap1, cap2, ell, d)
        sub = 1
        for attempt in range(MAX_HALVINGS + 1):
            trial[:] = h
            dt = dtau / sub
            for _ in range(sub):
                _rk4(trial, dt, n1, cap1, cap2, ell, d, k1, k2, k3, k4, tmp)
            drift = abs(_heff(trial[0], trial[1], c1, c2, cap1, cap2, ell, d) - h_before)
            if drift <= DRIFT_TOL * max(1.0, abs(h_before)):
                break
            rejected += 1
            sub *= 2
        h[:] = trial
        path[i] = h
        if check_region and not _contains_vec(h, bounds):
            return path[: i + 1], i, True, rejected
    return path, nsteps, False, rejected


def averaged_vector_field(h, container: Container, d: int | None = None,
                          n1: int | None = None) -> np.ndarray:
    """Right-hand side ``dh/dtau`` of the averaged system.

    The ``W`` equation uses side totals; each particle energy is scaled by
    its own side's compression rate.
    """
    if d is not None and d != container.dimension:
        raise ValueError(f"d={d} does not match container dimension {container.dimension}")
    n1 = _n1(h, n1)
    v = _as_vec(h)
    cap1, cap2, ell, dd = _shape(container)
    a1, a2 = _measures(v[0], cap1, cap2, ell)
    if a1 <= 0.0 or a2 <= 0.0:
        raise ValueError(f"subdomain measure not positive at Q={v[0]}")
    out = np.empty_like(v)
    _field(v, n1, cap1, cap2, ell, dd, out)
    return out


def _consts(h0: np.ndarray, n1: int, container: Container):
    cap1, cap2, ell, d = _shape(container)
    a1, a2 = _measures(h0[0], cap1, cap2, ell)
    if a1 <= 0.0 or a2 <= 0.0:
        raise ValueError(f"subdomain measure not positive at Q={h0[0]}")
    p = 2.0 / d
    return h0[2:2 + n1].sum() * a1**p, h0[2 + n1:].sum() * a2**p


def effective_potential(Q, h0, container: Container, n1: int | None = None):
    """``sum_i E_i(0) (|D_i(Q0)| / |D_i(Q)|)^(2/d)``; vectorised over ``Q``."""
    n1 = _n1(h0, n1)
    v = _as_vec(h0)
    c1, c2 = _consts(v, n1, container)
    cap1, cap2, ell, d = _shape(container)
    q = np.asarray(Q, dtype=float)
    a1, a2 = cap1 + ell * q, cap2 + ell * (1.0 - q)
    if np.any(a1 <= 0.0) or np.any(a2 <= 0.0):
        raise ValueError("subdomain measure not positive")
    p = 2.0 / d
    out = c1 / a1**p + c2 / a2**p
    return float(out) if out.ndim == 0 else out


def effective_force(Q, h0, container: Container, n1: int | None = None):
    """``-dV/dQ`` in closed form: ``(2 ell / d) (E_1(Q)/|D_1| - E_2(Q)/|D_2|)``."""
    n1 = _n1(h0, n1)
    v = _as_vec(h0)
    c1, c2 = _consts(v, n1, container)
    cap1, cap2, ell, d = _shape(container)
    q = np.asarray(Q, dtype=float)
    a1, a2 = cap1 + ell * q, cap2 + ell * (1.0 - q)
    p = 2.0 / d
    out = (2.0 * ell / d) * (c1 / a1**(1 + p) - c2 / a2**(1 + p))
    return float(out) if out.ndim == 0 else out


def effective_hamiltonian(h, h_ref, container: Container, d: int | None = None,
                          n1: int | None = None) -> float:
    """``W^2/2 + V(Q)`` with the adiabatic constants fixed by ``h_ref``."""
    if d is not None and d != container.dimension:
        raise ValueError(f"d={d} does not match container dimension {container.dimension}")
    v = _as_vec(h)
    return 0.5 * v[1] ** 2 + effective_potential(v[0], h_ref, container, _n1(h_ref, n1))


def adiabatic_energies(h0, Q: float, container: Container,
                       n1: int | None = None) -> tuple[float, float]:
    """Side totals ``(E_1, E_2)`` after adiabatic compression from ``h0`` to position ``Q``."""
    n1 = _n1(h0, n1)
    v = _as_vec(h0)
    cap1, cap2, ell, d = _shape(container)
    a10, a20 = _measures(v[0], cap1, cap2, ell)
    a1, a2 = _measures(float(Q), cap1, cap2, ell)
    if min(a10, a20, a1, a2) <= 0.0:
        raise ValueError("subdomain measure not positive")
    p = 2.0 / d
    return float(v[2:2 + n1].sum() * (a10 / a1) ** p), float(v[2 + n1:].sum() * (a20 / a2) ** p)


@dataclass(frozen=True)
class AveragedPath:
    """Averaged solution sampled on ``tau = k * dtau``.

    ``exited`` is set when the path left the region; ``states`` then ends
    at the first grid point outside it.
    """

    tau: np.ndarray
    states: np.ndarray
    h_eff: np.ndarray
    n1: int
    exited: bool
    rejected_steps: int

    @property
    def exit_tau(self) -> float | None:
        return float(self.tau[-1]) if self.exited else None

    def state(self, k: int) -> SlowState:
        return SlowState.from_array(self.states[k], self.n1)


def integrate(h0, container: Container, tau_end: float, dtau: float = 1e-3,
              region: Region | None = None, d: int | None = None,
              n1: int | None = None) -> AveragedPath:
    """Integrate the averaged system on the grid ``0, dtau, ..., tau_end``.

    With a ``region`` the integration halts at the first grid point outside it.
    """
    if d is not None and d != container.dimension:
        raise ValueError(f"d={d} does not match container dimension {container.dimension}")
    if not dtau > 0.0 or not tau_end >= 0.0:
        raise ValueError("need dtau > 0 and tau_end >= 0")
    n1 = _n1(h0, n1)
    v = _as_vec(h0).copy()
    cap1, cap2, ell, dd = _shape(container)
    _consts(v, n1, container)
    nsteps = int(round(tau_end / dtau))
    bounds = region.bounds() if region is not None else np.zeros(6)
    path, last, exited, rejected = _integrate(v, n1, cap1, cap2, ell, dd, dtau, nsteps,
                                              bounds, region is not None)
    tau = np.arange(path.shape[0]) * dtau
    heff = 0.5 * path[:, 1] ** 2 + effective_potential(path[:, 0], v, container, n1)
    return AveragedPath(tau, path, np.atleast_1d(heff), n1, bool(exited), int(rejected))


def write_path_csv(path: AveragedPath, target) -> Path:
    target = Path(target)
    n2 = path.states.shape[1] - 2 - path.n1
    header = (["tau", "Q", "W"] + [f"E1_{j + 1}" for j in range(path.n1)]
              + [f"E2_{j + 1}" for j in range(n2)] + ["H_eff"])
    with target.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for t, row, h in zip(path.tau, path.states, path.h_eff):
            wr.writerow([repr(float(t))] + [repr(float(x)) for x in row] + [repr(float(h))])
    return target


def _bisect(f, lo, hi, tol=1e-15, maxiter=200):
    flo = f(lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _q_limits(container: Container):
    # Q range where both measures stay positive; caps let Q leave [0, 1] only in the limit
    cap1, cap2, ell, _ = _shape(container)
    lo = -cap1 / ell
    hi = 1.0 + cap2 / ell
    span = hi - lo
    return lo + 1e-12 * span, hi - 1e-12 * span


def equilibrium_position(h0, container: Container, n1: int | None = None) -> float:
    """Root of the effective force inside the piston's range ``(0, 1)``."""
    n1 = _n1(h0, n1)
    f = lambda q: effective_force(q, h0, container, n1)  # noqa: E731
    lo, hi = 1e-12, 1.0 - 1e-12
    if not (f(lo) > 0.0 > f(hi)):
        raise ValueError("effective potential has no well inside (0, 1): not confining")
    return _bisect(f, lo, hi)


@dataclass(frozen=True)
class Oscillation:
    q_star: float
    period: float
    turning_points: tuple[float, float]
    at_equilibrium: bool
    confining: bool


def period_and_equilibrium(h0, container: Container, d: int | None = None,
                           n1: int | None = None, dtau: float = 1e-3,
                           max_tau: float = 1e4) -> Oscillation:
    """Well bottom, period and turning points of the effective oscillation.

    The period is the time between successive upward crossings of ``Q*``
    on the integrated path, located by cubic Hermite interpolation.  Data
    sitting at the equilibrium get ``period = nan`` and ``at_equilibrium``.
    A well whose turning points fall outside ``(0, 1)`` is reported with
    ``confining=False``: the piston would reach an end of the tube.
    """
    if d is not None and d != container.dimension:
        raise ValueError(f"d={d} does not match container dimension {container.dimension}")
    n1 = _n1(h0, n1)
    v = _as_vec(h0)
    q_star = equilibrium_position(v, container, n1)
    V = lambda q: effective_potential(q, v, container, n1)  # noqa: E731
    H = 0.5 * v[1] ** 2 + V(v[0])
    excess = H - V(q_star)
    if excess <= 1e-14 * max(1.0, abs(H)):
        return Oscillation(q_star, math.nan, (q_star, q_star), True, True)

    lo, hi = _q_limits(container)
    g = lambda q: V(q) - H  # noqa: E731
    left = _bisect(g, lo, q_star) if g(lo) > 0 else lo
    right = _bisect(g, q_star, hi) if g(hi) > 0 else hi
    if not (g(lo) > 0 and g(hi) > 0 and 0.0 < left and right < 1.0):
        return Oscillation(q_star, math.nan, (left, right), False, False)

    # integrate in chunks until two upward crossings of q_star are seen
    crossings: list[float] = []
    h = v.copy()
    t0 = 0.0
    chunk = 10.0
    while t0 < max_tau and len(crossings) < 2:
        path = integrate(h, container, chunk, dtau, n1=n1)
        q, w = path.states[:, 0], path.states[:, 1]
        rel = q - q_star
        idx = np.nonzero((rel[:-1] < 0.0) & (rel[1:] >= 0.0))[0]
        for i in idx:
            crossings.append(t0 + i * dtau + _hermite_root(rel[i], rel[i + 1], w[i], w[i + 1], dtau))
            if len(crossings) == 2:
                break
        h = path.states[-1].copy()
        t0 += chunk
    if len(crossings) < 2:
        raise RuntimeError("no full oscillation within max_tau")
    return Oscillation(q_star, float(crossings[1] - crossings[0]), (left, right), False, True)


def _hermite_root(y0, y1, s0, s1, dt):
    """Zero of the cubic Hermite interpolant on ``[0, dt]`` with values y, slopes s."""
    def p(u):
        h00 = 2 * u**3 - 3 * u**2 + 1
        h10 = u**3 - 2 * u**2 + u
        h01 = -2 * u**3 + 3 * u**2
        h11 = u**3 - u**2
        return h00 * y0 + h10 * dt * s0 + h01 * y1 + h11 * dt * s1

    return dt * _bisect(p, 0.0, 1.0, tol=1e-15)
