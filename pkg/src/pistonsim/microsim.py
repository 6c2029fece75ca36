"""Event-driven simulation of the piston, the walls and the gas particles.

The piston has mass ``M = eps**-2``; it is stored through ``W = V / eps`` so
that its kinetic energy is ``W**2 / 2`` exactly.  Particles never interact
with each other.  Between events everything moves linearly, so all event
times are closed-form: ray intersections with the static walls, a linear
equation for the moving piston face and the piston end stops at ``Q = 0, 1``.

The event loop is a numba kernel that rescans the ``n`` particles per event.
Static-wall hits are cached per particle and only recomputed when that
particle's velocity changes; piston times are recomputed every event.  For
the desk-scale particle counts used here this beats a priority queue; a heap
keyed on the cached times is the upgrade path if ``n`` grows into the
hundreds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._jit import njit
from .geometry import Container, _first_hit, _normal_at
from .states import Region, SlowState, _contains_vec

__all__ = [
    "CollisionEvent",
    "MicroState",
    "StopClock",
    "TrajectoryRecord",
    "advance",
    "detect_stop",
    "next_event",
    "resolve_particle_piston",
    "run_trajectory",
    "write_events_csv",
    "write_trajectory_csv",
]

TIE_TOL = 1e-12

EV_WALL = 0
EV_PISTON = 1
EV_END = 2
EVENT_NAMES = {EV_WALL: "particle-wall", EV_PISTON: "particle-piston", EV_END: "piston-endwall"}

STOP_RUNNING = 0
STOP_HORIZON = 1
STOP_T_EPS = 2
STOP_T_PRIME = 3
STOP_T_DPRIME = 4
STOP_SINGULAR = 5
STOP_EVENT_CAP = 6
STOP_ERROR = 7
STOP_CHUNK = 8
STOP_NAMES = {
    STOP_HORIZON: "horizon",
    STOP_T_EPS: "T_eps",
    STOP_T_PRIME: "T_prime",
    STOP_T_DPRIME: "T_dprime",
    STOP_SINGULAR: "singular",
    STOP_EVENT_CAP: "event_cap",
    STOP_ERROR: "error",
}

# integer counters carried across kernel calls
C_GRID = 0  # next grid index to record
C_EVENTS = 1
C_PISTON = 2
C_CLEAN = 3
C_WALL = 4
C_END = 5
C_STOP = 6
C_INIT = 7
C_LOG = 8
N_COUNTERS = 9


@njit
def resolve_particle_piston(v_perp, W, eps):
    """Elastic exchange between a particle and the piston, in ``(v_perp, W)`` coordinates.

    ``v_perp`` is the particle velocity towards the piston and ``W`` the
    scaled piston velocity in the same orientation.  The map is orthogonal,
    so ``v_perp**2 + W**2`` is preserved.
    """
    e2 = eps * eps
    den = 1.0 + e2
    v_new = ((e2 - 1.0) * v_perp + 2.0 * eps * W) / den
    w_new = (2.0 * eps * v_perp + (1.0 - e2) * W) / den
    return v_new, w_new


@njit
def _static_hit(kinds, par, verts, nverts, p, v):
    """Relative time, piece and singular flag of the next static-wall hit."""
    speed = 0.0
    for k in range(v.shape[0]):
        speed += v[k] * v[k]
    speed = math.sqrt(speed)
    if speed == 0.0:
        return math.inf, -1, False
    u = v / speed
    t, j, sing = _first_hit(kinds, par, verts, nverts, p, u)
    return t / speed, j, sing


@njit
def _piston_dt(side, x, vx, Q, V):
    if side == 1:
        rel = vx - V
        if rel > 0.0:
            return max(0.0, (Q - x) / rel)
    else:
        rel = V - vx
        if rel > 0.0:
            return max(0.0, (x - Q) / rel)
    return math.inf


@njit
def _end_dt(Q, V):
    if V > 0.0:
        return (1.0 - Q) / V
    if V < 0.0:
        return -Q / V
    return math.inf


@njit
def _linear_window(a, b, lo, hi):
    """Restrict ``[lo, hi]`` to ``{s : a + b s >= 0}``."""
    if b == 0.0:
        if a < 0.0:
            return 1.0, 0.0
        return lo, hi
    r = -a / b
    if b > 0.0:
        return max(lo, r), hi
    return lo, min(hi, r)


@njit
def _near_parallel_fire(side, x, vx, Q, V, qmin, qmax, thresh, S):
    """Earliest ``s`` in ``[0, S]`` at which the particle sits in the tube with ``|v_perp| <= thresh``.

    Side 1 needs ``qmin <= x <= Q <= qmax``, side 2 ``qmin <= Q <= x <= qmax``;
    the ordering of ``x`` and ``Q`` holds automatically.
    """
    if abs(vx) > thresh:
        return math.inf
    lo, hi = 0.0, S
    if side == 1:
        lo, hi = _linear_window(x - qmin, vx, lo, hi)
        lo, hi = _linear_window(qmax - Q, -V, lo, hi)
    else:
        lo, hi = _linear_window(Q - qmin, V, lo, hi)
        lo, hi = _linear_window(qmax - x, -vx, lo, hi)
    if lo <= hi:
        return lo
    return math.inf


@njit
def _run_kernel(k1, p1, v1, n1v, k2, p2, v2, n2v,
                fstate, pos, vel, side, eps, nsteps, dtau, bounds, check_region,
                c1, clean_speed, max_events, chunk,
                ts, js, ss, grid, counters,
                log_on, log_t, log_i, log_f):
    """Advance the trajectory in place until a stop condition or ``chunk`` events.

    ``fstate`` holds ``[t, Q, W]``.  Grid rows are ``[Q, W, E_1..E_n]`` in
    particle order.  Logged events go to ``log_t`` (time), ``log_i``
    (kind, side, j, clean) and ``log_f`` (Q, V, v_perp_pre, v_perp_post).
    """
    n = pos.shape[0]
    dim = pos.shape[1]
    t = fstate[0]
    Q = fstate[1]
    W = fstate[2]
    nrm = np.empty(dim)
    hrow = np.empty(2 + n)
    t_end = nsteps * dtau / eps
    thresh = c1 * eps if c1 > 0.0 else -1.0
    qmin = bounds[0]
    qmax = bounds[1]
    log_cap = log_t.shape[0]

    if counters[C_INIT] == 0:
        for i in range(n):
            if side[i] == 1:
                dt, j, sg = _static_hit(k1, p1, v1, n1v, pos[i], vel[i])
            else:
                dt, j, sg = _static_hit(k2, p2, v2, n2v, pos[i], vel[i])
            ts[i] = t + dt
            js[i] = j
            ss[i] = sg
        counters[C_INIT] = 1

    done = 0
    while True:
        if done >= chunk:
            counters[C_STOP] = STOP_CHUNK
            break
        if counters[C_EVENTS] >= max_events:
            counters[C_STOP] = STOP_EVENT_CAP
            break
        V = eps * W
        # scan candidate events; keep the two earliest
        best = math.inf
        bkind = -1
        bidx = -1
        second = math.inf
        skind = -1
        sidx = -1
        for i in range(n):
            for kind in range(2):
                if kind == EV_WALL:
                    te = ts[i]
                else:
                    te = t + _piston_dt(side[i], pos[i, 0], vel[i, 0], Q, V)
                if te < best:
                    second, skind, sidx = best, bkind, bidx
                    best, bkind, bidx = te, kind, i
                elif te < second:
                    second, skind, sidx = te, kind, i
        te = t + _end_dt(Q, V)
        if te < best:
            second, skind, sidx = best, bkind, bidx
            best, bkind, bidx = te, EV_END, -1
        elif te < second:
            second, skind, sidx = te, EV_END, -1

        # near-parallel stopping condition on this free-flight segment
        lim = min(best, t_end)
        fire = math.inf
        fire_side = 0
        if thresh >= 0.0:
            for i in range(n):
                s = _near_parallel_fire(side[i], pos[i, 0], vel[i, 0], Q, V, qmin, qmax, thresh, lim - t)
                if t + s < fire:
                    fire = t + s
                    fire_side = side[i]
        seg_end = min(lim, fire)

        # slow-variable samples on the grid inside this segment
        stop_now = False
        while counters[C_GRID] <= nsteps:
            k = counters[C_GRID]
            tk = k * dtau / eps
            if tk > seg_end:
                break
            hrow[0] = Q + V * (tk - t)
            hrow[1] = W
            for i in range(n):
                e = 0.0
                for d in range(dim):
                    e += vel[i, d] * vel[i, d]
                hrow[2 + i] = 0.5 * e
            grid[k] = hrow
            counters[C_GRID] = k + 1
            if check_region and not _contains_vec(hrow, bounds):
                dt = tk - t
                for i in range(n):
                    for d in range(dim):
                        pos[i, d] += vel[i, d] * dt
                t = tk
                Q = hrow[0]
                counters[C_STOP] = STOP_T_EPS
                stop_now = True
                break
        if stop_now:
            break
        if fire <= lim:
            dt = fire - t
            for i in range(n):
                for d in range(dim):
                    pos[i, d] += vel[i, d] * dt
            Q += V * dt
            t = fire
            counters[C_STOP] = STOP_T_PRIME if fire_side == 1 else STOP_T_DPRIME
            break
        if t_end <= best:
            dt = t_end - t
            for i in range(n):
                for d in range(dim):
                    pos[i, d] += vel[i, d] * dt
            Q += V * dt
            t = t_end
            counters[C_STOP] = STOP_HORIZON
            break
        symmetric = False
        if second - best <= TIE_TOL:
            shared = False
            if bkind == EV_END or skind == EV_END:
                shared = bkind == EV_PISTON or skind == EV_PISTON or bkind == skind
            elif bidx == sidx:
                shared = True
            elif bkind == EV_PISTON and skind == EV_PISTON:
                shared = True
            if shared:
                if (bkind == EV_PISTON and skind == EV_PISTON and side[bidx] != side[sidx]
                        and abs(W) <= TIE_TOL
                        and abs(vel[bidx, 0] + vel[sidx, 0]) <= TIE_TOL):
                    symmetric = True
                else:
                    counters[C_STOP] = STOP_SINGULAR
                    break

        dt = best - t
        for i in range(n):
            for d in range(dim):
                pos[i, d] += vel[i, d] * dt
        Q += V * dt
        t = best
        counters[C_EVENTS] += 1
        done += 1

        if bkind == EV_WALL:
            i = bidx
            if ss[i] or js[i] < 0:
                counters[C_STOP] = STOP_SINGULAR
                break
            if side[i] == 1:
                _normal_at(k1[js[i]], p1[js[i]], pos[i], nrm)
            else:
                _normal_at(k2[js[i]], p2[js[i]], pos[i], nrm)
            pre = vel[i, 0] if side[i] == 1 else -vel[i, 0]
            vn = 0.0
            for d in range(dim):
                vn += vel[i, d] * nrm[d]
            for d in range(dim):
                vel[i, d] -= 2.0 * vn * nrm[d]
            post = vel[i, 0] if side[i] == 1 else -vel[i, 0]
            counters[C_WALL] += 1
            if log_on and counters[C_LOG] < log_cap:
                r = counters[C_LOG]
                log_t[r] = t
                log_i[r, 0] = EV_WALL
                log_i[r, 1] = side[i]
                log_i[r, 2] = i
                log_i[r, 3] = -1
                log_f[r, 0] = Q
                log_f[r, 1] = V
                log_f[r, 2] = pre
                log_f[r, 3] = post
                counters[C_LOG] += 1
            if side[i] == 1:
                dtn, j, sg = _static_hit(k1, p1, v1, n1v, pos[i], vel[i])
            else:
                dtn, j, sg = _static_hit(k2, p2, v2, n2v, pos[i], vel[i])
            ts[i] = t + dtn
            js[i] = j
            ss[i] = sg
        elif bkind == EV_PISTON:
            nhit = 2 if symmetric else 1
            for hh in range(nhit):
                i = bidx if hh == 0 else sidx
                pos[i, 0] = Q
                sg = 1.0 if side[i] == 1 else -1.0
                pre = sg * vel[i, 0]
                if symmetric:
                    post = -pre
                    w_new = W
                else:
                    wm = sg * W
                    if not pre > eps * wm:
                        counters[C_STOP] = STOP_ERROR
                        break
                    post, wm_new = resolve_particle_piston(pre, wm, eps)
                    w_new = sg * wm_new
                clean = pre > 0.0 and post < -eps * clean_speed
                vel[i, 0] = sg * post
                counters[C_PISTON] += 1
                if clean:
                    counters[C_CLEAN] += 1
                if log_on and counters[C_LOG] < log_cap:
                    r = counters[C_LOG]
                    log_t[r] = t
                    log_i[r, 0] = EV_PISTON
                    log_i[r, 1] = side[i]
                    log_i[r, 2] = i
                    log_i[r, 3] = 1 if clean else 0
                    log_f[r, 0] = Q
                    log_f[r, 1] = V
                    log_f[r, 2] = pre
                    log_f[r, 3] = post
                    counters[C_LOG] += 1
                if side[i] == 1:
                    dtn, j, sgh = _static_hit(k1, p1, v1, n1v, pos[i], vel[i])
                else:
                    dtn, j, sgh = _static_hit(k2, p2, v2, n2v, pos[i], vel[i])
                ts[i] = t + dtn
                js[i] = j
                ss[i] = sgh
                W = w_new
            if counters[C_STOP] == STOP_ERROR:
                break
            if symmetric:
                counters[C_EVENTS] += 1
        else:
            Q = 1.0 if V > 0.0 else 0.0
            pre = W
            W = -W
            counters[C_END] += 1
            if log_on and counters[C_LOG] < log_cap:
                r = counters[C_LOG]
                log_t[r] = t
                log_i[r, 0] = EV_END
                log_i[r, 1] = 0
                log_i[r, 2] = -1
                log_i[r, 3] = -1
                log_f[r, 0] = Q
                log_f[r, 1] = eps * pre
                log_f[r, 2] = math.nan
                log_f[r, 3] = math.nan
                counters[C_LOG] += 1
    fstate[0] = t
    fstate[1] = Q
    fstate[2] = W


# ---------------------------------------------------------------------------
# public types


@dataclass(frozen=True, eq=False)
class MicroState:
    """Full phase point.  ``pos``/``vel`` rows are particles; ``side[i]`` is 1 or 2.

    Side-1 particles come first.  ``W = V / eps`` is the scaled piston velocity.
    """

    t: float
    Q: float
    W: float
    eps: float
    pos: np.ndarray
    vel: np.ndarray
    side: np.ndarray

    def __post_init__(self):
        pos = np.array(self.pos, dtype=float)
        vel = np.array(self.vel, dtype=float)
        side = np.array(self.side, dtype=np.int64)
        if pos.shape != vel.shape or pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError("pos and vel must both have shape (n, 2) or (n, 3)")
        if side.shape != (pos.shape[0],) or not np.all(np.isin(side, (1, 2))):
            raise ValueError("side must list 1 or 2 per particle")
        if np.any(np.diff(side) < 0):
            raise ValueError("side-1 particles must precede side-2 particles")
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        for a in (pos, vel, side):
            a.setflags(write=False)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "vel", vel)
        object.__setattr__(self, "side", side)

    @property
    def V(self) -> float:
        return self.eps * self.W

    @property
    def M(self) -> float:
        return self.eps ** -2

    @property
    def n1(self) -> int:
        return int((self.side == 1).sum())

    @property
    def energies(self) -> np.ndarray:
        return 0.5 * np.einsum("ij,ij->i", self.vel, self.vel)

    @property
    def total_energy(self) -> float:
        return 0.5 * self.W**2 + math.fsum(self.energies)

    def slow(self) -> SlowState:
        e = self.energies
        return SlowState(self.Q, self.W, tuple(e[self.side == 1]), tuple(e[self.side == 2]))

    def v_perp(self) -> np.ndarray:
        """Velocity components towards the piston (positive means approaching)."""
        return np.where(self.side == 1, self.vel[:, 0], -self.vel[:, 0])


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    kind: str
    side: int
    j: int
    Q: float
    V: float
    v_perp_pre: float
    v_perp_post: float = math.nan
    clean: bool | None = None
    singular: bool = False


@dataclass(frozen=True)
class StopClock:
    """Stopping configuration: horizon, watched region and the near-parallel threshold constant.

    ``c1 = None`` selects ``5 sqrt(2 E_max)``; ``c1 <= 0`` disables the
    near-parallel stops.  ``check_region=False`` disables the region exit stop.
    """

    horizon: float
    region: Region = field(default_factory=Region)
    c1: float | None = None
    dtau: float = 1e-3
    check_region: bool = True
    max_events: int = 2**62

    def __post_init__(self):
        if not self.horizon >= 0.0:
            raise ValueError("horizon must be non-negative")
        if not self.dtau > 0.0:
            raise ValueError("dtau must be positive")

    @property
    def c1_value(self) -> float:
        if self.c1 is None:
            return 5.0 * math.sqrt(2.0 * self.region.e_max)
        return float(self.c1)

    @property
    def nsteps(self) -> int:
        return int(round(self.horizon / self.dtau))


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Slow variables on the grid ``tau = k * dtau`` up to the stopping time.

    ``states`` rows are ``[Q, W, E_1..., E_n]`` in particle order.
    ``stop_tau`` is the slow time at which the run stopped.
    """

    tau: np.ndarray
    states: np.ndarray
    stop_kind: str
    stop_tau: float
    final: MicroState
    n_events: int
    n_piston: int
    n_clean: int
    n_wall: int
    n_end: int
    events: dict | None = None

    @property
    def clean_fraction(self) -> float:
        return self.n_clean / self.n_piston if self.n_piston else 1.0

    @property
    def excluded(self) -> bool:
        return self.stop_kind in ("singular", "error")


def _tables(container: Container):
    a = container.flight_table(1).arrays()
    b = container.flight_table(2).arrays()
    return (*a, *b)


def run_trajectory(container: Container, initial: MicroState, stop: StopClock,
                   record_events: bool = False, chunk: int = 1_000_000) -> TrajectoryRecord:
    """Integrate the exact dynamics until the horizon or a stopping condition."""
    if initial.pos.shape[1] != container.dimension:
        raise ValueError("state dimension does not match container")
    n = initial.pos.shape[0]
    pos = np.array(initial.pos)
    vel = np.array(initial.vel)
    side = np.array(initial.side)
    fstate = np.array([initial.t, initial.Q, initial.W], dtype=float)
    nsteps = stop.nsteps
    if nsteps > 50_000_000:
        raise ValueError("sampling grid too fine for this horizon; raise dtau")
    grid = np.full((nsteps + 1, 2 + n), np.nan)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    ts = np.zeros(n)
    js = np.zeros(n, dtype=np.int64)
    ss = np.zeros(n, dtype=np.bool_)
    cap = chunk if record_events else 1
    logs_t, logs_i, logs_f = [], [], []
    bounds = stop.region.bounds()
    clean_speed = math.sqrt(2.0 * stop.region.e_max)
    if initial.t != 0.0:
        raise ValueError("trajectories start at t = 0 so the grid lines up with slow time")
    tabs = _tables(container)
    while True:
        log_t = np.zeros(cap)
        log_i = np.zeros((cap, 4), dtype=np.int64)
        log_f = np.zeros((cap, 4))
        counters[C_LOG] = 0
        counters[C_STOP] = STOP_RUNNING
        _run_kernel(*tabs, fstate, pos, vel, side, float(initial.eps), nsteps, float(stop.dtau),
                    bounds, bool(stop.check_region), stop.c1_value, clean_speed,
                    int(stop.max_events), int(chunk), ts, js, ss, grid, counters,
                    bool(record_events), log_t, log_i, log_f)
        if record_events:
            m = counters[C_LOG]
            logs_t.append(log_t[:m])
            logs_i.append(log_i[:m])
            logs_f.append(log_f[:m])
        if counters[C_STOP] != STOP_CHUNK:
            break
    k = int(counters[C_GRID])
    tau = np.arange(k) * stop.dtau
    final = MicroState(float(fstate[0]), float(fstate[1]), float(fstate[2]), initial.eps, pos, vel, side)
    events = None
    if record_events:
        events = {
            "t": np.concatenate(logs_t),
            "int": np.concatenate(logs_i) if logs_i else np.zeros((0, 4), dtype=np.int64),
            "float": np.concatenate(logs_f) if logs_f else np.zeros((0, 4)),
        }
    return TrajectoryRecord(
        tau=tau,
        states=grid[:k].copy(),
        stop_kind=STOP_NAMES[int(counters[C_STOP])],
        stop_tau=float(fstate[0]) * initial.eps,
        final=final,
        n_events=int(counters[C_EVENTS]),
        n_piston=int(counters[C_PISTON]),
        n_clean=int(counters[C_CLEAN]),
        n_wall=int(counters[C_WALL]),
        n_end=int(counters[C_END]),
        events=events,
    )


def write_trajectory_csv(record: TrajectoryRecord, target, n1: int) -> Path:
    """Slow-variable grid as CSV: ``tau, Q, W, E1_j..., E2_j...``."""
    target = Path(target)
    n2 = record.states.shape[1] - 2 - n1
    header = (["tau", "Q", "W"] + [f"E1_{j + 1}" for j in range(n1)]
              + [f"E2_{j + 1}" for j in range(n2)])
    with target.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for t, row in zip(record.tau, record.states):
            wr.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    return target


def write_events_csv(record: TrajectoryRecord, target) -> Path:
    """Event log as CSV: ``t, kind, side, j, Q, V, v_perp_pre, v_perp_post, clean``."""
    if record.events is None:
        raise ValueError("trajectory was run without record_events=True")
    target = Path(target)
    ev = record.events
    with target.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "kind", "side", "j", "Q", "V", "v_perp_pre", "v_perp_post", "clean"])
        for t, ii, ff in zip(ev["t"], ev["int"], ev["float"]):
            kind = EVENT_NAMES[int(ii[0])]
            side = "" if ii[1] == 0 else int(ii[1])
            j = "" if ii[2] < 0 else int(ii[2])
            clean = "" if ii[3] < 0 else int(ii[3])
            pre = "" if math.isnan(ff[2]) else repr(float(ff[2]))
            post = "" if math.isnan(ff[3]) else repr(float(ff[3]))
            wr.writerow([repr(float(t)), kind, side, j, repr(float(ff[0])), repr(float(ff[1])), pre, post, clean])
    return target


def next_event(container: Container, state: MicroState) -> CollisionEvent:
    """Earliest upcoming event; ``singular`` marks corner/tangent hits and shared ties."""
    V = state.V
    cands = []
    tabs = (container.flight_table(1), container.flight_table(2))
    for i in range(state.pos.shape[0]):
        s = int(state.side[i])
        dt, j, sg = _static_hit(*tabs[s - 1].arrays(), state.pos[i], state.vel[i])
        vp = state.v_perp()[i]
        cands.append((dt, EV_WALL, s, i, bool(sg) or j < 0, vp))
        dtp = _piston_dt(s, state.pos[i, 0], state.vel[i, 0], state.Q, V)
        cands.append((dtp, EV_PISTON, s, i, False, vp))
    cands.append((_end_dt(state.Q, V), EV_END, 0, -1, False, math.nan))
    cands.sort(key=lambda c: c[0])
    first, second = cands[0], cands[1]
    if not math.isfinite(first[0]):
        raise ValueError("no event ahead: a particle is outside its subdomain")
    singular = first[4]
    if second[0] - first[0] <= TIE_TOL:
        same_particle = first[3] >= 0 and first[3] == second[3]
        both_piston = {first[1], second[1]} <= {EV_PISTON, EV_END}
        singular = singular or same_particle or both_piston
    return CollisionEvent(state.t + first[0], EVENT_NAMES[first[1]], first[2], first[3],
                          state.Q, V, first[5], singular=singular)


def advance(state: MicroState, duration: float) -> MicroState:
    """Free flight of all bodies for ``duration`` (the caller guarantees no event inside)."""
    if duration == 0.0:
        return state
    return replace(state, t=state.t + duration, Q=state.Q + state.V * duration,
                   pos=state.pos + duration * state.vel)


def detect_stop(state: MicroState, stop: StopClock) -> set[str]:
    """Stopping conditions holding at this instant: ``T_eps``, ``T_prime``, ``T_dprime``."""
    fired = set()
    reg = stop.region
    h = np.concatenate([[state.Q, state.W], state.energies])
    if stop.check_region and not _contains_vec(h, reg.bounds()):
        fired.add("T_eps")
    c1 = stop.c1_value
    if c1 > 0.0:
        thr = c1 * state.eps
        for i in range(state.pos.shape[0]):
            x, vx = state.pos[i, 0], state.vel[i, 0]
            if abs(vx) > thr:
                continue
            if state.side[i] == 1 and reg.q_min <= x <= state.Q <= reg.q_max:
                fired.add("T_prime")
            if state.side[i] == 2 and reg.q_min <= state.Q <= x <= reg.q_max:
                fired.add("T_dprime")
    return fired
