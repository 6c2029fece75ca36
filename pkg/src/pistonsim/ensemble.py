"""Paired micro/averaged runs and their statistics over an eps grid.

Every sample starts from the same slow state ``h0``: the piston at ``Q0``
with velocity ``eps * W0`` and each particle placed uniformly in its
subdomain with a uniform direction and speed ``sqrt(2 E_ij)``.  The
averaged path from ``h0`` is deterministic, so it is integrated once per
experiment.  Sample ``i`` uses the same random stream for every ``eps``
(common random numbers), which makes the eps-to-eps comparison sharper.

With ``sample_h0=True`` each sample first draws its own slow state from
the Liouville weight restricted to the region (see :func:`sample_slow_state`)
and the averaged path is integrated per sample.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .averaged import AveragedPath, integrate
from .geometry import Container, GeometryError
from .microsim import MicroState, StopClock, run_trajectory
from .states import Region, SlowState

__all__ = [
    "ConvergenceReport",
    "ExclusionError",
    "ExperimentConfig",
    "SampleResult",
    "bad_set_frequency",
    "clopper_pearson",
    "convergence_experiment",
    "run_pair",
    "sample_deviation",
    "sample_slow_state",
    "sample_initial",
    "write_report_json",
    "write_samples_csv",
]

log = logging.getLogger(__name__)

MAX_EXCLUDED = 0.2
REJECTION_LIMIT = 1_000_000


class ExclusionError(RuntimeError):
    """Too many samples hit singular configurations."""


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    container: Container
    h0: SlowState
    region: Region = field(default_factory=Region)
    horizon: float = 1.0
    deltas: tuple[float, ...] = (0.1,)
    eps_grid: tuple[float, ...] = (0.2, 0.1, 0.05)
    samples: int = 100
    seed: int = 0
    dtau: float = 1e-3
    c1: float | None = None
    sample_h0: bool = False

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        if not self.region.contains(self.h0):
            raise ValueError("initial slow state must lie inside the region")
        if not self.eps_grid or any(e <= 0.0 for e in self.eps_grid):
            raise ValueError("eps grid must be non-empty and positive")
        if any(b >= a for a, b in zip(self.eps_grid, self.eps_grid[1:])):
            raise ValueError("eps grid must be strictly decreasing")
        if self.samples < 10:
            raise ValueError("need at least 10 samples per eps")
        if not self.deltas or any(d <= 0.0 for d in self.deltas):
            raise ValueError("deltas must be positive")
        if not self.horizon > 0.0 or not self.dtau > 0.0:
            raise ValueError("horizon and dtau must be positive")

    def stop_clock(self, horizon: float) -> StopClock:
        return StopClock(horizon=horizon, region=self.region, c1=self.c1, dtau=self.dtau)


@dataclass(frozen=True)
class SampleResult:
    eps: float
    index: int
    seed: int
    D: float
    stop_kind: str
    stop_tau: float
    collisions: int
    clean_fraction: float
    events: int
    excluded: bool

    @property
    def bad(self) -> bool:
        """Stopped by a near-parallel particle before the horizon and the region exit."""
        return self.stop_kind in ("T_prime", "T_dprime")


def _seed_sequence(base: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base), int(index)])


def sample_seed(base: int, index: int) -> int:
    """Integer label of the stream for sample ``index`` (for reports)."""
    return int(_seed_sequence(base, index).generate_state(1, dtype=np.uint64)[0])


def sample_initial(h0: SlowState, container: Container, eps: float,
                   rng: np.random.Generator) -> MicroState:
    """Micro state with slow variables exactly ``h0``, uniform in the fibre."""
    dim = container.dimension
    energies = list(h0.E1) + list(h0.E2)
    sides = [1] * h0.n1 + [2] * h0.n2
    pos = np.empty((len(sides), dim))
    for i, s in enumerate(sides):
        lo, hi = container.bounding_box(s, h0.Q)
        for _ in range(REJECTION_LIMIT):
            p = rng.uniform(lo, hi)
            if container.contains(s, h0.Q, p) and _strictly_on_side(p, s, h0.Q):
                pos[i] = p
                break
        else:
            raise GeometryError(f"rejection sampling failed on side {s}")
    d = rng.normal(size=(len(sides), dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    vel = d * np.sqrt(2.0 * np.asarray(energies))[:, None]
    return MicroState(0.0, h0.Q, h0.W, eps, pos, vel, sides)


def sample_slow_state(region: Region, container: Container, n1: int, n2: int,
                      rng: np.random.Generator) -> SlowState:
    """Slow state drawn from the Liouville measure conditioned on the region.

    Integrating positions and velocity directions out of Liouville measure
    leaves the density ``|D_1(Q)|^n1 |D_2(Q)|^n2 prod_ij E_ij^((d-2)/2)`` in
    ``(Q, W, E)``; it is sampled by rejection from the bounding box of the region.
    """
    d = container.dimension
    cap1, cap2, ell = container.cap_measure(1), container.cap_measure(2), container.ell
    n = n1 + n2
    lo = np.concatenate([[region.q_min, -region.w_max], np.full(n, region.e_floor)])
    hi = np.concatenate([[region.q_max, region.w_max], np.full(n, region.e_max)])
    a = 0.5 * (d - 2)

    def log_weight(h):
        q, e = h[0], h[2:]
        return n1 * math.log(cap1 + ell * q) + n2 * math.log(cap2 + ell * (1.0 - q)) + a * np.log(e).sum()

    # separable bound: each factor is monotone in its own variable
    bound = (n1 * math.log(cap1 + ell * region.q_max) + n2 * math.log(cap2 + ell * (1.0 - region.q_min))
             + a * n * math.log(region.e_max))
    for _ in range(REJECTION_LIMIT):
        h = rng.uniform(lo, hi)
        if region.contains(h) and math.log(rng.uniform()) < log_weight(h) - bound:
            return SlowState.from_array(h, n1)
    raise GeometryError("rejection sampling of the slow state failed")


def _strictly_on_side(p, side, Q) -> bool:
    return p[0] < Q if side == 1 else p[0] > Q


def _sorted_rows(states: np.ndarray, n1: int) -> np.ndarray:
    out = states.copy()
    out[:, 2:2 + n1] = np.sort(out[:, 2:2 + n1], axis=1)
    out[:, 2 + n1:] = np.sort(out[:, 2 + n1:], axis=1)
    return out


def sample_deviation(micro: np.ndarray, averaged: np.ndarray, n1: int, region: Region) -> float:
    """Weighted max-norm distance between two sampled slow paths on their common grid.

    Energies are compared as sorted lists per side, so particle labels do not matter.
    """
    k = min(micro.shape[0], averaged.shape[0])
    if k == 0:
        return 0.0
    w = region.weights(micro.shape[1] - 2)
    diff = np.abs(_sorted_rows(micro[:k], n1) - _sorted_rows(averaged[:k], n1)) * w
    return float(diff.max())


def averaged_reference(config: ExperimentConfig) -> AveragedPath:
    return integrate(config.h0, config.container, config.horizon, config.dtau,
                     region=config.region, n1=config.h0.n1)


def run_pair(config: ExperimentConfig, eps: float, index: int,
             reference: AveragedPath | None = None) -> SampleResult:
    """One coupled sample: micro trajectory and averaged path from the same ``h0``."""
    rng = np.random.default_rng(_seed_sequence(config.seed, index))
    h0 = config.h0
    if config.sample_h0:
        h0 = sample_slow_state(config.region, config.container, h0.n1, h0.n2, rng)
        ref = integrate(h0, config.container, config.horizon, config.dtau, region=config.region, n1=h0.n1)
    else:
        ref = reference if reference is not None else averaged_reference(config)
    init = sample_initial(h0, config.container, eps, rng)
    horizon = float(ref.tau[-1]) if ref.exited else config.horizon
    rec = run_trajectory(config.container, init, config.stop_clock(horizon))
    kind = rec.stop_kind
    if kind == "horizon" and ref.exited:
        kind = "T_eps"
    D = sample_deviation(rec.states, ref.states, h0.n1, config.region)
    return SampleResult(
        eps=float(eps),
        index=int(index),
        seed=sample_seed(config.seed, index),
        D=D if not rec.excluded else math.nan,
        stop_kind=kind,
        stop_tau=rec.stop_tau,
        collisions=rec.n_piston,
        clean_fraction=rec.clean_fraction,
        events=rec.n_events,
        excluded=rec.excluded,
    )


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class EpsSummary:
    eps: float
    n: int
    excluded: int
    median_D: float
    exceed: dict  # delta -> {"p", "lo", "hi", "k"}
    bad: dict  # {"p", "lo", "hi", "k"}
    stop_kinds: dict


@dataclass(frozen=True)
class ConvergenceReport:
    summaries: tuple[EpsSummary, ...]
    samples: tuple[SampleResult, ...]
    trend: dict | None
    bad_set: dict

    def to_dict(self) -> dict:
        return {
            "per_eps": [asdict(s) for s in self.summaries],
            "trend": self.trend,
            "bad_set": self.bad_set,
            "grid_note": "region exit is checked on the sampling grid only",
        }


def _summarise(eps: float, rows: list[SampleResult], deltas) -> EpsSummary:
    kept = [r for r in rows if not r.excluded]
    n = len(kept)
    D = np.array([r.D for r in kept])
    exceed = {}
    for d in deltas:
        k = int((D >= d).sum())
        lo, hi = clopper_pearson(k, n)
        exceed[repr(d)] = {"k": k, "p": k / n if n else math.nan, "lo": lo, "hi": hi}
    kb = sum(r.bad for r in kept)
    lo, hi = clopper_pearson(kb, n)
    kinds: dict[str, int] = {}
    for r in rows:
        kinds[r.stop_kind] = kinds.get(r.stop_kind, 0) + 1
    return EpsSummary(eps, n, len(rows) - n, float(np.median(D)) if n else math.nan,
                      exceed, {"k": kb, "p": kb / n if n else math.nan, "lo": lo, "hi": hi},
                      dict(sorted(kinds.items())))


def _trend(summaries, deltas) -> dict | None:
    if len(summaries) < 2:
        return None
    med = [s.median_D for s in summaries]
    out = {"median_strictly_decreasing": all(b < a for a, b in zip(med, med[1:])), "exceedance": {}}
    for d in deltas:
        key = repr(d)
        ok = all(b.exceed[key]["lo"] <= a.exceed[key]["hi"] for a, b in zip(summaries, summaries[1:]))
        out["exceedance"][key] = {"non_increasing_within_ci": ok}
    return out


def bad_set_frequency(summaries) -> dict:
    """Bad-set frequencies per eps, largest/smallest eps ratio and the fitted slope of ``f = a * eps``."""
    eps = np.array([s.eps for s in summaries])
    p = np.array([s.bad["p"] for s in summaries])
    lo = np.array([s.bad["lo"] for s in summaries])
    hi = np.array([s.bad["hi"] for s in summaries])
    slope = float((eps @ p) / (eps @ eps))
    ratio = float(p[0] / p[-1]) if p[-1] > 0 else math.inf
    # a linear law f = a * eps needs one a inside every [lo/eps, hi/eps]
    a_lo, a_hi = float((lo / eps).max()), float((hi / eps).min())
    return {
        "eps": eps.tolist(),
        "frequency": p.tolist(),
        "ci_low": lo.tolist(),
        "ci_high": hi.tolist(),
        "ratio_largest_to_smallest": ratio,
        "linear_slope": slope,
        "linear_law_consistent": bool(a_lo <= a_hi),
    }


def _job(args):
    config, eps, index, ref = args
    return run_pair(config, eps, index, ref)


def convergence_experiment(config: ExperimentConfig, jobs: int = 1) -> ConvergenceReport:
    """Run ``samples`` coupled pairs at every eps and collect the statistics."""
    ref = averaged_reference(config)
    tasks = [(config, eps, i, ref) for eps in config.eps_grid for i in range(config.samples)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_job(t) for t in tasks]
    summaries = []
    for eps in config.eps_grid:
        rows = [r for r in results if r.eps == eps]
        s = _summarise(eps, rows, config.deltas)
        log.info("eps=%g median D=%.4g excluded=%d", eps, s.median_D, s.excluded)
        if s.excluded > MAX_EXCLUDED * len(rows):
            raise ExclusionError(f"eps={eps}: {s.excluded} of {len(rows)} samples singular")
        summaries.append(s)
    return ConvergenceReport(tuple(summaries), tuple(results), _trend(summaries, config.deltas),
                             bad_set_frequency(summaries))


def write_report_json(report: ConvergenceReport, path, extra: dict | None = None) -> Path:
    path = Path(path)
    body = report.to_dict()
    if extra:
        body.update(extra)
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def write_samples_csv(report: ConvergenceReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eps", "seed", "D", "stop_kind", "stop_tau", "collisions", "clean_fraction"])
        for r in report.samples:
            wr.writerow([repr(r.eps), r.seed, repr(r.D), r.stop_kind, repr(r.stop_tau),
                         r.collisions, repr(r.clean_fraction)])
    return path
