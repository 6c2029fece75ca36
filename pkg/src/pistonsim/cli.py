"""``pistonsim`` command line: simulate, average, verify-billiard, converge.

Every subcommand reads one YAML config and writes its outputs into a
directory (``--out``, else ``$PISTONSIM_OUTPUT_DIR``, else
``./pistonsim-out``).  Primary outputs are byte-identical across re-runs of
the same config and seed; only ``manifest.json`` carries timestamps.

Exit codes: 0 success, 2 config error, 3 too many excluded (singular) samples.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .averaged import integrate, period_and_equilibrium, write_path_csv
from .billiard import (
    df_norm_diagnostic,
    involution_check,
    invariance_ks,
    kac_check,
    momentum_flux_average,
    pressure_target,
    santalo_check,
    singularity_neighborhood_measure,
)
from .config import ConfigError, RunConfig, canonical_hash, load_config
from .ensemble import (
    ExclusionError,
    ExperimentConfig,
    _seed_sequence,
    convergence_experiment,
    sample_initial,
    write_report_json,
    write_samples_csv,
)
from .geometry import GeometryError
from .microsim import StopClock, run_trajectory, write_events_csv, write_trajectory_csv

__all__ = ["RunManifest", "build_parser", "canonical_hash", "main", "verification_bundle"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXCLUDED = 3

log = logging.getLogger("pistonsim")


@dataclass
class RunManifest:
    command: str
    config_path: str
    config_hash: str
    code_version: str
    seed: int
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    overrides: dict = field(default_factory=dict)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get("PISTONSIM_OUTPUT_DIR") or "pistonsim-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, args, out: Path) -> list[Path]:
    eps = args.eps if args.eps is not None else cfg.eps
    horizon = args.horizon if args.horizon is not None else cfg.horizon
    seed = args.seed if args.seed is not None else cfg.seed
    if not eps > 0 or not horizon > 0:
        raise ConfigError("--eps and --horizon must be positive", "<command line>")
    rng = np.random.default_rng(_seed_sequence(seed, 0))
    init = sample_initial(cfg.initial, cfg.container, eps, rng)
    stop = StopClock(horizon=horizon, region=cfg.region, c1=cfg.c1, dtau=cfg.dtau,
                     max_events=cfg.max_events)
    rec = run_trajectory(cfg.container, init, stop, record_events=args.dump_events)
    paths = [write_trajectory_csv(rec, out / "trajectory.csv", cfg.initial.n1)]
    if args.dump_events:
        paths.append(write_events_csv(rec, out / "events.csv"))
    e0, e1 = init.total_energy, rec.final.total_energy
    summary = {
        "eps": eps,
        "seed": seed,
        "horizon": horizon,
        "stop_kind": rec.stop_kind,
        "stop_tau": rec.stop_tau,
        "events": rec.n_events,
        "piston_collisions": rec.n_piston,
        "clean_collisions": rec.n_clean,
        "clean_fraction": rec.clean_fraction,
        "wall_collisions": rec.n_wall,
        "endwall_collisions": rec.n_end,
        "energy_initial": e0,
        "energy_final": e1,
        "energy_relative_drift": abs(e1 - e0) / e0 if e0 else 0.0,
        "final_slow_state": rec.final.slow().as_array().tolist(),
    }
    paths.append(_dump_json(summary, out / "summary.json"))
    if rec.excluded:
        raise ExclusionError(f"trajectory stopped as {rec.stop_kind}")
    return paths


def cmd_average(cfg: RunConfig, args, out: Path) -> list[Path]:
    path = integrate(cfg.initial, cfg.container, cfg.horizon, cfg.dtau, region=cfg.region)
    paths = [write_path_csv(path, out / "averaged.csv")]
    summary = {"horizon": cfg.horizon, "dtau": cfg.dtau, "exit_tau": path.exit_tau,
               "rejected_steps": int(path.rejected_steps)}
    try:
        osc = period_and_equilibrium(cfg.initial, cfg.container, dtau=cfg.dtau)
        summary.update(q_star=osc.q_star, period=osc.period, turning_points=list(osc.turning_points),
                       at_equilibrium=osc.at_equilibrium, confining=osc.confining)
    except (ValueError, RuntimeError) as e:
        summary["oscillation_error"] = str(e)
    paths.append(_dump_json(summary, out / "average_summary.json"))
    return paths


def verification_bundle(cfg: RunConfig, rng: np.random.Generator) -> dict:
    """Every frozen-billiard check on side 1 at the configured piston position."""
    v, c = cfg.verify, cfg.container
    Q, E1, N = v["Q"], v["E1"], int(v["samples"])
    out: dict = {"Q": Q, "E1": E1, "dimension": c.dimension}
    rec, nsing = santalo_check(c, 1, Q, E1, N, rng)
    out["santalo"] = {**asdict(rec), "singular": nsing}
    kac = kac_check(c, 1, Q, E1, N, rng)
    out["kac"] = {"return_time": asdict(kac.returns), "flight_time": asdict(kac.flight),
                  "singular": kac.singular, "nonreturn": kac.nonreturn}
    out["momentum_expectation"] = asdict(kac.momentum)
    med, vals = momentum_flux_average(c, 1, Q, E1, v["flux_horizon"], rng, int(v["orbits"]))
    target = pressure_target(c, 1, Q, E1)
    out["momentum_flux"] = {"target": target, "median": med, "relative_error": (med - target) / target,
                            "orbits": vals.tolist(), "horizon": v["flux_horizon"]}
    out["measure_invariance_ks"] = invariance_ks(c, 1, Q, int(v["ks_samples"]), rng)
    err, n = involution_check(c, 1, Q, int(v["involution_samples"]), rng)
    out["involution"] = {"max_error": err, "samples": n}
    out["df_norm"] = df_norm_diagnostic(c, 1, Q, E1, int(v["df_samples"]), rng)
    out["singular_neighborhood"] = []
    for g in v["gammas"]:
        p, se = singularity_neighborhood_measure(c, 1, Q, g, N, rng)
        out["singular_neighborhood"].append({"gamma": g, "measure": p, "stderr": se})
    return out


def cmd_verify_billiard(cfg: RunConfig, args, out: Path) -> list[Path]:
    rng = np.random.default_rng(_seed_sequence(cfg.seed, 0))
    return [_dump_json(verification_bundle(cfg, rng), out / "verification.json")]


def cmd_converge(cfg: RunConfig, args, out: Path) -> list[Path]:
    try:
        exp = ExperimentConfig(cfg.container, cfg.initial, cfg.region, cfg.horizon, cfg.deltas,
                               cfg.eps_grid, cfg.samples, cfg.seed, cfg.dtau, cfg.c1, cfg.sample_h0)
    except ValueError as e:
        raise ConfigError(str(e), cfg.source) from None
    report = convergence_experiment(exp, jobs=args.jobs)
    extra = {"config_hash": cfg.config_hash, "c1": exp.stop_clock(1.0).c1_value}
    return [write_report_json(report, out / "convergence.json", extra),
            write_samples_csv(report, out / "samples.csv")]


COMMANDS = {
    "simulate": cmd_simulate,
    "average": cmd_average,
    "verify-billiard": cmd_verify_billiard,
    "converge": cmd_converge,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pistonsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pistonsim {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--out", help="output directory (default $PISTONSIM_OUTPUT_DIR or ./pistonsim-out)")
        if name == "simulate":
            p.add_argument("--eps", type=float)
            p.add_argument("--seed", type=int)
            p.add_argument("--horizon", type=float, help="slow-time horizon T")
            p.add_argument("--dump-events", action="store_true", help="also write events.csv")
        if name == "converge":
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _now()
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args.out)
    overrides = {k: getattr(args, k) for k in ("eps", "seed", "horizon", "dump_events", "jobs")
                 if getattr(args, k, None) not in (None, False)}
    seed = overrides.get("seed", cfg.seed)
    manifest = RunManifest(args.command, str(args.config), cfg.config_hash, __version__, seed,
                           started, overrides=overrides)
    code = EXIT_OK
    try:
        paths = COMMANDS[args.command](cfg, args, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as e:
        print(f"config error: {cfg.source}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ExclusionError as e:
        print(f"excluded: {e}", file=sys.stderr)
        paths = sorted(p for p in out.iterdir() if p.name != "manifest.json")
        code = EXIT_EXCLUDED
    manifest.outputs = [str(p) for p in paths]
    manifest.finished = _now()
    _dump_json(asdict(manifest), out / "manifest.json")
    if code == EXIT_OK:
        for p in paths:
            print(p)
    return code


if __name__ == "__main__":
    sys.exit(main())

