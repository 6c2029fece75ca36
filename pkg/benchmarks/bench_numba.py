"""Compare the numba kernels with the pure-Python fallback.

Each backend runs in a fresh interpreter because ``PISTONSIM_DISABLE_NUMBA``
is read at import time.  The workloads are small enough for the fallback to
finish in well under a minute; both backends must produce the same numbers.

    python benchmarks/bench_numba.py [--events 20000] [--samples 20000]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from pistonsim import _jit
from pistonsim.billiard import santalo_check
from pistonsim.ensemble import sample_initial
from pistonsim.geometry import Container
from pistonsim.microsim import StopClock, run_trajectory
from pistonsim.states import Region, SlowState

events, samples = int(sys.argv[1]), int(sys.argv[2])
c = Container.stadium(1.0)
h0 = SlowState(0.5, 0.0, (0.75,), (0.5,))

def micro():
    init = sample_initial(h0, c, 0.05, np.random.default_rng(1))
    stop = StopClock(horizon=1e6, region=Region(), c1=0.0, dtau=10.0, check_region=False, max_events=events)
    return run_trajectory(c, init, stop).final.total_energy

def santalo():
    return santalo_check(c, 1, 0.5, 0.5, samples, np.random.default_rng(2))[0].estimate

out = {"numba": _jit.NUMBA_ENABLED}
for name, fn in (("microsim", micro), ("santalo", santalo)):
    t0 = time.perf_counter(); fn(); first = time.perf_counter() - t0
    t0 = time.perf_counter(); val = fn(); warm = time.perf_counter() - t0
    out[name] = {"first_s": first, "warm_s": warm, "value": val}
print(json.dumps(out))
"""


def run(disable: bool, events: int, samples: int) -> dict:
    env = dict(os.environ)
    env.pop("PISTONSIM_DISABLE_NUMBA", None)
    if disable:
        env["PISTONSIM_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(events), str(samples)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=20_000)
    ap.add_argument("--samples", type=int, default=20_000)
    args = ap.parse_args(argv)
    fast = run(False, args.events, args.samples)
    slow = run(True, args.events, args.samples)
    print(f"{'workload':<10} {'numba warm':>12} {'numba 1st':>12} {'python':>12} {'speedup':>9}  agree")
    ok = True
    for name in ("microsim", "santalo"):
        f, s = fast[name], slow[name]
        agree = abs(f["value"] - s["value"]) <= 1e-12 * max(1.0, abs(s["value"]))
        ok &= agree
        print(f"{name:<10} {f['warm_s']:>11.3f}s {f['first_s']:>11.3f}s {s['warm_s']:>11.3f}s "
              f"{s['warm_s'] / f['warm_s']:>8.1f}x  {agree}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
