import json
import os
import subprocess
import sys

import pytest

# run in fresh interpreters: the numba toggle is read once at import time
SCRIPT = """
import json, numpy as np
from pistonsim import _jit
from pistonsim.geometry import Container
from pistonsim.ensemble import sample_initial
from pistonsim.microsim import StopClock, run_trajectory
from pistonsim.billiard import santalo_check
from pistonsim.states import SlowState
c = Container.stadium(1.0)
rng = np.random.default_rng(3)
init = sample_initial(SlowState(0.5, 0.0, (0.75,), (0.5,)), c, 0.1, rng)
rec = run_trajectory(c, init, StopClock(horizon=0.2, c1=1.0))
est, _ = santalo_check(Container.rectangle(1.0), 1, 0.5, 0.5, 2000, np.random.default_rng(4))
print(json.dumps({"numba": _jit.NUMBA_ENABLED, "final": rec.final.slow().as_array().tolist(),
                  "events": rec.n_events, "santalo": est.estimate}))
"""


def _run(disable: bool) -> dict:
    env = dict(os.environ, PISTONSIM_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.slow
def test_pure_python_path_matches_compiled():
    fast, slow = _run(False), _run(True)
    assert fast["numba"] and not slow["numba"]
    assert fast["events"] == slow["events"]
    assert slow["final"] == pytest.approx(fast["final"], rel=1e-12, abs=1e-12)
    assert slow["santalo"] == pytest.approx(fast["santalo"], rel=1e-12)
