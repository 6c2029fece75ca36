import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pistonsim import ensemble
from pistonsim.config import load_config
from pistonsim.ensemble import (
    EpsSummary,
    ExclusionError,
    ExperimentConfig,
    SampleResult,
    averaged_reference,
    bad_set_frequency,
    clopper_pearson,
    convergence_experiment,
    run_pair,
    sample_deviation,
    sample_initial,
    write_report_json,
    write_samples_csv,
)
from pistonsim.geometry import Container
from pistonsim.microsim import StopClock, run_trajectory
from pistonsim.states import Region, SlowState

H0 = SlowState(0.5, 0.0, (0.75,), (0.5,))


def _config(**kw):
    base = dict(container=Container.stadium(1.0), h0=H0, horizon=0.5, eps_grid=(0.2, 0.1),
                samples=10, seed=4, c1=1.0)
    base.update(kw)
    return ExperimentConfig(**base)


def test_sample_initial_matches_h0(stadium, rng):
    h0 = SlowState(0.4, 0.3, (0.5, 1.5), (0.2,))
    s = sample_initial(h0, stadium, 0.1, rng)
    assert s.Q == h0.Q and s.W == h0.W and s.t == 0.0
    np.testing.assert_allclose(np.linalg.norm(s.vel, axis=1), np.sqrt(2 * np.array([0.5, 1.5, 0.2])), rtol=1e-15)
    np.testing.assert_allclose(s.energies, [0.5, 1.5, 0.2], rtol=1e-15)
    assert list(s.side) == [1, 1, 2]
    assert s.pos[0, 0] < 0.4 < s.pos[2, 0]


def test_sample_initial_positions_uniform(square):
    # side 1 of the unit-height rectangle at Q = 0.5 is [0, 0.5] x [0, 1]
    rng = np.random.default_rng(2)
    h0 = SlowState(0.5, 0.0, 1.0, 1.0)
    pts = np.array([sample_initial(h0, square, 0.1, rng).pos[0] for _ in range(100_000)])
    counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=10, range=[[0, 0.5], [0, 1]])
    assert stats.chisquare(counts.ravel()).pvalue > 1e-3


def test_coupling_at_time_zero(stadium, rng):
    init = sample_initial(H0, stadium, 0.1, rng)
    rec = run_trajectory(stadium, init, StopClock(horizon=0.01, c1=1.0))
    ref = averaged_reference(_config())
    np.testing.assert_allclose(rec.states[0], ref.states[0], rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.permutations([0, 1, 2]), st.integers(0, 2**31))
def test_deviation_invariant_under_relabelling(perm, seed):
    r = np.random.default_rng(seed)
    micro = r.uniform(0, 1, size=(20, 6))  # n1 = 3, n2 = 1
    avg = r.uniform(0, 1, size=(20, 6))
    shuffled = micro.copy()
    shuffled[:, 2:5] = micro[:, 2:5][:, list(perm)]
    reg = Region()
    assert sample_deviation(shuffled, avg, 3, reg) == sample_deviation(micro, avg, 3, reg)
    assert sample_deviation(micro, micro, 3, reg) == 0.0


def test_run_pair_deterministic():
    cfg = _config()
    a, b = run_pair(cfg, 0.1, 3), run_pair(cfg, 0.1, 3)
    assert a == b
    assert a.D >= 0.0 and a.stop_tau <= cfg.horizon + 1e-12


def test_small_eps_equilibrium_deviation_small():
    cfg = _config(h0=SlowState(0.5, 0.0, 0.6, 0.6), horizon=1.0, eps_grid=(0.001,))
    res = run_pair(cfg, 0.001, 0)
    assert not res.excluded
    assert res.D <= 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        _config(samples=0)
    with pytest.raises(ValueError):
        _config(eps_grid=(0.1, 0.2))
    with pytest.raises(ValueError):
        _config(h0=SlowState(0.95, 0.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        _config(deltas=(-1.0,))


def test_large_delta_never_exceeded():
    cfg = _config(deltas=(Region().diameter + 0.01, 0.05))
    rep = convergence_experiment(cfg)
    for s in rep.summaries:
        assert s.exceed[repr(cfg.deltas[0])]["k"] == 0
        for d in s.exceed.values():
            assert 0.0 <= d["lo"] <= d["p"] <= d["hi"] <= 1.0
        assert 0.0 <= s.bad["lo"] <= s.bad["p"] <= s.bad["hi"] <= 1.0


def test_report_determinism_and_outputs(tmp_path):
    cfg = _config()
    r1, r2 = convergence_experiment(cfg), convergence_experiment(cfg)
    write_report_json(r1, tmp_path / "a.json")
    write_report_json(r2, tmp_path / "b.json")
    write_samples_csv(r1, tmp_path / "a.csv")
    write_samples_csv(r2, tmp_path / "b.csv")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "eps,seed,D,stop_kind,stop_tau,collisions,clean_fraction"
    assert r1.trend is not None and "median_strictly_decreasing" in r1.trend


def test_worker_pool_matches_serial():
    cfg = _config()
    assert convergence_experiment(cfg, jobs=2).samples == convergence_experiment(cfg).samples


def test_single_eps_has_no_trend():
    assert convergence_experiment(_config(eps_grid=(0.2,))).trend is None


def test_exclusion_threshold(monkeypatch):
    def fake(config, eps, index, reference=None):
        return SampleResult(eps, index, 0, math.nan, "singular", 0.0, 0, 1.0, 0, index % 4 == 0)

    monkeypatch.setattr(ensemble, "run_pair", fake)
    with pytest.raises(ExclusionError):
        convergence_experiment(_config(samples=20))


def _summary(eps, k, n=100):
    lo, hi = clopper_pearson(k, n)
    return EpsSummary(eps, n, 0, 0.1, {}, {"k": k, "p": k / n, "lo": lo, "hi": hi}, {})


def test_bad_set_linear_law():
    rep = bad_set_frequency([_summary(0.2, 16), _summary(0.1, 8), _summary(0.05, 4)])
    assert rep["ratio_largest_to_smallest"] == 4.0
    assert rep["linear_slope"] == pytest.approx(0.8, rel=1e-12)
    assert rep["linear_law_consistent"]
    rep = bad_set_frequency([_summary(0.2, 90), _summary(0.05, 1)])
    assert not rep["linear_law_consistent"]
    rep = bad_set_frequency([_summary(0.2, 3), _summary(0.05, 0)])
    assert rep["ratio_largest_to_smallest"] == math.inf


def test_clopper_pearson_matches_beta_quantiles():
    lo, hi = clopper_pearson(7, 50)
    assert lo == pytest.approx(stats.beta.ppf(0.025, 7, 44), rel=1e-9)
    assert hi == pytest.approx(stats.beta.ppf(0.975, 8, 43), rel=1e-9)
    assert clopper_pearson(0, 50)[0] == 0.0


def test_result_is_frozen():
    r = run_pair(_config(), 0.2, 0)
    with pytest.raises(dataclasses.FrozenInstanceError):
        r.D = 0.0


def test_slow_state_sampler_matches_weighted_oracle(cube):
    # oracle: uniform box draws reweighted by the Liouville density, no rejection
    reg = Region(q_min=0.2, q_max=0.8, w_max=1.0, e_floor=0.01, e_max=3.0)
    rng = np.random.default_rng(8)
    draws = np.array([ensemble.sample_slow_state(reg, cube, 1, 1, rng).as_array() for _ in range(20_000)])
    assert all(reg.contains(h) for h in draws[:200])
    r = np.random.default_rng(9)
    box = r.uniform([0.2, -1.0, 0.01, 0.01], [0.8, 1.0, 3.0, 3.0], size=(400_000, 4))
    inside = np.array([reg.contains(h) for h in box])
    w = inside * box[:, 0] * (1 - box[:, 0]) * np.sqrt(box[:, 2] * box[:, 3])
    for k in (0, 2):
        oracle = float((w * box[:, k]).sum() / w.sum())
        se = draws[:, k].std() / math.sqrt(len(draws))
        assert abs(draws[:, k].mean() - oracle) < 4 * se + 2e-3


def test_sampled_h0_experiment_runs_deterministically():
    cfg = _config(sample_h0=True, eps_grid=(0.2,))
    a, b = convergence_experiment(cfg), convergence_experiment(cfg)
    assert a.samples == b.samples
    assert len({r.D for r in a.samples}) > 1


def test_default_geometry_exclusions_below_one_percent():
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "stadium.yaml")
    exp = ExperimentConfig(cfg.container, cfg.initial, cfg.region, cfg.horizon, cfg.deltas, (0.1,),
                           200, cfg.seed, cfg.dtau, cfg.c1)
    rep = convergence_experiment(exp)
    assert rep.summaries[0].excluded / 200 < 0.01
