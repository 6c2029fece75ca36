import csv
import json
import textwrap
from pathlib import Path

import numpy as np
import pytest

from pistonsim import cli
from pistonsim.config import ConfigError, parse_config
from pistonsim.ensemble import ExclusionError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
container: {preset: stadium, ell: 1.0}
initial: {Q: 0.5, W: 0.0, E1: [0.75], E2: [0.5]}
dynamics: {eps: 0.1, horizon: 0.3, c1: 1.0}
seed: 12
experiment: {eps_grid: [0.2, 0.1], samples: 10, deltas: [0.1]}
verify: {Q: 1.0, E1: 0.5, samples: 4000, flux_horizon: 50.0, orbits: 2, ks_samples: 2000,
         involution_samples: 200, df_samples: 50}
"""


def _write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_simulate_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    code, _ = _run(["simulate", cfg, "--out", tmp_path / "o", "--dump-events"], capsys)
    assert code == 0
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert names == {"trajectory.csv", "events.csv", "summary.json", "manifest.json"}
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["energy_relative_drift"] < 1e-12
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config_hash"] == parse_config(SMALL).config_hash
    assert manifest["overrides"] == {"dump_events": True}


def test_seed_repeat_is_byte_identical(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert _run(["simulate", cfg, "--seed", 5, "--out", tmp_path / d, "--dump-events"], capsys)[0] == 0
    for f in ("trajectory.csv", "events.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert _run(["simulate", cfg, "--seed", 6, "--out", tmp_path / "c"], capsys)[0] == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "c" / "trajectory.csv").read_bytes()


def test_output_dir_from_environment(tmp_path, capsys, monkeypatch):
    cfg = _write(tmp_path, SMALL)
    monkeypatch.setenv("PISTONSIM_OUTPUT_DIR", str(tmp_path / "env"))
    assert _run(["average", cfg], capsys)[0] == 0
    assert (tmp_path / "env" / "averaged.csv").is_file()


def test_missing_container_file(tmp_path, capsys):
    cfg = _write(tmp_path, "container: nowhere/geom.yaml\n")
    code, out = _run(["simulate", cfg, "--out", tmp_path], capsys)
    assert code == 2
    assert "container file not found" in out.err and ":1 [container]" in out.err


def test_missing_config_file(tmp_path, capsys):
    assert _run(["average", tmp_path / "absent.yaml", "--out", tmp_path], capsys)[0] == 2


@pytest.mark.parametrize("text, needle", [
    ("container: {preset: stadium}\nregion: {q_min: 0.8, q_max: 0.2}\n", "q_min"),
    ("container: {preset: stadium}\nexperiment: {samples: 5}\n", "samples"),
    ("container: {preset: stadium}\nexperiment: {eps_grid: [0.1, 0.2]}\n", "eps_grid"),
    ("container: {preset: stadium}\ninitial: {Q: 0.95}\n", "outside the region"),
    ("container: {preset: stadium}\ndynamics: {eps: -1}\n", "eps"),
    ("container: {preset: stadium}\ndynamics: {epsilon: 0.1}\n", "epsilon"),
    ("container: {preset: stadium}\nseed: [1\n", "YAML"),
    ("container: {preset: stadium}\nexperiment: {sample_h0: 3}\n", "sample_h0"),
])
def test_bad_configs_exit_2(tmp_path, capsys, text, needle):
    cfg = _write(tmp_path, text)
    code, out = _run(["converge", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert needle in out.err
    assert not (tmp_path / "o").exists()


def test_config_error_reports_line_and_field():
    text = "container: {preset: stadium}\ndynamics:\n  eps: 0.1\n  horizon: -2\n"
    with pytest.raises(ConfigError) as ei:
        parse_config(text, "x.yaml")
    assert ei.value.line == 4 and ei.value.field_path == "dynamics.horizon"
    assert str(ei.value).startswith("x.yaml:4 [dynamics.horizon]")


def test_config_hash_ignores_layout():
    a = "container: {preset: stadium, ell: 1}\nseed: 3\ninitial: {E1: [0.75], Q: 0.5}\n"
    b = "# comment\nseed: 3\ninitial:\n  Q: 0.50\n  E1: [0.75]\ncontainer:\n  ell: 1.0\n  preset: stadium\n"
    assert parse_config(a).config_hash == parse_config(b).config_hash
    assert parse_config(a).config_hash != parse_config(a.replace("seed: 3", "seed: 4")).config_hash


def test_explicit_geometry_file_matches_preset():
    cfg = parse_config((CONFIGS / "stadium_explicit.yaml").read_text(), base_dir=CONFIGS)
    preset = parse_config("container: {preset: stadium, ell: 1.0}\n")
    assert cfg.container.cap_measure(1) == pytest.approx(preset.container.cap_measure(1), rel=1e-12)
    assert cfg.container.cap_measure(2) == pytest.approx(preset.container.cap_measure(2), rel=1e-12)


def _upward_crossings(tau, q, level):
    i = np.nonzero((q[:-1] < level) & (q[1:] >= level))[0]
    return tau[i] + (level - q[i]) * (tau[i + 1] - tau[i]) / (q[i + 1] - q[i])


def test_average_period_matches_csv(tmp_path, capsys):
    out = tmp_path / "o"
    assert _run(["average", CONFIGS / "rectangle_oscillation.yaml", "--out", out], capsys)[0] == 0
    summary = json.loads((out / "average_summary.json").read_text())
    data = np.loadtxt(out / "averaged.csv", delimiter=",", skiprows=1)
    ups = _upward_crossings(data[:, 0], data[:, 1], summary["q_star"])
    assert len(ups) >= 3
    assert np.all(np.abs(np.diff(ups) - summary["period"]) <= 1e-3)
    assert summary["q_star"] == pytest.approx(np.sqrt(2) / (1 + np.sqrt(2)), rel=1e-12)


def test_average_equilibrium_is_constant(tmp_path, capsys):
    out = tmp_path / "o"
    assert _run(["average", CONFIGS / "rectangle_equilibrium.yaml", "--out", out], capsys)[0] == 0
    with (out / "averaged.csv").open() as fh:
        rows = list(csv.reader(fh))
    cols = np.array(rows[1:], dtype=float)[:, 1:]
    assert np.ptp(cols, axis=0).max() == 0.0
    assert json.loads((out / "average_summary.json").read_text())["at_equilibrium"]


def test_verify_billiard_small(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.replace("preset: stadium", "preset: rectangle"))
    assert _run(["verify-billiard", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
    rep = json.loads((tmp_path / "o" / "verification.json").read_text())
    assert abs(rep["santalo"]["z"]) < 4
    assert rep["involution"]["max_error"] < 1e-10
    assert len(rep["singular_neighborhood"]) == 2


def test_converge_small(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert _run(["converge", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
    rep = json.loads((tmp_path / "o" / "convergence.json").read_text())
    assert [s["eps"] for s in rep["per_eps"]] == [0.2, 0.1]
    assert rep["trend"] is not None and rep["c1"] == 1.0
    lines = (tmp_path / "o" / "samples.csv").read_text().splitlines()
    assert len(lines) == 1 + 20


def test_converge_single_eps_omits_trend(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.replace("[0.2, 0.1]", "[0.2]"))
    assert _run(["converge", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
    assert json.loads((tmp_path / "o" / "convergence.json").read_text())["trend"] is None


def test_exclusion_exit_code(tmp_path, capsys, monkeypatch):
    def boom(config, jobs=1):
        raise ExclusionError("too many singular samples")

    monkeypatch.setattr(cli, "convergence_experiment", boom)
    cfg = _write(tmp_path, SMALL)
    code, out = _run(["converge", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 3 and "singular" in out.err
    assert (tmp_path / "o" / "manifest.json").is_file()
