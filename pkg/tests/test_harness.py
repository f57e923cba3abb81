import json


import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alloyfreeze.errors import ConfigError
from alloyfreeze.field_core import Grid
from alloyfreeze.harness import (
    RunConfig, initial_state, main, parse_config, read_snapshot, run_batch, serialize_config,
    write_snapshot,
)

SMALL = """
grid: {nx: 10, ny: 10}
step: {dt: 0.05}
repro: {T: 0.5, eps_schedule: [0.1, 0.03]}
simulate: {t_end: 0.5}
"""

ZERO = SMALL + """
physics: {g_mag: 0.0, c_g: 0.0}
boundary:
  bottom: {kind: constant, value: 0.0}
  top: {kind: constant, value: 0.0}
initial: {c_perturbation: 0.0, theta_perturbation: 0.0}
"""


def test_defaults_and_round_trip():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert parse_config(serialize_config(cfg)) == cfg
    assert cfg.grid.nx == 24 and cfg.repro.fp_tol == 1e-8


@settings(max_examples=30, deadline=None)
@given(nx=st.integers(4, 64), dt=st.floats(1e-4, 0.1), eps=st.floats(1e-3, 1.0),
       amp=st.floats(-0.1, 0.1), cycles=st.integers(0, 3), seed=st.integers(0, 2**64 - 1),
       lam=st.lists(st.floats(0.05, 0.95), max_size=3))
def test_round_trip_property(nx, dt, eps, amp, cycles, seed, lam):
    text = (f"seed: {seed}\ngrid: {{nx: {nx}}}\nstep: {{dt: {dt!r}, eps: {eps!r}}}\n"
            f"repro: {{homotopy_schedule: {sorted(lam) + [1.0]}}}\n"
            f"boundary:\n  top: {{kind: tabulated, x: [0.0, 0.5, 1.0], values: [0.7, 0.9, 0.8], "
            f"amplitude: {amp!r}, cycles: {cycles}}}\n")
    cfg = parse_config(text)
    assert parse_config(serialize_config(cfg)) == cfg


@pytest.mark.parametrize("text, match", [
    ("grid:\n  nx: 10\n  nz: 3\n", r"line 3: grid\.nz: unknown key"),
    ("physics:\n  c_g: 0.9\n", "compatibility relation"),
    ("phase_diagram:\n  theta_E: 1.0\n  theta_F: 1.0\n", "theta_E < theta_F"),
    ("solver: {}\n", "unknown section"),
    ("grid: {nx: ten}\n", "expected an integer"),
    ("grid: {nx: 8}\ngrid: {nx: 9}\n", "duplicate key"),
    ("seed: -1\n", "unsigned 64-bit"),
    ("boundary:\n  top: {kind: cubic}\n", "kind must be one of"),
    ("step: {dt: 0.1, momentum_time_coeff: 2}\n", "momentum_time_coeff"),
    ("grid: [1, 2\n", "malformed"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_boundary_profiles_are_periodic():
    cfg = parse_config("repro: {T: 2.0}\nboundary:\n  top: {kind: linear, value: 0.5, slope: 0.2, amplitude: 0.1, cycles: 3, phase: 0.4}\n")
    bc = cfg.boundary()
    x = np.linspace(0, 1, 7)
    assert np.allclose(bc.top(x, 0.0), bc.top(x, 2.0), atol=1e-14)
    lo, hi = bc.bounds
    assert lo == pytest.approx(0.0) and hi == pytest.approx(0.8)


def test_initial_state_is_admissible():
    cfg = parse_config("")
    s = initial_state(cfg, seed=7)
    assert s.c.sum() * cfg.grid.cell_area == pytest.approx(cfg.physics.c_g, abs=1e-15)
    assert s.c.min() >= 0 and s.c.max() <= cfg.phase_diagram.c_E
    lo, hi = cfg.boundary().bounds
    assert lo <= s.theta.min() and s.theta.max() <= hi
    assert np.array_equal(initial_state(cfg, 7).c, s.c)
    assert not np.array_equal(initial_state(cfg, 8).c, s.c)


@pytest.mark.parametrize("binary", [False, True])
def test_snapshot_round_trip(tmp_path, rng, binary):
    g = Grid(6, 5, 2.0, 1.0)
    arr = rng.standard_normal((7, 5))
    p = write_snapshot(tmp_path / "u.dat", arr, g, 0.25, "u", binary=binary)
    back, meta = read_snapshot(p)
    assert np.array_equal(back, arr)
    assert meta["nx"] == 6 and meta["Lx"] == 2.0 and meta["t"] == 0.25 and meta["field"] == "u"


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_reproduce_zero_data(tmp_path):
    out = tmp_path / "o"
    assert main(["reproduce", "--config", write(tmp_path, ZERO), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["converged"] and rep["iterations"] == 1
    assert (out / "reproductive_c.txt").exists()


def test_cli_simulate_is_deterministic_and_checks(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a), "--seed", "5"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b), "--seed", "5"]) == 0
    assert (a / "timeseries.csv").read_bytes() == (b / "timeseries.csv").read_bytes()
    header = (a / "timeseries.csv").read_text().splitlines()[0]
    assert header == "t,normZ2,dissipation,c_min,c_max,theta_min,theta_max,total_solute,solid_v2,div_inf"
    assert main(["check", "--config", cfg, "--out", str(a)]) == 0
    summary = json.loads((a / "check_summary.json").read_text())
    assert summary["passed"] and summary["checks"]["energy"]["passed"]
    assert "overall.passed: true" in (a / "check_report.txt").read_text()


def test_cli_check_detects_injected_violation(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    ts = out / "timeseries.csv"
    lines = ts.read_text().splitlines()
    cols = lines[0].split(",")
    row = lines[3].split(",")
    row[cols.index("c_max")] = "1.5"
    lines[3] = ",".join(row)
    bad = out / "bad_timeseries.csv"
    bad.write_text("\n".join(lines) + "\n")
    for side in ("energy.csv", "meta.json"):
        (out / f"bad_{side}").write_bytes((out / side).read_bytes())
    assert main(["check", "--config", cfg, "--out", str(out), "--trajectory", str(bad)]) == 1
    assert "max_principles.passed: false" in (out / "check_report.txt").read_text()


def test_cli_error_codes(tmp_path):
    assert main(["simulate", "--config", write(tmp_path, "grid: {nx: 2}\n"), "--out", str(tmp_path)]) == 2
    assert main(["check", "--config", write(tmp_path, SMALL), "--out", str(tmp_path / "none")]) == 2
    cfl = SMALL.replace("step: {dt: 0.05}", "step: {dt: 0.1, cfl_max: 1.0e-6}")
    assert main(["simulate", "--config", write(tmp_path, cfl), "--out", str(tmp_path / "c")]) == 3
    nc = SMALL.replace("repro: {T: 0.5,", "repro: {T: 0.5, fp_max_iter: 1,")
    assert main(["reproduce", "--config", write(tmp_path, nc), "--out", str(tmp_path / "n")]) == 4


def test_cli_sweep(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep-eps", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    rows = (out / "eps_summary.csv").read_text().splitlines()
    assert rows[0] == "eps,iterations,residual,converged,solid_velocity_integral" and len(rows) == 3
    fit = json.loads((out / "scaling.json").read_text())
    assert fit["defined"] and fit["points"] == 2 and fit["K_cells"] > 0


def test_run_batch(tmp_path):
    cfg = write(tmp_path, ZERO)
    codes = run_batch([("simulate", cfg, str(tmp_path / f"r{i}"), i) for i in range(2)], max_workers=2)
    assert codes == [0, 0]
    assert (tmp_path / "r1" / "timeseries.csv").exists()
