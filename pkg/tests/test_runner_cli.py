import json
import os
import subprocess
import sys

import numpy as np
import pytest

from tlsfdtd import oracles
from tlsfdtd.cli import main
from tlsfdtd.runner import SweepError, read_csv, run, sweep
from tlsfdtd.scenario import ScenarioError, packaged_scenarios, parse_scenario


def small(**extra):
    """Fast single-emitter scenario: a strong dipole decays within a few periods."""
    doc = {
        "schema_version": 1,
        "name": "small",
        "params": {"d": 0.2},
        "grid": {"dim": 2, "cells": [60, 60]},
        "tls": [{"position": [1.525, 1.5], "dipole": ["$d", 0], "b0": [0.6, 0.0]}],
        "run": {"max_lifetimes": 1.0, "output_every": 4},
        "analysis": {"kind": "decay", "signal": "P0", "window": [1e-3, 0.95]},
        "verify": [{"quantity": "gamma", "oracle": "gamma_vac", "check": "rel", "tol": 0.5}],
    }
    doc.update(extra)
    return doc


@pytest.fixture
def scenario_file(tmp_path):
    def write(doc, name="s.json"):
        p = tmp_path / name
        p.write_text(json.dumps(doc))
        return str(p)
    return write


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rec = run(parse_scenario(small()), out)
    return rec, out


# -- outputs -----------------------------------------------------------------------

@pytest.mark.trivial
def test_timeseries_csv(small_run):
    rec, out = small_run
    text = (out / "timeseries.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "t,n_exc,field_energy,re_b0,im_b0,P0"
    header, data = read_csv(out / "timeseries.csv")
    # 17 significant digits: every value comes back bit for bit
    assert np.array_equal(data[:, 0], rec.t) and np.array_equal(data[:, 5], rec.P[:, 0])
    assert np.all(np.diff(data[:, 0]) > 0)
    assert data[0, 1] == pytest.approx(0.36, rel=1e-15)
    for row in lines[1:]:
        assert row.count(",") == 5


@pytest.mark.trivial
def test_summary_and_scenario_copy(small_run):
    rec, out = small_run
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scenario_hash"] == rec.scenario_hash
    assert summary["passed"] is True and summary["results"]["gamma"] > 0
    again = parse_scenario((out / "scenario.json").read_text())
    from tlsfdtd.scenario import scenario_hash
    assert scenario_hash(again) == rec.scenario_hash


@pytest.mark.property
def test_repeat_run_byte_identical(small_run, tmp_path):
    _, out = small_run
    run(parse_scenario(small()), tmp_path)
    assert (tmp_path / "timeseries.csv").read_bytes() == (out / "timeseries.csv").read_bytes()


@pytest.mark.property
def test_thread_count_does_not_change_results(tmp_path, scenario_file):
    doc = small(grid={"dim": 3, "cells": [30, 30, 30]})
    doc["tls"][0]["position"] = [0.775, 0.75, 0.75]
    doc["tls"][0]["dipole"] = ["$d", 0, 0]
    doc["run"] = {"t_max": 1.0, "output_every": 4}
    doc["verify"] = []
    path = scenario_file(doc)
    env = dict(os.environ, NUMBA_NUM_THREADS="2")
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"th{threads}"
        subprocess.run([sys.executable, "-m", "tlsfdtd.cli", "run", path, "--out", str(out),
                        "--threads", threads], check=True, env=env, capture_output=True)
        outs.append((out / "timeseries.csv").read_bytes())
    assert outs[0] == outs[1]


# -- sweeps ------------------------------------------------------------------------

@pytest.mark.trivial
def test_sweep_argument_errors():
    with pytest.raises(ValueError):
        sweep(small(), "d", [])
    with pytest.raises(ScenarioError, match="not a declared"):
        sweep(small(), "gap", [1.0])


def test_sweep_keeps_completed_rows(tmp_path):
    with pytest.raises(SweepError) as exc:
        sweep(small(), "d", [0.2, 0.0], tmp_path)
    assert [r["d"] for r in exc.value.rows] == [0.2]
    header, data = read_csv(tmp_path / "sweep.csv")
    assert header[0] == "d" and data.shape[0] == 1
    assert isinstance(exc.value.__cause__, ScenarioError)


def test_sweep_rows(tmp_path):
    rows = sweep(small(), "d", [0.2, 0.25], tmp_path)
    g = [r["gamma"] for r in rows]
    # rate grows with the dipole squared
    assert g[1] / g[0] == pytest.approx((0.25 / 0.2) ** 2, rel=0.05)
    assert (tmp_path / "d=0.25" / "timeseries.csv").exists()


# -- CLI exit codes ----------------------------------------------------------------

@pytest.mark.trivial
def test_cli_run_ok(scenario_file, tmp_path, capsys):
    assert main(["run", scenario_file(small()), "--out", str(tmp_path / "o"), "--verify"]) == 0
    assert "[PASS] gamma" in capsys.readouterr().out


@pytest.mark.trivial
def test_cli_invalid_scenario(scenario_file, capsys):
    doc = small()
    doc["tls"][0]["dipole"] = [0.1, 0.1]
    assert main(["run", scenario_file(doc)]) == 1
    assert "TLS 0: dipole must be nonzero" in capsys.readouterr().err
    assert main(["run", "no_such_scenario"]) == 1
    assert main(["run", scenario_file(small()), "--set", "gap=1"]) == 1


@pytest.mark.trivial
def test_cli_verification_failure(scenario_file, tmp_path, capsys):
    doc = small(verify=[{"quantity": "gamma", "oracle": 0.0, "check": "lt"}])
    path = scenario_file(doc)
    assert main(["run", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", path, "--out", str(tmp_path / "b"), "--verify"]) == 3
    assert "[FAIL] gamma" in capsys.readouterr().out


@pytest.mark.trivial
def test_cli_instability(scenario_file, tmp_path, monkeypatch, capsys):
    from tlsfdtd import tfif
    monkeypatch.setattr(tfif.TlsSystem, "all_finite", lambda self: False)
    assert main(["run", scenario_file(small()), "--out", str(tmp_path / "o")]) == 2
    assert main(["sweep", scenario_file(small()), "--param", "d", "--values", "0.2",
                 "--out", str(tmp_path / "s")]) == 2


@pytest.mark.trivial
def test_cli_sweep_exit_codes(scenario_file, tmp_path):
    path = scenario_file(small())
    assert main(["sweep", path, "--param", "d", "--values", "0.2,0", "--out", str(tmp_path / "a")]) == 1
    assert main(["sweep", path, "--param", "zz", "--values", "1"]) == 1


# -- other subcommands -------------------------------------------------------------

@pytest.mark.trivial
def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in packaged_scenarios():
        assert name in out


@pytest.mark.trivial
def test_cli_oracle_gamma(capsys):
    assert main(["oracle", "gamma", "--dipole", "0.01", "--dim", "3"]) == 0
    g = json.loads(capsys.readouterr().out)["gamma_vac"]
    assert g == oracles.gamma_vac(2 * np.pi, 0.01, 3)


@pytest.mark.trivial
def test_cli_oracle_green_rates(capsys):
    assert main(["oracle", "green", "--env", "vacuum3d", "--ra", "0,0,0", "--rb", "0.3,0,0",
                 "--di", "0,0,0.01"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert set(res) >= {"re", "im", "gamma_ij", "g_ij"} and res["coincident"] is False


@pytest.mark.trivial
def test_cli_master_then_fit(tmp_path, capsys):
    csv = tmp_path / "m.csv"
    assert main(["oracle", "master", "--gamma11", "1", "--gamma12", "0.4", "--g12", "1.5",
                 "--t-max", "6", "--out", str(csv)]) == 0
    capsys.readouterr()
    assert main(["fit", str(csv), "--model", "master"]) == 0
    p = json.loads(capsys.readouterr().out)["params"]
    assert p["gamma11"] == pytest.approx(1.0, abs=1e-6)
    assert p["gamma12"] == pytest.approx(0.4, abs=1e-6)
    assert p["g12"] == pytest.approx(1.5, abs=1e-6)


@pytest.mark.trivial
def test_cli_fit_exp_on_run_output(small_run, capsys):
    rec, out = small_run
    assert main(["fit", str(out / "timeseries.csv"), "--model", "exp", "--y", "P0",
                 "--window", "1e-3,0.95"]) == 0
    g = json.loads(capsys.readouterr().out)["params"]["gamma"]
    assert g == pytest.approx(rec.results["gamma"], rel=1e-12)


@pytest.mark.trivial
def test_cli_fit_errors(small_run, tmp_path):
    _, out = small_run
    assert main(["fit", str(out / "timeseries.csv"), "--model", "lorentzian"]) == 1
    empty = tmp_path / "e.csv"
    empty.write_text("t,P0\n")
    assert main(["fit", str(empty), "--model", "exp"]) == 1


@pytest.mark.trivial
def test_plot_deterministic(small_run, tmp_path):
    _, out = small_run
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["plot", str(out / "timeseries.csv"), "--kind", "timeseries", "--out", str(a), "--log"]) == 0
    assert main(["plot", str(out / "timeseries.csv"), "--kind", "timeseries", "--out", str(b), "--log"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().lstrip().startswith("<?xml")


@pytest.mark.trivial
def test_plot_errors(small_run, tmp_path):
    _, out = small_run
    ts = str(out / "timeseries.csv")
    assert main(["plot", ts, "--kind", "spectrum", "--out", str(tmp_path / "x.svg")]) == 1
    assert main(["plot", ts, "--kind", "timeseries", "--columns", "nope"]) == 1
    assert main(["plot", str(tmp_path / "missing.csv"), "--kind", "timeseries"]) == 1
