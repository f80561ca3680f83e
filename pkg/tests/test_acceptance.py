"""End-to-end acceptance criteria 1-9.

Each test records one pass/fail line (printed in the terminal summary) before
asserting, so a red criterion still reports its measured numbers.
"""
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tlsfdtd.fitting import fit_powerlaw
from tlsfdtd.runner import run
from tlsfdtd.scenario import PACKAGED, load_scenario, parse_scenario

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]


def rel(a, b):
    return abs(a / b - 1)


def with_model(name, model):
    doc = json.loads((PACKAGED / f"{name}.json").read_text())
    for t in doc["tls"]:
        t["model"] = model
    return parse_scenario(doc)


def test_criterion_1_vacuum_decay(record_criterion):
    g = {}
    lines = []
    ok = True
    for d in (0.005, 0.01):
        rec = run(load_scenario("single_tls_vacuum_2d", {"dipole": d}))
        g[d] = rec.results["gamma"]
        e = rel(g[d], rec.oracle["gamma_vac"])
        ok &= e <= 0.02
        lines.append(f"d={d}: G/Gvac-1={e:.4f}")
    ratio = g[0.01] / g[0.005]
    ok &= rel(ratio, 4.0) <= 0.03
    lines.append(f"rate ratio {ratio:.4f}")
    record_criterion(1, ok, "; ".join(lines))
    assert ok


def test_criterion_2_mirror_sweep(record_criterion):
    worst, rows = 0.0, []
    for h in np.round(np.arange(0.4, 4.01, 0.4), 10):
        rec = run(load_scenario("mirror_2d", {"h": h}))
        e = rel(rec.results["gamma"], rec.oracle["gamma_env"])
        worst = max(worst, e)
        rows.append(f"{h:g}:{rec.results['gamma_over_vac']:.3f}/{rec.oracle['gamma_env_over_vac']:.3f}")
    ok = worst <= 0.05
    record_criterion(2, ok, f"worst rel err {worst:.4f}; h:G/Gvac sim/oracle " + " ".join(rows))
    assert ok


def test_criterion_3_scattering(record_criterion):
    rec = run(load_scenario("scattering_3d"))
    abl = run(load_scenario("scattering_3d_ablation"))
    r, o = rec.results, rec.oracle
    ok = (r.get("fit_ok") == 1.0
          and rel(r["peak"], o["sigma0"]) <= 0.10
          and rel(r["center"], o["omega0"]) <= 0.005
          and rel(r["fwhm"], o["gamma_vac"]) <= 0.10
          and abl.results["raw_peak_over_sigma0"] < 0.05
          and abl.results["raw_center_shift"] > 0.005)
    record_criterion(3, ok, f"peak/s0={r['peak'] / o['sigma0']:.4f} center/w0={r['center'] / o['omega0']:.5f} "
                            f"fwhm/Gvac={r['fwhm'] / o['gamma_vac']:.4f}; ablation peak/s0="
                            f"{abl.results['raw_peak_over_sigma0']:.2e} shift={abl.results['raw_center_shift']:.4f}")
    assert ok


def _pair_sweep(name, ds):
    out = {}
    for d in ds:
        out[d] = run(load_scenario(name, {"d": d}))
    return out


def test_criterion_4_two_tls_vacuum(record_criterion):
    recs = _pair_sweep("two_tls_vacuum_2d", (0.05, 0.2, 0.5, 1.0))
    ok, parts = True, []
    for d, rec in recs.items():
        r, o = rec.results, rec.oracle
        e1 = rel(r["gamma12_over_vac"], o["gamma12_over_vac"])
        e2 = rel(r["g12_over_vac"], o["g12_over_vac"])
        ok &= e1 <= 0.10 and e2 <= 0.10
        parts.append(f"d={d:g}: G12 err {e1:.3f}, g12 err {e2:.3f}")
    p2 = recs[1.0].results["p2_before_arrival"]
    ok &= p2 < 1e-6
    parts.append(f"P2 before arrival at d=1: {p2:.2e}")
    record_criterion(4, ok, "; ".join(parts))
    assert ok


def test_criterion_5_two_tls_waveguide(record_criterion):
    recs = _pair_sweep("two_tls_waveguide_2d", (0.2, 0.6, 1.4, 2.2))
    ok, parts = True, []
    for d, rec in recs.items():
        s, o = rec.results["gamma12_over_vac"], rec.oracle["gamma12_over_vac"]
        ok &= np.sign(s) == np.sign(o) and rel(s, o) <= 0.15
        parts.append(f"d={d:g}: {s:+.4f} vs {o:+.4f}")
    record_criterion(5, ok, "G12/Gvac sim vs oracle " + "; ".join(parts))
    assert ok


def test_criterion_6_superradiance(record_criterion):
    r22 = run(load_scenario("superradiance_2x2_3d"))
    r33 = run(load_scenario("superradiance_3x3_3d"))
    r33w = run(load_scenario("superradiance_3x3_3d", {"d": 0.16}))
    e22 = rel(r22.results["gamma"], r22.oracle["n_gamma_vac"])
    e33 = rel(r33.results["gamma"], r33.oracle["n_gamma_vac"])
    lower = r33w.results["gamma"] < r33.results["gamma"]
    ok = e22 <= 0.10 and e33 <= 0.15 and lower
    record_criterion(6, ok, f"2x2 G/NGvac={r22.results['gamma_over_n_vac']:.4f}, "
                            f"3x3 G/NGvac={r33.results['gamma_over_n_vac']:.4f}, "
                            f"3x3 at 0.16: {r33w.results['gamma_over_n_vac']:.4f}")
    assert ok


def test_criterion_7_cavity_analogue(record_criterion):
    empty = run(load_scenario("cavity_empty_2d_analogue"))
    recs = {n: run(load_scenario("cavity_ring_2d_analogue", {"N": n})) for n in (1, 2, 3, 4)}
    n_dips = {n: int(r.results["n_dips"]) for n, r in recs.items()}
    split = np.array([recs[n].results["splitting"] for n in (1, 2, 3, 4)])
    try:
        p = fit_powerlaw(np.array([1.0, 2, 3, 4]), split)["exponent"]
    except ValueError:
        p = float("nan")
    ok = int(empty.results["n_dips"]) == 1 and n_dips[1] == 3 and 0.40 <= p <= 0.55
    record_criterion(7, ok, f"empty dips={int(empty.results['n_dips'])}, N=1 dips={n_dips[1]}, "
                            f"splittings={np.round(split, 5).tolist()}, exponent={p:.4f}")
    assert ok


def test_criterion_8_baselines(record_criterion):
    sch = run(load_scenario("baseline_schrodinger_2d"))
    blo = run(load_scenario("baseline_bloch_2d"))
    amp = run(with_model("baseline_bloch_2d", "amplitude"))
    eb = rel(blo.results["gamma"], blo.oracle["gamma_vac"])
    ea = rel(amp.results["gamma"], amp.oracle["gamma_vac"])
    ok = sch.results["min_P0"] > 0.999 and eb <= 0.02 and ea <= 0.02
    record_criterion(8, ok, f"Schrodinger min P={sch.results['min_P0']:.6f}; "
                            f"Bloch G/Gvac-1={eb:.4f}; amplitude G/Gvac-1={ea:.4f}")
    assert ok


def test_criterion_9_property_suites(record_criterion):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           "-m", "trivial or property", "--ignore", str(ROOT / "tests" / "test_acceptance.py"),
                           str(ROOT / "tests")], capture_output=True, text=True, cwd=ROOT)
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0
    record_criterion(9, ok, last)
    assert ok, proc.stdout[-3000:]
