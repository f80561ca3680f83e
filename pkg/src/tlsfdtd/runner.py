"""Run orchestration: time loop, stop criteria, analyses, verification, outputs."""
from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fitting, oracles
from .monitors import scattering_cross_section
from .scenario import (GuidedMode, PlaneWave, Scenario, ScenarioError, build, dump_scenario,
                       load_scenario, parse_scenario, scenario_hash)

FMT = "%.17g"


class InstabilityError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite field or amplitude detected at step {step}")


class SweepError(RuntimeError):
    def __init__(self, message: str, rows: list[dict]):
        self.rows = rows
        super().__init__(message)


@dataclass
class RunRecord:
    name: str
    scenario_hash: str
    t: np.ndarray
    b: np.ndarray
    P: np.ndarray
    n_exc: np.ndarray
    energy: np.ndarray
    spectra: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)
    steps: int = 0
    dt: float = 0.0
    wall_time: float = 0.0
    stop_reason: str = ""
    results: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


# -- time loop -----------------------------------------------------------------

def _step_budget(sc: Scenario, system, dt: float) -> tuple[int, str]:
    limits = []
    if sc.run.max_steps is not None:
        limits.append((sc.run.max_steps, "max_steps"))
    if sc.run.t_max is not None:
        limits.append((int(math.ceil(sc.run.t_max / dt - 1e-9)), "t_max"))
    rates = [g for g in system.gamma if g > 0]
    if rates:
        limits.append((int(math.ceil(sc.run.max_lifetimes / min(rates) / dt)), "lifetimes"))
    if not limits:
        raise ScenarioError(["run needs t_max or max_steps"])
    return min(limits)


def _source_end(sc: Scenario) -> float:
    ends = [s.pulse.t0 + 6 * s.pulse.tau for s in sc.sources]
    return max(ends) if ends else 0.0


def set_threads(threads: int | None) -> bool:
    """Configure numba workers; returns whether parallel kernels should be used."""
    if not threads:
        return False
    import numba
    k = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(k)
    return k > 1


def simulate(sc: Scenario, threads: int | None = None, snapshot_dir: Path | None = None) -> RunRecord:
    """Run the time loop only (no analysis)."""
    parallel = set_threads(threads)
    grid, system, monitors, probes = build(sc, parallel=parallel)
    n_max, limit = _step_budget(sc, system, grid.dt)
    every = sc.run.output_every
    thr = sc.run.stop_threshold
    t_src = _source_end(sc)
    snaps = set(sc.run.snapshot_steps)

    ts, bs, ps, es = [0.0], [system.amplitudes()], [system.populations()], [0.0]
    e_max = 0.0
    n_max_exc = float(np.sum(ps[0]))
    stop = limit
    t0 = time.perf_counter()
    while system.n < n_max:
        system.step()
        n = system.n
        if n in snaps and snapshot_dir is not None:
            grid.export_snapshot(Path(snapshot_dir) / f"step{n:08d}")
        if n % every and n != n_max:
            continue
        if not system.all_finite():
            raise InstabilityError(n)
        energy = grid.energy()
        pop = system.populations()
        ts.append(system.t)
        bs.append(system.amplitudes())
        ps.append(pop)
        es.append(energy)
        e_max = max(e_max, energy)
        nexc = float(np.sum(pop))
        n_max_exc = max(n_max_exc, nexc)
        if (system.t > t_src and e_max > 0 and energy <= thr * e_max
                and nexc <= thr * max(n_max_exc, 1e-300)):
            stop = "decayed"
            break
    wall = time.perf_counter() - t0
    P = np.array(ps).reshape(len(ts), -1)
    rec = RunRecord(sc.name, scenario_hash(sc), np.array(ts),
                    np.array(bs, complex).reshape(len(ts), -1), P, P.sum(axis=1), np.array(es),
                    steps=system.n, dt=grid.dt, wall_time=wall, stop_reason=stop)
    for name, mon in monitors.items():
        rec.spectra[name] = (mon.omega.copy(), mon.spectrum())
    for pr in probes:
        rec.probes[pr.name] = (np.array(pr.t), np.array(pr.values))
    rec.extra["positions"] = [grid.position(grid.e_names[system.comp_no[i]], system.edge[i])
                              for i in range(len(system.tls))]
    rec.extra["descriptors"] = system.tls
    rec.extra["dim"] = grid.dim
    return rec


# -- analyses --------------------------------------------------------------------

def _env(sc: Scenario, dim: int) -> tuple[str, dict]:
    a = sc.analysis
    if a.env == "vacuum":
        return ("vacuum2d" if dim == 2 else "vacuum3d"), {}
    if a.env == "pec_halfspace":
        return "pec_halfspace", {"mirror_axis": a.mirror_axis, "mirror_plane": a.mirror_plane}
    return "pec_waveguide", {"width": a.width, "wall": a.wall}


def _rates(sc, rec, i, j):
    env, kw = _env(sc, rec.extra["dim"])
    d = rec.extra["descriptors"]
    G = oracles.green_function(env, rec.extra["positions"][i], rec.extra["positions"][j],
                               d[i].omega0, **kw)
    return oracles.collective_rates(G, d[i].dipole, d[j].dipole, d[i].omega0)


def analyze_decay(sc: Scenario, rec: RunRecord) -> tuple[dict, dict]:
    a = sc.analysis
    y = rec.P[:, 0] if a.signal == "P0" else rec.n_exc
    fit = fitting.fit_exponential(rec.t, y, window=tuple(a.window))
    d = rec.extra["descriptors"]
    dim = rec.extra["dim"]
    gv = oracles.gamma_vac(d[0].omega0, d[0].dipole, dim)
    n = len(d)
    res = {"gamma": fit["gamma"], "gamma_over_vac": fit["gamma"] / gv,
           "gamma_over_n_vac": fit["gamma"] / (n * gv), "fit_samples": fit.info["n_samples"],
           "min_P0": float(rec.P[:, 0].min()), "final_P0": float(rec.P[-1, 0])}
    orc = {"gamma_vac": gv, "n_gamma_vac": n * gv, "one": 1.0}
    if a.signal == "P0" and n == 1:
        orc["gamma_env"] = _rates(sc, rec, 0, 0).gamma
        orc["gamma_env_over_vac"] = orc["gamma_env"] / gv
    if a.signal == "n_exc":
        env, kw = _env(sc, dim)
        M = oracles.coupling_matrix(rec.extra["positions"], [t.dipole for t in d], d[0].omega0,
                                    env, **kw)
        b0 = [complex(*t.b0) for t in sc.emitters()]
        ne = oracles.excitation_number(rec.t, M, b0)
        fo = fitting.fit_exponential(rec.t, ne, window=tuple(a.window))
        orc["gamma_collective"] = fo["gamma"]
        orc["gamma_collective_over_n_vac"] = fo["gamma"] / (n * gv)
    return res, orc


def analyze_pair(sc: Scenario, rec: RunRecord) -> tuple[dict, dict]:
    fit = fitting.fit_master_equation(rec.t, rec.P[:, 0], rec.P[:, 1], rec.b[:, 0], rec.b[:, 1])
    d = rec.extra["descriptors"]
    gv = oracles.gamma_vac(d[0].omega0, d[0].dipole, rec.extra["dim"])
    r01 = _rates(sc, rec, 0, 1)
    r00 = _rates(sc, rec, 0, 0)
    dist = float(np.linalg.norm(rec.extra["positions"][1] - rec.extra["positions"][0]))
    early = rec.t < 0.95 * dist
    p2_early = float(np.max(rec.P[early, 1])) if np.any(early) else 0.0
    res = {"gamma11": fit["gamma11"], "gamma12": fit["gamma12"], "g12": fit["g12"],
           "gamma11_over_vac": fit["gamma11"] / gv, "gamma12_over_vac": fit["gamma12"] / gv,
           "g12_over_vac": fit["g12"] / gv, "separation": dist, "p2_before_arrival": p2_early,
           "fit_converged": float(fit.converged)}
    orc = {"gamma_vac": gv, "gamma11": r00.gamma, "gamma12": r01.gamma, "g12": r01.g,
           "gamma11_over_vac": r00.gamma / gv, "gamma12_over_vac": r01.gamma / gv,
           "g12_over_vac": r01.g / gv}
    return res, orc


def _first_pulse(sc: Scenario):
    from .sources import GaussianPulseSpec
    for s in sc.sources:
        if isinstance(s, (PlaneWave, GuidedMode)):
            p = s.pulse
            return GaussianPulseSpec(p.omega_c, p.tau, p.t0, p.amplitude, p.polarization)
    raise ScenarioError(["scattering analysis needs a plane_wave or guided_mode source"])


def analyze_scattering(sc: Scenario, rec: RunRecord) -> tuple[dict, dict]:
    omega, P = rec.spectra[sc.analysis.monitor]
    pulse = _first_pulse(sc)
    w, sigma = scattering_cross_section(omega, P, pulse)
    d = rec.extra["descriptors"][0]
    dim = rec.extra["dim"]
    gv = oracles.gamma_vac(d.omega0, d.dipole, dim)
    lam = 2 * np.pi / d.omega0
    sigma0 = 3 * lam**2 / (2 * np.pi) if dim == 3 else 2 * lam / np.pi
    k = int(np.argmax(sigma))
    res = {"raw_peak_over_sigma0": float(sigma[k] / sigma0),
           "raw_center_shift": float(abs(w[k] - d.omega0) / d.omega0)}
    try:
        fit = fitting.fit_lorentzian(w, sigma)
        res.update(peak=fit["peak"], center=fit["center"], fwhm=fit["fwhm"],
                   peak_over_sigma0=fit["peak"] / sigma0,
                   center_shift=abs(fit["center"] - d.omega0) / d.omega0,
                   fwhm_over_vac=fit["fwhm"] / gv, fit_ok=1.0)
    except ValueError:
        res["fit_ok"] = 0.0
    rec.extra["sigma"] = (w, sigma)
    return res, {"sigma0": sigma0, "omega0": d.omega0, "gamma_vac": gv}


def find_dips(omega, T, prominence: float = 0.05) -> np.ndarray:
    """Local transmission minima refined by a parabola through the three nearest samples."""
    from scipy.signal import find_peaks
    omega = np.asarray(omega, float)
    T = np.asarray(T, float)
    idx, _ = find_peaks(-T, prominence=prominence)
    out = []
    for k in idx:
        y0, y1, y2 = T[k - 1], T[k], T[k + 1]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den > 0 else 0.0
        out.append(omega[k] + shift * (omega[k + 1] - omega[k]))
    return np.array(out)


def analyze_transmission(sc: Scenario, rec: RunRecord, reference: RunRecord) -> tuple[dict, dict]:
    a = sc.analysis
    omega, port = rec.spectra[a.monitor]
    _, ref = reference.spectra[a.monitor]
    from .monitors import transmission
    T = transmission(port, ref)
    if a.band:
        keep = (omega >= a.band[0]) & (omega <= a.band[1])
    else:
        keep = np.ones(omega.size, bool)
    dips = find_dips(omega[keep], T[keep], a.prominence)
    rec.extra["transmission"] = (omega, T, port, ref)
    res = {"n_dips": float(dips.size),
           "splitting": float(dips.max() - dips.min()) if dips.size > 1 else 0.0,
           "min_transmission": float(T[keep].min())}
    for i, w in enumerate(dips):
        res[f"dip{i}"] = float(w)
    return res, {}


def reference_scenario(sc: Scenario) -> Scenario:
    """Same domain, sources and monitors; no emitters; only ``keep_structures``."""
    t = copy.deepcopy(sc.template)
    t["tls"] = []
    t["tls_arrays"] = []
    keep = set(sc.analysis.keep_structures)
    t["structures"] = [s for s in t.get("structures", []) if s.get("name", "") in keep]
    t["analysis"] = {"kind": "none"}
    t["verify"] = []
    t["name"] = f"{sc.name}_reference"
    t.setdefault("run", {})
    return parse_scenario(t)


def evaluate_checks(sc: Scenario, results: dict, orc: dict) -> list[dict]:
    out = []
    for c in sc.verify:
        entry = {"quantity": c.quantity, "oracle": c.oracle, "check": c.check, "tol": c.tol}
        if c.quantity not in results:
            entry.update(value=None, reference=None, passed=False,
                         error=f"analysis produced no {c.quantity!r}")
            out.append(entry)
            continue
        q = results[c.quantity]
        if isinstance(c.oracle, str):
            if c.oracle not in orc:
                entry.update(value=q, reference=None, passed=False,
                             error=f"unknown oracle value {c.oracle!r}")
                out.append(entry)
                continue
            ref = orc[c.oracle]
        else:
            ref = float(c.oracle)
        if c.check == "rel":
            ok = abs(q / ref - 1) <= c.tol
        elif c.check == "abs":
            ok = abs(q - ref) <= c.tol
        elif c.check == "lt":
            ok = q < ref
        elif c.check == "gt":
            ok = q > ref
        elif c.check == "eq":
            ok = q == ref
        else:
            ok = np.sign(q) == np.sign(ref)
        entry.update(value=float(q), reference=float(ref), passed=bool(ok))
        out.append(entry)
    return out


# normalization runs keyed by their resolved physics; cavity sweeps share one reference
_REFERENCE_CACHE: dict[str, RunRecord] = {}


def _physics_key(sc: Scenario) -> str:
    d = sc.model_dump(mode="json", exclude={"name", "description", "params", "derived"})
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def run(sc: Scenario | str, out: str | Path | None = None, threads: int | None = None) -> RunRecord:
    """Simulate, analyse and verify one scenario; write outputs when ``out`` is given."""
    if not isinstance(sc, Scenario):
        sc = load_scenario(sc)
    snap = Path(out) / "snapshots" if (out and sc.run.snapshot_steps) else None
    if snap:
        snap.mkdir(parents=True, exist_ok=True)
    rec = simulate(sc, threads, snap)
    kind = sc.analysis.kind
    res: dict = {}
    orc: dict = {}
    if kind == "decay":
        res, orc = analyze_decay(sc, rec)
    elif kind == "pair":
        res, orc = analyze_pair(sc, rec)
    elif kind == "scattering":
        res, orc = analyze_scattering(sc, rec)
    elif kind == "transmission":
        ref_sc = reference_scenario(sc)
        key = _physics_key(ref_sc)
        ref = _REFERENCE_CACHE.get(key)
        if ref is None:
            ref = _REFERENCE_CACHE[key] = simulate(ref_sc, threads)
        rec.extra["reference"] = ref
        res, orc = analyze_transmission(sc, rec, ref)
    rec.results = {k: float(v) for k, v in res.items()}
    rec.oracle = {k: float(v) for k, v in orc.items()}
    rec.checks = evaluate_checks(sc, rec.results, rec.oracle)
    if out is not None:
        write_outputs(sc, rec, Path(out))
    return rec


# -- outputs ---------------------------------------------------------------------

def write_csv(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]):
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([np.asarray(c, float) for c in columns]) if columns else np.zeros((0, 0))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(FMT % v for v in row) + "\n")


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric data") from exc
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match the header")
    return header, data


def write_outputs(sc: Scenario, rec: RunRecord, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    header = ["t", "n_exc", "field_energy"]
    cols = [rec.t, rec.n_exc, rec.energy]
    for i in range(rec.b.shape[1]):
        header += [f"re_b{i}", f"im_b{i}", f"P{i}"]
        cols += [rec.b[:, i].real, rec.b[:, i].imag, rec.P[:, i]]
    write_csv(out / "timeseries.csv", header, cols)
    for name, (w, P) in rec.spectra.items():
        write_csv(out / f"spectrum_{name}.csv", ["omega", "wavelength", "flux"], [w, 2 * np.pi / w, P])
    if "sigma" in rec.extra:
        w, s = rec.extra["sigma"]
        write_csv(out / "cross_section.csv", ["omega", "wavelength", "sigma"], [w, 2 * np.pi / w, s])
    if "transmission" in rec.extra:
        w, T, port, ref = rec.extra["transmission"]
        write_csv(out / "transmission.csv", ["omega", "wavelength", "T", "port", "reference"],
                  [w, 2 * np.pi / w, T, port, ref])
    for name, (t, v) in rec.probes.items():
        write_csv(out / f"probe_{name}.csv", ["t", "value"], [t, v])
    (out / "scenario.json").write_text(dump_scenario(sc) + "\n")
    summary = {"name": rec.name, "scenario_hash": rec.scenario_hash, "steps": rec.steps,
               "dt": rec.dt, "wall_time_s": rec.wall_time, "stop_reason": rec.stop_reason,
               "results": rec.results, "oracle": rec.oracle, "checks": rec.checks,
               "passed": rec.passed}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# -- sweeps ----------------------------------------------------------------------

def sweep(source: str | Path | dict, param: str, values: Sequence[float],
          out: str | Path | None = None, threads: int | None = None) -> list[dict]:
    """One run per parameter value; rows hold the value, results, oracle values and pass flag.

    The aggregated CSV is rewritten after every member so a failure keeps the
    completed rows on disk (and in ``SweepError.rows``).
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    base = load_scenario(source) if not isinstance(source, dict) else parse_scenario(source)
    if param not in base.params:
        raise ScenarioError([f"{param!r} is not a declared sweep parameter "
                             f"(declared: {sorted(base.params)})"])
    rows: list[dict] = []
    out = Path(out) if out is not None else None
    for v in values:
        try:
            if isinstance(source, dict):
                sc = parse_scenario(source, {param: v})
            else:
                sc = load_scenario(source, {param: v})
            member_out = out / f"{param}={v:g}" if out is not None else None
            rec = run(sc, member_out, threads)
        except Exception as exc:
            if out is not None:
                _write_rows(out / "sweep.csv", param, rows)
            raise SweepError(f"sweep member {param}={v} failed: {exc}", rows) from exc
        row = {param: float(v)}
        row.update(rec.results)
        row.update({f"oracle_{k}": x for k, x in rec.oracle.items()})
        row["passed"] = float(rec.passed)
        rows.append(row)
        if out is not None:
            _write_rows(out / "sweep.csv", param, rows)
    return rows


def _write_rows(path: Path, param: str, rows: list[dict]):
    if not rows:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(param + "\n")
        return
    keys = [param] + sorted({k for r in rows for k in r} - {param})
    cols = [np.array([r.get(k, np.nan) for r in rows]) for k in keys]
    write_csv(path, keys, cols)
