import numpy as np
import pytest
from scipy.signal import hilbert

from tlsfdtd.grid import CpmlParams, CurrentSource, GridSpec, YeeGrid, cfl_dt, load_snapshot
from tlsfdtd.sources import GaussianPulseSpec

DX = 0.05


def _peak_time(t, y):
    env = np.abs(hilbert(y))
    i = int(np.argmax(env))
    y0, y1, y2 = env[i - 1:i + 2]
    return t[i] + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2) * (t[1] - t[0])


def _slab_line(nx, xplus="cpml", eps_fn=None):
    """Quasi-1D domain: PEC walls on y carry an exact TEM plane wave with Ey polarization."""
    g = YeeGrid(GridSpec((nx, 4), DX), boundaries={"y-": "pec", "y+": "pec", "x+": xplus})
    if eps_fn is not None:
        g.set_material(eps_fn)
    return g


def _sheet(i, waveform):
    return [CurrentSource("J", "Ey", (i, j), waveform) for j in range(4)]


# -- cfl_dt ------------------------------------------------------------------------------

@pytest.mark.trivial
def test_cfl_values():
    assert cfl_dt(0.05, 0.5, 2) == pytest.approx(0.025 / np.sqrt(2), rel=1e-15)
    assert cfl_dt(0.05, 0.5, 3) == pytest.approx(0.025 / np.sqrt(3), rel=1e-15)
    assert cfl_dt(0.05, 0.5, 2) == pytest.approx(0.0176777, abs=1e-7)
    assert cfl_dt(0.05, 0.5, 3) == pytest.approx(0.0144338, abs=1e-7)


@pytest.mark.trivial
def test_cfl_errors():
    with pytest.raises(ValueError):
        cfl_dt(0.05, 1.2, 3)
    with pytest.raises(ValueError):
        cfl_dt(0.05, 0.5, 4)
    with pytest.raises(ValueError):
        GridSpec((3, 10), 0.05)
    with pytest.raises(ValueError):
        CpmlParams(thickness=5)


# -- updates -------------------------------------------------------------------------------

@pytest.mark.trivial
@pytest.mark.parametrize("shape", [(30, 30), (24, 24, 24)])
def test_zero_fixed_point(shape):
    g = YeeGrid(GridSpec(shape, DX))
    for _ in range(50):
        g.step_e()
        g.step_h()
    assert g.max_abs() == 0.0


@pytest.mark.trivial
@pytest.mark.parametrize("eps", [1.0, 4.0])
def test_single_step_current_update(eps):
    g = YeeGrid(GridSpec((24, 24), DX))
    g.set_material(lambda x, y: np.full(np.broadcast(x, y).shape, eps))
    J = 2.5
    src = CurrentSource("J", "Ex", (12, 12), lambda t: J)
    g.step_e([src])
    ex = g.fields["Ex"]
    assert ex[12, 12] == pytest.approx(-g.dt * J / eps, rel=1e-15)
    ex[12, 12] = 0.0
    assert g.max_abs() == 0.0


@pytest.mark.trivial
def test_pec_edges_zero_after_update():
    g = YeeGrid(GridSpec((30, 30), DX))
    g.set_material(pec_fn=lambda x, y: (x > 0.7) & (x < 0.9))
    src = CurrentSource("J", "Ey", (12, 15), GaussianPulseSpec(2 * np.pi, 0.5, 2.5))
    for _ in range(300):
        g.step([src])
        for c in g.e_names:
            assert np.all(g.fields[c][g.pec[c]] == 0.0)


def test_wavefront_speed_2d():
    n = 200
    g = YeeGrid(GridSpec((n, n), DX))
    src = CurrentSource("M", "Hz", (n // 2, n // 2), GaussianPulseSpec(2 * np.pi, 0.25, 1.0))
    radius = {}
    for k in range(1, 201):
        g.step([], [src])
        if k in (100, 200):
            env = np.abs(hilbert(g.fields["Hz"][n // 2:, n // 2]))
            i = int(np.argmax(env))
            y0, y1, y2 = env[i - 1:i + 2]
            radius[k] = (i + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)) * DX
    speed = (radius[200] - radius[100]) / (100 * g.dt)
    assert speed == pytest.approx(1.0, rel=0.02)


def test_pec_standing_wave_nodes():
    nx = 120
    g = _slab_line(nx, xplus="pec")
    w = 2 * np.pi
    srcs = _sheet(20, lambda t: np.sin(w * t) * min(t / 3, 1.0))
    n = int(40 / g.dt)
    period = int(round(1 / g.dt))
    amp = np.zeros(nx + 1)
    for k in range(n):
        g.step(srcs)
        if k > n - 2 * period:
            amp = np.maximum(amp, np.abs(g.fields["Ey"][:, 1]))
    seg = amp[25:nx]
    nodes = [i + 25 for i in range(1, seg.size - 1) if seg[i] < seg[i - 1] and seg[i] <= seg[i + 1]]
    assert len(nodes) >= 8
    for i in nodes:
        dist = (nx - i) * DX
        assert abs(dist / 0.5 - round(dist / 0.5)) * 0.5 <= DX


def test_dielectric_slows_pulse():
    g = _slab_line(400, eps_fn=lambda x, y: np.where((x >= 3.0) & (x <= 17.0), 4.0, 1.0))
    srcs = _sheet(30, GaussianPulseSpec(np.pi, 1.0, 5.0))
    probes = [100, 300]
    rec = []
    for _ in range(int(60 / g.dt)):
        g.step(srcs)
        rec.append(g.fields["Ey"][probes, 1].copy())
    rec = np.array(rec)
    t = (np.arange(len(rec)) + 0.5) * g.dt
    speed = (probes[1] - probes[0]) * DX / (_peak_time(t, rec[:, 1]) - _peak_time(t, rec[:, 0]))
    assert speed == pytest.approx(0.5, rel=0.03)


# -- sample_e ------------------------------------------------------------------------------

@pytest.mark.trivial
def test_sample_uniform_field():
    g = YeeGrid(GridSpec((30, 30), DX))
    g.fields["Ex"][:] = 1.0
    for r in ([0.6, 0.6], [0.731, 0.812], [0.9, 0.77]):
        np.testing.assert_allclose(g.sample_e(r), [1.0, 0.0], rtol=1e-15)


@pytest.mark.trivial
def test_sample_on_edge_is_exact():
    g = YeeGrid(GridSpec((24, 24, 24), DX))
    rng = np.random.default_rng(3)
    g.fields["Ex"][:] = rng.normal(size=g.fields["Ex"].shape)
    idx = (11, 12, 13)
    assert g.sample_e(g.position("Ex", idx))[0] == pytest.approx(g.fields["Ex"][idx], rel=1e-14)


@pytest.mark.trivial
def test_sample_linear_ramp_midpoint():
    g = YeeGrid(GridSpec((30, 30), DX))
    x, y = g.coords("Ex")
    g.fields["Ex"][:] = 3.0 * x + 0.0 * y
    a = g.position("Ex", (10, 10))
    b = g.position("Ex", (11, 10))
    mid = g.sample_e(0.5 * (a + b))[0]
    assert mid == pytest.approx(0.5 * (g.fields["Ex"][10, 10] + g.fields["Ex"][11, 10]), rel=1e-14)


@pytest.mark.trivial
def test_sample_outside_interior():
    g = YeeGrid(GridSpec((30, 30), DX))
    with pytest.raises(ValueError):
        g.sample_e([0.1, 0.75])
    with pytest.raises(ValueError):
        CurrentSource("J", "Ex", (2, 15), lambda t: 1.0).check(g)


# -- invariants --------------------------------------------------------------------------

@pytest.mark.property
def test_long_run_stability():
    g = YeeGrid(GridSpec((30, 30), DX))
    i = np.arange(31)
    g.fields["Hz"][:] = np.exp(-((i[:, None] - 15) ** 2 + (i[None, :] - 15) ** 2) / 4.0)
    start = g.max_abs()
    peaks = []
    for k in range(100_000):
        g.step()
        if k % 1000 == 999:
            peaks.append(g.max_abs())
    peaks = np.array(peaks)
    # the envelope never climbs back above an earlier level: no late-time growth
    assert np.all(peaks[1:] <= np.maximum.accumulate(peaks)[:-1])
    assert peaks[-1] < 1e-7 * start


@pytest.mark.property
def test_cpml_reflection():
    def probe(nx):
        g = _slab_line(nx)
        srcs = _sheet(30, GaussianPulseSpec(2 * np.pi, 0.5, 2.5))
        rec = []
        for _ in range(1500):
            g.step(srcs)
            rec.append(g.fields["Ey"][60, 1])
        return np.array(rec)

    short, long_ = probe(120), probe(600)
    ratio = np.sum((short - long_) ** 2) / np.sum(long_**2)
    assert ratio < 1e-6


@pytest.mark.property
def test_pec_reflection_total():
    def probe(nx, xplus):
        g = _slab_line(nx, xplus=xplus)
        srcs = _sheet(30, GaussianPulseSpec(2 * np.pi, 0.5, 2.5))
        rec = []
        for _ in range(1500):
            g.step(srcs)
            rec.append(g.fields["Ey"][60, 1])
        return np.array(rec)

    free = probe(600, "cpml")
    wall = probe(120, "pec")
    assert np.sum((wall - free) ** 2) / np.sum(free**2) == pytest.approx(1.0, rel=1e-3)


def _reciprocity_mismatch(a, b, shape, boundaries=None):
    out = []
    for s, r in ((a, b), (b, a)):
        g = YeeGrid(GridSpec(shape, DX), boundaries=boundaries)
        g.set_material(lambda *x: np.where(x[0] > 0.8, 3.0, 1.0))
        src = CurrentSource("J", "Ex", s, GaussianPulseSpec(2 * np.pi, 0.5, 2.5))
        rec = []
        for _ in range(600):
            g.step([src])
            rec.append(g.fields["Ex"][r])
        out.append(np.array(rec))
    return np.max(np.abs(out[0] - out[1])) / np.max(np.abs(out[0]))


@pytest.mark.property
def test_reciprocity_2d_cpml():
    assert _reciprocity_mismatch((14, 15), (25, 30), (40, 44)) < 1e-12


@pytest.mark.property
def test_reciprocity_2d_pec_cavity():
    pec = {f"{a}{s}": "pec" for a in "xy" for s in "-+"}
    assert _reciprocity_mismatch((14, 15), (25, 30), (40, 44), pec) < 1e-12


@pytest.mark.property
def test_reciprocity_3d():
    assert _reciprocity_mismatch((12, 13, 14), (15, 16, 18), (26, 28, 30)) < 1e-12


@pytest.mark.property
def test_repeat_runs_bit_identical():
    def once():
        g = YeeGrid(GridSpec((24, 24, 24), DX))
        src = CurrentSource("J", "Ez", (12, 12, 12), GaussianPulseSpec(2 * np.pi, 0.5, 2.5))
        for _ in range(200):
            g.step([src])
        return g.E.copy(), g.H.copy()

    a, b = once(), once()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_snapshot_roundtrip(tmp_path):
    g = YeeGrid(GridSpec((24, 26), DX))
    g.fields["Ey"][:] = np.arange(g.fields["Ey"].size).reshape(g.fields["Ey"].shape)
    paths = g.export_snapshot(tmp_path, ["Ey"])
    data, meta = load_snapshot(paths[0])
    assert np.array_equal(data, g.fields["Ey"])
    assert meta["component"] == "Ey" and meta["step"] == 0 and meta["dx"] == DX
    assert paths[0].read_bytes() == np.ascontiguousarray(g.fields["Ey"], "<f8").tobytes()
