import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsfdtd.tls import (SemiclassicalState, TlsDescriptor, TlsState, step_bloch, step_schrodinger,
                         step_tls_rk4, tls_current_amplitude, tls_rhs)

W0 = 2 * np.pi
T0 = 1.0
DT = T0 / 80


def desc(d=0.01, gamma=None, dim=2):
    pos = (0.0,) * dim
    return TlsDescriptor(W0, (d,) + (0.0,) * (dim - 1), pos, gamma=gamma)


def drive_pairs(E0, n, dt, omega=W0, dim=2):
    """(E^{k-1/2}, E^{k+1/2}) along x for a cosine drive, per step k."""
    t = (np.arange(n + 1) - 0.5) * dt
    e = E0 * np.cos(omega * t)
    z = np.zeros(dim - 1)
    return [np.array([np.r_[e[k], z], np.r_[e[k + 1], z]]) for k in range(n)]


# -- tls_rhs -------------------------------------------------------------------------

@pytest.mark.trivial
def test_rhs_free_decay():
    assert tls_rhs(1.0, [0, 0], desc(gamma=0.1)) == pytest.approx(-(0.05 + 2j * np.pi), abs=1e-15)


@pytest.mark.trivial
def test_rhs_orthogonal_drive():
    assert tls_rhs(0.0, [0.0, 5.0], desc()) == 0


@pytest.mark.trivial
def test_rhs_drive():
    assert tls_rhs(0.0, [1.0, 0.0, 0.0], desc(dim=3)) == pytest.approx(0.01j, abs=1e-16)


# -- step_tls_rk4 --------------------------------------------------------------------

def test_rk4_free_decay_matches_closed_form():
    g = 0.1
    d = desc(gamma=g)
    s = TlsState(1.0 + 0j)
    for k in range(1, 801):
        s = step_tls_rk4(s, [0.0, 0.0], d, DT)
        if k % 80 == 0:
            t = k * DT
            assert abs(s.b) == pytest.approx(np.exp(-g * t / 2), rel=1e-9 * (k // 80))


@pytest.mark.trivial
def test_rk4_unitary_without_decay():
    d = desc(gamma=0.0)
    s = TlsState(0.6 + 0.8j)
    for _ in range(200):
        new = step_tls_rk4(s, [0.0, 0.0], d, DT)
        assert abs(abs(new.b) - abs(s.b)) < 1e-12
        s = new


def test_rabi_flop_schrodinger():
    """Weak resonant drive from the ground state: P_e = sin^2(d E0 t / 2)."""
    d = desc(gamma=0.0)
    E0 = 0.002 * W0 / 0.01  # d E0 = 0.002 w0
    rabi = 0.01 * E0
    n = int(round(2 * np.pi / rabi / DT))
    s = SemiclassicalState.schrodinger(0.0, 1.0)
    worst = 0.0
    for k, pair in enumerate(drive_pairs(E0, n, DT)):
        s = step_schrodinger(s, pair, d, DT)
        t = (k + 1) * DT
        worst = max(worst, abs(s.P - np.sin(rabi * t / 2) ** 2))
    assert worst < 0.01


def test_amplitude_model_is_linear_weak_drive():
    """The amplitude model has no saturation; at weak drive it follows (d E0 t / 2)^2."""
    d = desc(gamma=0.0)
    E0 = 0.02
    n = 400
    s = TlsState(0j)
    for pair in drive_pairs(E0, n, DT):
        s = step_tls_rk4(s, pair, d, DT)
    t = n * DT
    assert s.P == pytest.approx((0.01 * E0 * t / 2) ** 2, rel=0.01)


@pytest.mark.trivial
def test_current_amplitude():
    d = TlsDescriptor(W0, (0.01, 0.0, 0.0), (0, 0, 0))
    np.testing.assert_array_equal(tls_current_amplitude(1.0, d), [0, 0, 0])
    np.testing.assert_allclose(tls_current_amplitude(1j, d), [0.04 * np.pi, 0, 0], rtol=1e-15)
    np.testing.assert_array_equal(tls_current_amplitude(0.3 - 0.2j, d),
                                  -tls_current_amplitude(-0.3 + 0.2j, d))


# -- baselines -----------------------------------------------------------------------

@pytest.mark.trivial
def test_schrodinger_no_spontaneous_decay():
    d = desc()
    s = SemiclassicalState.schrodinger(1.0, 0.0)
    for _ in range(2000):
        new = step_schrodinger(s, [0.0, 0.0], d, DT)
        # RK4 rotation error only: ~1e-13 per step, never a decay rate
        assert abs(abs(new.y[0]) - abs(s.y[0])) < 1e-12
        s = new
    assert s.P > 1 - 1e-8


@pytest.mark.trivial
def test_schrodinger_norm_conserved():
    d = desc()
    s = SemiclassicalState.schrodinger(0.6, 0.8)
    for pair in drive_pairs(3.0, 300, DT):
        new = step_schrodinger(s, pair, d, DT)
        n0 = np.sum(np.abs(s.y) ** 2)
        n1 = np.sum(np.abs(new.y) ** 2)
        assert abs(n1 - n0) < 1e-10
        s = new


def test_schrodinger_matches_amplitude_model_weak_drive():
    d0 = desc(gamma=0.0)
    s = SemiclassicalState.schrodinger(0.0, 1.0)
    b = TlsState(0j)
    for pair in drive_pairs(0.3, 2000, DT):
        s = step_schrodinger(s, pair, d0, DT)
        b = step_tls_rk4(b, pair, d0, DT)
        if s.P < 0.01:
            assert abs(s.P - b.P) < 1e-4


def test_bloch_free_decay():
    g = 0.05
    d = desc(gamma=g)
    s = SemiclassicalState.bloch(1.0, 0.0)
    for k in range(1, 1601):
        s = step_bloch(s, [0.0, 0.0], d, DT)
    assert s.P == pytest.approx(np.exp(-g * 1600 * DT), rel=1e-8)


@pytest.mark.trivial
def test_bloch_coherence_fixed_point():
    d = desc(gamma=0.05)
    s = SemiclassicalState.bloch(1.0, 0.0)
    for _ in range(500):
        s = step_bloch(s, [0.0, 0.0], d, DT)
    assert s.y[1] == 0


def test_bloch_matches_amplitude_model_weak_drive():
    d = desc(gamma=0.02)
    s = SemiclassicalState.bloch(0.0, 0.0)
    b = TlsState(0j)
    for pair in drive_pairs(0.3, 2000, DT):
        s = step_bloch(s, pair, d, DT)
        b = step_tls_rk4(b, pair, d, DT)
        if s.P < 0.01:
            assert abs(s.P - b.P) < 1e-4
            assert 0 <= s.P <= 1 and abs(s.y[1]) <= 0.5 + 1e-6


# -- invariants ------------------------------------------------------------------------

def test_log_population_is_linear_over_ten_lifetimes():
    g = 0.2
    d = desc(gamma=g)
    n = int(10 / g / DT)
    s = TlsState(1.0 + 0j)
    t, logp = [], []
    for k in range(1, n + 1):
        s = step_tls_rk4(s, [0.0, 0.0], d, DT)
        if k % 20 == 0:
            t.append(k * DT)
            logp.append(np.log(s.P))
    slope, icpt = np.polyfit(t, logp, 1)
    resid = np.max(np.abs(np.polyval([slope, icpt], t) - logp))
    assert slope == pytest.approx(-g, rel=1e-6)
    assert resid < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 3.0), st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False))
def test_linearity(scale, b0):
    d = desc(gamma=0.03)
    pairs = drive_pairs(0.7, 200, DT)
    a = TlsState(b0)
    b = TlsState(scale * b0)
    for p in pairs:
        a = step_tls_rk4(a, p, d, DT)
        b = step_tls_rk4(b, scale * p, d, DT)
    assert abs(b.b - scale * a.b) <= 1e-12 * max(1.0, abs(b.b))


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_phase_covariance(phi):
    d = desc(gamma=0.03)
    a = TlsState(0.8 + 0.1j)
    b = TlsState((0.8 + 0.1j) * np.exp(1j * phi))
    for _ in range(300):
        a = step_tls_rk4(a, [0.0, 0.0], d, DT)
        b = step_tls_rk4(b, [0.0, 0.0], d, DT)
    assert abs(b.b - a.b * np.exp(1j * phi)) < 1e-13


def test_baseline_divergence():
    g = 0.05
    d = desc(gamma=g)
    n = int(round(1 / g / DT))
    sch = SemiclassicalState.schrodinger(1.0, 0.0)
    blo = SemiclassicalState.bloch(1.0, 0.0)
    amp = TlsState(1.0 + 0j)
    for _ in range(n):
        sch = step_schrodinger(sch, [0.0, 0.0], d, DT)
        blo = step_bloch(blo, [0.0, 0.0], d, DT)
        amp = step_tls_rk4(amp, [0.0, 0.0], d, DT)
    assert sch.P - blo.P > 0.5
    assert amp.P == pytest.approx(blo.P, rel=1e-8)


@pytest.mark.trivial
def test_descriptor_validation():
    with pytest.raises(ValueError):
        TlsDescriptor(0.0, (0.01, 0.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        TlsDescriptor(W0, (0.0, 0.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        _ = TlsDescriptor(W0, (0.01, 0.01), (0.0, 0.0)).axis
