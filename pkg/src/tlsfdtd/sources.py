"""External excitation: Gaussian pulses, plane-wave boxes, guided-mode lines, bare dipoles.

Plane waves travel along a grid axis. The incident field comes from a 1D Yee
line with the same dx and dt as the main grid, so an axis-aligned plane wave
in the main grid and the line obey identical update equations and the box
leaks only at round-off level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.optimize import brentq

from . import kernels
from .grid import AXES, OFFSETS, CpmlParams, CurrentSource, YeeGrid, _profile
from .tfif import PairList, mask_pairs, _check_updatable


@dataclass(frozen=True)
class GaussianPulseSpec:
    """E0 * exp(-(t - t0)^2 / (2 tau^2)) * cos(omega_c (t - t0))."""

    omega_c: float
    tau: float
    t0: float
    amplitude: float = 1.0
    polarization: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("pulse width tau must be positive")
        if self.t0 < 4 * self.tau - 1e-12:
            raise ValueError("pulse delay t0 must be at least 4 tau")

    def __call__(self, t):
        s = np.asarray(t, float) - self.t0
        return self.amplitude * np.exp(-0.5 * (s / self.tau) ** 2) * np.cos(self.omega_c * s)

    def spectrum(self, omega):
        """Continuous transform F(w) = integral f(t) exp(i w t) dt."""
        w = np.asarray(omega, float)
        g = lambda x: np.exp(-0.5 * (self.tau * x) ** 2)
        pref = 0.5 * self.amplitude * self.tau * math.sqrt(2 * math.pi)
        return pref * np.exp(1j * w * self.t0) * (g(w - self.omega_c) + g(w + self.omega_c))

    def band(self, width: float = 3.0):
        return self.omega_c - width / self.tau, self.omega_c + width / self.tau

    def default_frequencies(self, n: int = 301):
        lo, hi = self.band()
        return np.linspace(lo, hi, n)


@numba.njit(cache=True)
def _line_e(E1, H1, ce, b, c, psi, lo, hi):
    for i in range(1, E1.shape[0] - 1):
        d = H1[i] - H1[i - 1]
        if i < lo or i > hi:
            psi[i] = b[i] * psi[i] + c[i] * d
            d += psi[i]
        E1[i] -= ce * d


@numba.njit(cache=True)
def _line_h(E1, H1, ch, b, c, psi, lo, hi):
    for i in range(H1.shape[0]):
        d = E1[i + 1] - E1[i]
        if i < lo or i >= hi:
            psi[i] = b[i] * psi[i] + c[i] * d
            d += psi[i]
        H1[i] -= ch * d


class IncidentLine:
    """1D Yee line carrying a one-way pulse along ``direction`` (+1 or -1).

    E1[i] sits at coordinate i, H1[i] at i + 1/2 (cells, line frame). The pulse
    is launched by a 1D total/scattered split at node ``launch`` and equals
    ``pulse(t - direction * (x - ref) / v)`` there, with v = 1/sqrt(eps).
    """

    def __init__(self, n: int, dx: float, dt: float, pulse: Callable[[float], float],
                 launch: int, ref: float, direction: int = 1, eps: float = 1.0,
                 cpml: CpmlParams | None = None):
        if direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        cpml = cpml or CpmlParams()
        L = cpml.thickness
        if not L + 2 <= launch <= n - L - 2:
            raise ValueError("launch point must lie outside the line absorbers")
        self.n, self.dx, self.dt = n, dx, dt
        self.E1 = np.zeros(n + 1)
        self.H1 = np.zeros(n)
        self.ce = dt / (eps * dx)
        self.ch = dt / dx
        self.v = 1.0 / math.sqrt(eps)
        self.eta = 1.0 / math.sqrt(eps)
        self.pulse = pulse
        self.launch = launch
        self.ref = ref
        self.direction = direction
        be, cce, _, _ = _profile(n, L, L, 0.0, cpml, dx, dt)
        bh, cch, _, _ = _profile(n, L, L, 0.5, cpml, dx, dt)
        self._pe = (be, cce, np.zeros(n + 1))
        self._ph = (bh[:n].copy(), cch[:n].copy(), np.zeros(n))
        self._lo, self._hi = L, n - L
        self.n_step = 0

    def e_inc(self, x: float, t: float) -> float:
        return float(self.pulse(t - self.direction * (x - self.ref) * self.dx / self.v))

    def h_inc(self, x: float, t: float) -> float:
        return self.direction * self.e_inc(x, t) / self.eta

    def step_e(self, t_h: float):
        """E1 from level n-1/2 to n+1/2; ``t_h`` is the H time level n*dt."""
        be, ce, psi = self._pe
        _line_e(self.E1, self.H1, self.ce, be, ce, psi, self._lo, self._hi)
        k = self.launch
        if self.direction == 1:
            # E1[k] is total, H1[k-1] scattered
            self.E1[k] += self.ce * self.h_inc(k - 0.5, t_h)
        else:
            # E1[k] is total, H1[k] scattered
            self.E1[k] -= self.ce * self.h_inc(k + 0.5, t_h)

    def step_h(self, t_e: float):
        """H1 from level n to n+1; ``t_e`` is the E time level (n+1/2)*dt."""
        bh, ch, psi = self._ph
        _line_h(self.E1, self.H1, self.ch, bh, ch, psi, self._lo, self._hi)
        k = self.launch
        if self.direction == 1:
            self.H1[k - 1] += self.ch * self.e_inc(k, t_e)
        else:
            self.H1[k] -= self.ch * self.e_inc(k, t_e)
        self.n_step += 1


def _hand(axis: int, pol: int, dim: int):
    """Axis and sign s of the H component with H_q = s * H1 for a wave along ``axis``."""
    if dim == 2:
        # only in-plane polarizations; H is Hz
        if axis == pol:
            raise ValueError("polarization must be transverse to propagation")
        z = np.cross(np.eye(3)[axis], np.eye(3)[pol])
        return 2, float(z[2])
    q = np.cross(np.eye(3)[axis], np.eye(3)[pol])
    qa = int(np.flatnonzero(q)[0])
    return qa, float(q[qa])


class TfsfBox:
    """Total-field region ``lo <= p <= hi`` (cell units, per axis) fed by an incident line.

    ``profile_e``/``profile_h`` optionally weight the incident E and H across
    the transverse coordinate(s); they receive positions in cell units. For a
    half-space injection plane, pass ``lo``/``hi`` beyond the grid on the
    transverse axes and on the far side.
    """

    def __init__(self, grid: YeeGrid, lo: Sequence[float], hi: Sequence[float],
                 pulse: GaussianPulseSpec, axis: int, direction: int = 1,
                 eps: float = 1.0, ref: float | None = None,
                 profile_e: Callable | None = None, profile_h: Callable | None = None):
        dim = grid.dim
        if not 0 <= axis < dim:
            raise ValueError("propagation axis out of range")
        pol = pulse.polarization
        self.grid = grid
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.axis, self.direction, self.pulse = axis, direction, pulse
        q_axis, sgn = _hand(axis, pol, dim)
        self.e_comp = grid.e_names[pol]
        self.h_comp = "Hz" if dim == 2 else grid.h_names[q_axis]
        self.sgn = sgn
        n_ax = grid.spec.shape[axis]
        L = grid.cpml.thickness
        pad = L + 4
        # line node i <-> main index i - pad along the axis
        self.pad = pad
        n_line = n_ax + 2 * pad
        start_face = self.lo[axis] if direction == 1 else self.hi[axis]
        launch_main = math.floor(start_face) - 2 if direction == 1 else math.ceil(start_face) + 2
        launch_main = min(max(launch_main, -pad + L + 2), n_ax + pad - L - 2)
        ref = 0.5 * (self.lo[axis] + self.hi[axis]) if ref is None else ref
        self.ref = ref
        self.line = IncidentLine(n_line, grid.dx, grid.dt, pulse, launch_main + pad,
                                 ref + pad, direction, eps)
        self._build(profile_e, profile_h)

    def _chi(self, comp, pos):
        return np.all((pos >= self.lo - 1e-9) & (pos <= self.hi + 1e-9), axis=1)

    def _build(self, profile_e, profile_h):
        g = self.grid
        n = np.asarray(g.spec.shape)
        lo = np.clip(np.floor(self.lo).astype(int) - 1, 1, n - 1)
        hi = np.clip(np.ceil(self.hi).astype(int) + 1, 1, n - 1)
        shape = g.array_shape
        ce = np.stack([g.ce[c] for c in g.e_names]).reshape(len(g.e_names), -1)
        self.e_pairs = self._pairs("E", lo, hi, shape, ce, profile_h)
        self.h_pairs = self._pairs("H", lo, hi, shape, ce, profile_e)

    def _pairs(self, fam, lo, hi, shape, ce, profile):
        g = self.grid
        tc, ti, sc, si, coef = mask_pairs(g, self._chi, lo, hi, fam)
        src = self.h_comp if fam == "E" else self.e_comp
        keep = sc == src
        tc, ti, si, coef = tc[keep], ti[keep], si[keep], coef[keep]
        _check_updatable(g, tc, ti)
        names = g.e_names if fam == "E" else g.h_names
        t_no = np.array([names.index(c) for c in tc], np.int64)
        t_flat = np.ravel_multi_index(tuple(ti.T), shape).astype(np.int64) if len(tc) else np.zeros(0, np.int64)
        line_idx = (si[:, self.axis] + self.pad).astype(np.int64)
        w = np.ones(len(tc))
        if profile is not None and len(tc):
            pos = si + np.asarray(OFFSETS[g.dim][src])
            w = np.asarray(profile(pos), float)
        if fam == "E":
            cf = ce[t_no, t_flat] * coef * self.sgn * w
        else:
            cf = -g.ch * coef * w
        return PairList(t_no, t_flat, np.zeros(len(tc), np.int64), line_idx, np.ascontiguousarray(cf))

    def inject_e(self, grid: YeeGrid, t: float):
        self.e_pairs.apply(grid.E, self.line.H1.reshape(1, -1))
        self.line.step_e(t)

    def inject_h(self, grid: YeeGrid, t: float):
        self.h_pairs.apply(grid.H, self.line.E1.reshape(1, -1))
        self.line.step_h(t)

    def incident_spectrum(self, omega):
        """Analytic spectrum of the incident E at the reference plane."""
        return self.pulse.spectrum(omega)


def tfsf_inject(grid: YeeGrid, box: TfsfBox, family: str, t: float):
    """Apply one half of the box corrections and advance the incident line."""
    if family == "E":
        box.inject_e(grid, t)
    elif family == "H":
        box.inject_h(grid, t)
    else:
        raise ValueError("family must be 'E' or 'H'")


@dataclass(frozen=True)
class SlabMode:
    """Fundamental in-plane-E guided mode of a symmetric 2D slab (H along z)."""

    omega: float
    width: float
    eps_core: float
    eps_clad: float
    beta: float

    @property
    def n_eff(self) -> float:
        return self.beta / self.omega

    def h_profile(self, y):
        """Hz(y) for a slab centred at y = 0, unit peak."""
        y = np.abs(np.asarray(y, float))
        kap = math.sqrt(self.eps_core * self.omega**2 - self.beta**2)
        gam = math.sqrt(self.beta**2 - self.eps_clad * self.omega**2)
        a = self.width / 2
        return np.where(y <= a, np.cos(kap * y), math.cos(kap * a) * np.exp(-gam * (y - a)))


def slab_mode(omega: float, width: float, eps_core: float, eps_clad: float = 1.0) -> SlabMode:
    """Solve kappa tan(kappa a) = (eps_core / eps_clad) gamma for the even mode."""
    if eps_core <= eps_clad:
        raise ValueError("core permittivity must exceed cladding")
    a = width / 2
    lo_b = math.sqrt(eps_clad) * omega
    hi_b = math.sqrt(eps_core) * omega

    def f(beta):
        kap = math.sqrt(max(eps_core * omega**2 - beta**2, 0.0))
        gam = math.sqrt(max(beta**2 - eps_clad * omega**2, 0.0))
        return kap * math.sin(kap * a) - (eps_core / eps_clad) * gam * math.cos(kap * a)

    # the even fundamental has kappa * a in (0, pi/2)
    b_min = max(lo_b, math.sqrt(max(eps_core * omega**2 - (math.pi / (2 * a)) ** 2, 0.0)))
    b_min += 1e-12 * hi_b
    beta = brentq(f, b_min, hi_b * (1 - 1e-14), xtol=1e-14, rtol=1e-14)
    return SlabMode(omega, width, eps_core, eps_clad, beta)


class ModeLine(TfsfBox):
    """Half-space injection of a slab guided mode along +x in 2D.

    The waveguide axis is x; ``center_y`` is the slab centre (physical units).
    """

    def __init__(self, grid: YeeGrid, x_plane: float, center_y: float, mode: SlabMode,
                 pulse: GaussianPulseSpec):
        if grid.dim != 2:
            raise ValueError("guided-mode lines are two-dimensional")
        if pulse.polarization != 1:
            raise ValueError("guided mode needs Ey polarization")
        n = grid.spec.shape
        u0 = (x_plane - grid.origin[0]) / grid.dx
        lo = (u0, -10.0)
        hi = (n[0] + 10.0, n[1] + 10.0)
        yc = (center_y - grid.origin[1]) / grid.dx
        dx = grid.dx
        eps_eff = mode.n_eff**2
        prof_h = lambda pos: mode.h_profile((pos[:, 1] - yc) * dx)
        eps_at = lambda y: np.where(np.abs(y) <= mode.width / 2, mode.eps_core, mode.eps_clad)
        prof_e = lambda pos: mode.h_profile((pos[:, 1] - yc) * dx) * eps_eff / eps_at((pos[:, 1] - yc) * dx)
        super().__init__(grid, lo, hi, pulse, axis=0, direction=1, eps=eps_eff,
                         ref=u0, profile_e=prof_e, profile_h=prof_h)


def dipole_source(grid: YeeGrid, position: Sequence[float], axis: int,
                  waveform: Callable[[float], float]) -> CurrentSource:
    """Point electric current on the E edge nearest ``position`` (volume density)."""
    comp = grid.e_names[axis]
    src = CurrentSource("J", comp, grid.nearest_index(comp, position), waveform)
    src.check(grid)
    return src
