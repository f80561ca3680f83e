"""Frequency-domain flux monitors and time-domain probes.

A flux face lies on an integer plane ``p`` along its normal axis. Tangential
E lives on that plane; tangential H sits half a cell either side and is
averaged onto it. Each product E_b H_c then pairs two samples at the same
point, so no transverse interpolation is needed.

DFT sums use the true sample times: E at (n+1/2) dt and H at (n+1) dt after
step n, and approximate F(w) = integral f(t) exp(i w t) dt.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .grid import AXES, OFFSETS, YeeGrid


@numba.njit(cache=True)
def _dft_add(acc, vals, phase):
    for f in range(acc.shape[0]):
        p = phase[f]
        for k in range(vals.shape[0]):
            acc[f, k] += p * vals[k]


def _weights(lo: int, hi: int, half: bool) -> tuple[np.ndarray, np.ndarray]:
    """Sample indices and quadrature weights covering [lo, hi] in cells."""
    if half:
        idx = np.arange(lo, hi)
        return idx, np.ones(idx.size)
    idx = np.arange(lo, hi + 1)
    w = np.ones(idx.size)
    w[0] = w[-1] = 0.5
    return idx, w


class _Face:
    """One planar face: normal axis ``a`` at plane ``p`` with sign ``s``."""

    def __init__(self, grid: YeeGrid, a: int, p: int, s: int, lo, hi, nfreq: int):
        dim = grid.dim
        self.a, self.p, self.s = a, p, s
        tang = [b for b in range(dim) if b != a]
        self.terms = []  # (E comp, H comp, sign, slices, weights)
        if dim == 2:
            b = tang[0]
            e = grid.e_names[b]
            sign = 1.0 if (a, b) == (0, 1) else -1.0  # S_x = Ey Hz, S_y = -Ex Hz
            self.terms.append(self._term(grid, e, "Hz", sign, {b: True}, lo, hi, nfreq))
        else:
            b, c = (a + 1) % 3, (a + 2) % 3
            # S_a = E_b H_c - E_c H_b
            self.terms.append(self._term(grid, grid.e_names[b], grid.h_names[c], 1.0,
                                         {b: True, c: False}, lo, hi, nfreq))
            self.terms.append(self._term(grid, grid.e_names[c], grid.h_names[b], -1.0,
                                         {b: False, c: True}, lo, hi, nfreq))

    def _term(self, grid, ecomp, hcomp, sign, halfs, lo, hi, nfreq):
        dim = grid.dim
        idx_e = [None] * dim
        wts = []
        for b, half in halfs.items():
            ix, w = _weights(lo[b], hi[b], half)
            idx_e[b] = ix
            wts.append(w)
        idx_e[self.a] = np.array([self.p])
        w = wts[0] if len(wts) == 1 else np.outer(wts[0], wts[1]).ravel()
        ie = np.ix_(*idx_e)
        idx_h0 = list(idx_e)
        idx_h0[self.a] = np.array([self.p - 1])
        ih0 = np.ix_(*idx_h0)
        ih1 = ie
        n = w.size
        return {"e": ecomp, "h": hcomp, "sign": sign, "ie": ie, "ih0": ih0, "ih1": ih1,
                "w": w, "E": np.zeros((nfreq, n), complex), "H": np.zeros((nfreq, n), complex),
                "S": 0.0}


class FluxMonitor:
    """Closed box (all faces) or open plane (one face) with running DFTs.

    ``lo``/``hi`` are integer index bounds per axis. For a plane, set
    ``plane=(axis, sign)``; the plane sits at ``lo[axis]``.
    """

    def __init__(self, grid: YeeGrid, lo: Sequence[int], hi: Sequence[int],
                 frequencies: Sequence[float], plane: tuple[int, int] | None = None,
                 stride: int = 1, name: str = "flux"):
        self.name = name
        self.omega = np.asarray(frequencies, float)
        if self.omega.ndim != 1 or self.omega.size == 0:
            raise ValueError("monitor needs at least one frequency")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride
        lo = [int(v) for v in lo]
        hi = [int(v) for v in hi]
        dim = grid.dim
        for a in range(dim):
            if not (grid.interior_lo[a] <= lo[a] <= hi[a] <= grid.interior_hi[a]):
                raise ValueError(f"monitor {name} leaves the grid interior on axis {AXES[a]}")
        self.lo, self.hi = lo, hi
        self.dA = grid.dx ** (dim - 1)
        self.dt = grid.dt
        self.faces: list[_Face] = []
        if plane is not None:
            a, s = plane
            self.faces.append(_Face(grid, a, lo[a], s, lo, hi, self.omega.size))
        else:
            for a in range(dim):
                if lo[a] == hi[a]:
                    raise ValueError("closed box needs nonzero extent on every axis")
                self.faces.append(_Face(grid, a, lo[a], -1, lo, hi, self.omega.size))
                self.faces.append(_Face(grid, a, hi[a], 1, lo, hi, self.omega.size))
        self.steps = 0
        self.energy = 0.0  # time-integrated net outward flux

    def accumulate(self, grid: YeeGrid):
        """Add the fields after a completed step (E at n-1/2, H at n with n = grid.n)."""
        self.steps += 1
        if (grid.n - 1) % self.stride:
            return
        te = (grid.n - 0.5) * grid.dt
        th = grid.n * grid.dt
        h = self.stride * grid.dt
        pe = np.exp(1j * self.omega * te) * h
        ph = np.exp(1j * self.omega * th) * h
        for f in self.faces:
            for t in f.terms:
                ev = grid.fields[t["e"]][t["ie"]].ravel()
                hf = grid.fields[t["h"]]
                hv = 0.5 * (hf[t["ih0"]].ravel() + hf[t["ih1"]].ravel())
                _dft_add(t["E"], ev, pe)
                _dft_add(t["H"], hv, ph)
                self.energy += f.s * t["sign"] * float(np.dot(t["w"], ev * hv)) * self.dA * h

    def spectrum(self) -> np.ndarray:
        return flux_spectrum(self)


def flux_spectrum(monitor: FluxMonitor, omega=None) -> np.ndarray:
    """P(w) = 1/2 Re sum (E_w x H_w*) . n dA over the monitor faces."""
    if monitor.steps == 0:
        raise ValueError(f"monitor {monitor.name} has not accumulated any fields")
    P = np.zeros(monitor.omega.size)
    for f in monitor.faces:
        for t in f.terms:
            P += f.s * t["sign"] * 0.5 * np.real((t["E"] * np.conj(t["H"])) @ t["w"]) * monitor.dA
    if omega is None:
        return P
    omega = np.atleast_1d(np.asarray(omega, float))
    idx = []
    for w in omega:
        k = np.flatnonzero(np.isclose(monitor.omega, w, rtol=1e-12, atol=1e-12))
        if k.size == 0:
            raise ValueError(f"frequency {w} was not accumulated")
        idx.append(k[0])
    return P[idx]


def incident_intensity(pulse, omega, eps: float = 1.0) -> np.ndarray:
    """Spectral intensity 1/2 |E(w)|^2 / eta of the analytic incident pulse."""
    return 0.5 * np.sqrt(eps) * np.abs(pulse.spectrum(omega)) ** 2


def scattering_cross_section(omega, scatter_flux, pulse, eps: float = 1.0, width: float = 3.0):
    """sigma(w) = P_s(w) / I_inc(w), restricted to |w - w_c| <= width / tau."""
    omega = np.asarray(omega, float)
    P = np.asarray(scatter_flux, float)
    lo, hi = pulse.band(width)
    keep = (omega >= lo) & (omega <= hi)
    return omega[keep], P[keep] / incident_intensity(pulse, omega[keep], eps)


def transmission(port: np.ndarray, reference: np.ndarray, threshold: float = 1e-12):
    """T(w) = P_out / P_ref; frequencies with negligible reference flux raise."""
    port = np.asarray(port, float)
    reference = np.asarray(reference, float)
    floor = threshold * np.max(np.abs(reference))
    if np.any(np.abs(reference) <= floor):
        raise ValueError("reference flux below threshold at some frequencies")
    return port / reference


@dataclass
class Probe:
    """Records one field component at one grid index after every ``every`` steps."""

    component: str
    index: tuple[int, ...]
    every: int = 1
    name: str = "probe"
    t: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def accumulate(self, grid: YeeGrid):
        if grid.n % self.every:
            return
        time = (grid.n - 0.5) * grid.dt if self.component[0] == "E" else grid.n * grid.dt
        self.t.append(time)
        self.values.append(float(grid.fields[self.component][self.index]))
