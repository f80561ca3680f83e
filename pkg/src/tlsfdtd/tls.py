"""Two-level-system dynamics: single-excitation amplitudes and semiclassical baselines.

Every model stores two complex numbers per emitter:

    amplitude    (b, 0)              db/dt = (-i w0 - G/2) b + i d.E
    schrodinger  (c_e, c_g)          no decay term
    bloch        (rho_ee, rho_eg)    rho_ee kept real

The field drives each model through the projection d.E onto the dipole axis.
All integrators use RK4 with ``nsub`` substeps. The drive is the straight
line through E^{n-1/2} and E^{n+1/2}: interpolated over the first half step
and extrapolated over the second. Holding E^{n+1/2} instead (``hold=True``)
delays the drive by about dt/8, which turns near-field coupling into a
spurious dissipative term between close emitters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from . import oracles

MODELS = ("amplitude", "schrodinger", "bloch")
NSUB = 5


@dataclass(frozen=True)
class TlsDescriptor:
    """Static emitter parameters. ``gamma=None`` means use the vacuum value for ``dim``."""

    omega0: float
    dipole: tuple[float, ...]
    position: tuple[float, ...]
    gamma: float | None = None
    index: int = 0

    def __post_init__(self):
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")
        d = np.asarray(self.dipole, float)
        if d.shape != np.asarray(self.position).shape:
            raise ValueError("dipole and position must have the same dimension")
        if not np.any(d):
            raise ValueError("dipole moment must be nonzero")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.position)

    @property
    def dmag(self) -> float:
        return float(np.linalg.norm(self.dipole))

    @property
    def axis(self) -> int:
        """Grid axis of the dipole; raises if it is not axis aligned."""
        nz = np.flatnonzero(np.asarray(self.dipole, float))
        if nz.size != 1:
            raise ValueError(f"TLS {self.index}: dipole must align with a grid axis")
        return int(nz[0])

    @property
    def sign(self) -> float:
        return float(np.sign(self.dipole[self.axis]))

    @property
    def rate(self) -> float:
        """Decay rate entering the amplitude equation."""
        if self.gamma is not None:
            return self.gamma
        return oracles.gamma_vac(self.omega0, self.dmag, self.dim)


@dataclass
class TlsState:
    b: complex = 0.0

    @property
    def P(self) -> float:
        return abs(self.b) ** 2


@dataclass
class SemiclassicalState:
    """Schrodinger (c_e, c_g) or Bloch (rho_ee, rho_eg) variables."""

    model: str
    y: np.ndarray = field(default_factory=lambda: np.zeros(2, complex))

    @classmethod
    def schrodinger(cls, c_e: complex, c_g: complex):
        return cls("schrodinger", np.array([c_e, c_g], complex))

    @classmethod
    def bloch(cls, rho_ee: float, rho_eg: complex):
        return cls("bloch", np.array([rho_ee, rho_eg], complex))

    @property
    def P(self) -> float:
        return population(self.model, self.y)


def tls_rhs(b: complex, E_at_tls: Sequence[float], desc: TlsDescriptor) -> complex:
    """Right-hand side of the amplitude equation."""
    drive = float(np.dot(desc.dipole, E_at_tls))
    return (-1j * desc.omega0 - 0.5 * desc.rate) * b + 1j * drive


def tls_current_amplitude(b: complex, desc: TlsDescriptor) -> np.ndarray:
    """Emission current vector 2 w0 d Im(b), before division by the cell volume."""
    return 2.0 * desc.omega0 * np.asarray(desc.dipole, float) * np.imag(b)


@numba.njit(cache=True)
def _rhs(code, y0, y1, w0, g, dE):
    if code == 0:
        return (-1j * w0 - 0.5 * g) * y0 + 1j * dE, 0j
    if code == 1:
        return -1j * w0 * y0 + 1j * dE * y1, 1j * dE * y0
    ree = y0.real
    reg = y1
    d_ee = 1j * dE * (np.conj(reg) - reg) - g * ree
    d_eg = (-1j * w0 - 0.5 * g) * reg + 1j * dE * (1.0 - 2.0 * ree)
    return d_ee.real + 0j, d_eg


@numba.njit(cache=True)
def rk4_models(code, y, omega0, gamma, dmag, e_old, e_new, dt, nsub, hold=False):
    """Advance every emitter ``m`` (model ``code[m]``) by one step in place.

    ``e_old``/``e_new`` are the field projections onto the dipole axis at the
    start-minus-half and start-plus-half of the step.
    """
    h = dt / nsub
    cap = 1.0 if hold else 1.5
    for m in range(y.shape[0]):
        c = code[m]
        a = y[m, 0]
        b = y[m, 1]
        w0 = omega0[m]
        g = gamma[m]
        d = dmag[m]
        e0 = e_old[m]
        e1 = e_new[m]
        for s in range(nsub):
            ta = s * h
            fa = d * (e0 + (e1 - e0) * min(ta / dt + 0.5, cap))
            fb = d * (e0 + (e1 - e0) * min((ta + 0.5 * h) / dt + 0.5, cap))
            fc = d * (e0 + (e1 - e0) * min((ta + h) / dt + 0.5, cap))
            k1a, k1b = _rhs(c, a, b, w0, g, fa)
            k2a, k2b = _rhs(c, a + 0.5 * h * k1a, b + 0.5 * h * k1b, w0, g, fb)
            k3a, k3b = _rhs(c, a + 0.5 * h * k2a, b + 0.5 * h * k2b, w0, g, fb)
            k4a, k4b = _rhs(c, a + h * k3a, b + h * k3b, w0, g, fc)
            a = a + h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
            b = b + h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
        y[m, 0] = a
        y[m, 1] = b


def _advance(model: str, y, desc: TlsDescriptor, e_old, e_new, dt, nsub, hold=False):
    arr = np.array([y], dtype=complex)
    d = np.asarray(desc.dipole, float)
    u = d / np.linalg.norm(d)
    rk4_models(np.array([MODELS.index(model)]), arr, np.array([desc.omega0]),
               np.array([0.0 if model == "schrodinger" else desc.rate]),
               np.array([desc.dmag]),
               np.array([float(np.dot(u, e_old))]), np.array([float(np.dot(u, e_new))]),
               dt, nsub, hold)
    return arr[0]


def _as_pair(E_samples, dim):
    """Accept one field vector (constant drive) or a pair (E^{n-1/2}, E^{n+1/2})."""
    E = np.asarray(E_samples, float)
    if E.ndim == 1:
        return E, E
    if E.shape[0] != 2:
        raise ValueError("E_samples must be one vector or a pair of vectors")
    return E[0], E[1]


def step_tls_rk4(state: TlsState, E_samples, desc: TlsDescriptor, dt: float,
                 nsub: int = NSUB, hold: bool = False) -> TlsState:
    """Advance the amplitude by ``dt`` with ``nsub`` RK4 substeps."""
    e_old, e_new = _as_pair(E_samples, desc.dim)
    y = _advance("amplitude", np.array([state.b, 0.0]), desc, e_old, e_new, dt, nsub, hold)
    return TlsState(complex(y[0]))


def step_schrodinger(state: SemiclassicalState, E_samples, desc: TlsDescriptor, dt: float,
                     nsub: int = NSUB, hold: bool = False) -> SemiclassicalState:
    if state.model != "schrodinger":
        raise ValueError("expected a Schrodinger state")
    e_old, e_new = _as_pair(E_samples, desc.dim)
    return SemiclassicalState("schrodinger", _advance("schrodinger", state.y, desc, e_old, e_new, dt, nsub, hold))


def step_bloch(state: SemiclassicalState, E_samples, desc: TlsDescriptor, dt: float,
               nsub: int = NSUB, hold: bool = False) -> SemiclassicalState:
    if state.model != "bloch":
        raise ValueError("expected a Bloch state")
    e_old, e_new = _as_pair(E_samples, desc.dim)
    return SemiclassicalState("bloch", _advance("bloch", state.y, desc, e_old, e_new, dt, nsub, hold))


def initial_state(model: str, b0: complex) -> np.ndarray:
    """Two-slot state for ``model`` with excited amplitude ``b0`` (pure state)."""
    if model == "amplitude":
        return np.array([b0, 0.0], complex)
    p = abs(b0) ** 2
    if p > 1 + 1e-12:
        raise ValueError("|b0| must not exceed 1")
    cg = np.sqrt(max(0.0, 1.0 - p))
    if model == "schrodinger":
        return np.array([b0, cg], complex)
    if model == "bloch":
        return np.array([p, b0 * cg], complex)
    raise ValueError(f"unknown TLS model {model!r}")


def population(model: str, y) -> float:
    if model == "bloch":
        return float(np.real(y[0]))
    return float(abs(y[0]) ** 2)


def coherence(model: str, y) -> complex:
    """The quantity whose imaginary part sets the emission current."""
    if model == "amplitude":
        return complex(y[0])
    if model == "schrodinger":
        return complex(y[0] * np.conj(y[1]))
    return complex(y[1])
