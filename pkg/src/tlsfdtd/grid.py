"""Yee-grid FDTD engine for 2D TE (Ex, Ey, Hz) and full 3D fields.

Natural units throughout: c0 = eps0 = mu0 = hbar = 1, so a vacuum wavelength
of 1 corresponds to omega = 2*pi.

Index convention (cell units, origin at the grid corner): component ``C`` with
index ``(i, j, k)`` sits at ``(i, j, k) + OFFSETS[C]``. Arrays hold ``n + 1``
entries per axis for ``n`` cells.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

C0 = 1.0

E_COMPONENTS = {2: ("Ex", "Ey"), 3: ("Ex", "Ey", "Ez")}
H_COMPONENTS = {2: ("Hz",), 3: ("Hx", "Hy", "Hz")}

OFFSETS = {
    2: {"Ex": (0.5, 0.0), "Ey": (0.0, 0.5), "Hz": (0.5, 0.5)},
    3: {
        "Ex": (0.5, 0.0, 0.0), "Ey": (0.0, 0.5, 0.0), "Ez": (0.0, 0.0, 0.5),
        "Hx": (0.0, 0.5, 0.5), "Hy": (0.5, 0.0, 0.5), "Hz": (0.5, 0.5, 0.0),
    },
}

# curl stencils: target -> [(source, offset, sign)], differences without 1/dx
CURL = {
    2: {
        "Ex": [("Hz", (0, 0), 1), ("Hz", (0, -1), -1)],
        "Ey": [("Hz", (0, 0), -1), ("Hz", (-1, 0), 1)],
        "Hz": [("Ey", (1, 0), 1), ("Ey", (0, 0), -1), ("Ex", (0, 1), -1), ("Ex", (0, 0), 1)],
    },
    3: {
        "Ex": [("Hz", (0, 0, 0), 1), ("Hz", (0, -1, 0), -1), ("Hy", (0, 0, 0), -1), ("Hy", (0, 0, -1), 1)],
        "Ey": [("Hx", (0, 0, 0), 1), ("Hx", (0, 0, -1), -1), ("Hz", (0, 0, 0), -1), ("Hz", (-1, 0, 0), 1)],
        "Ez": [("Hy", (0, 0, 0), 1), ("Hy", (-1, 0, 0), -1), ("Hx", (0, 0, 0), -1), ("Hx", (0, -1, 0), 1)],
        "Hx": [("Ez", (0, 1, 0), 1), ("Ez", (0, 0, 0), -1), ("Ey", (0, 0, 1), -1), ("Ey", (0, 0, 0), 1)],
        "Hy": [("Ex", (0, 0, 1), 1), ("Ex", (0, 0, 0), -1), ("Ez", (1, 0, 0), -1), ("Ez", (0, 0, 0), 1)],
        "Hz": [("Ey", (1, 0, 0), 1), ("Ey", (0, 0, 0), -1), ("Ex", (0, 1, 0), -1), ("Ex", (0, 0, 0), 1)],
    },
}

AXES = "xyz"


def axis_of(component: str) -> int:
    return AXES.index(component[1])


def cfl_dt(dx: float, courant: float, dim: int, c0: float = C0) -> float:
    """Time step S * dx / (c0 * sqrt(D))."""
    if dim not in (2, 3):
        raise ValueError(f"dimensionality must be 2 or 3, got {dim}")
    if not 0 < courant < 1:
        raise ValueError(f"Courant factor must lie in (0, 1), got {courant}")
    if dx <= 0:
        raise ValueError("dx must be positive")
    return courant * dx / (c0 * math.sqrt(dim))


@dataclass(frozen=True)
class GridSpec:
    shape: tuple[int, ...]  # cell counts per axis
    dx: float
    courant: float = 0.5
    units: str = "natural"

    def __post_init__(self):
        if len(self.shape) not in (2, 3):
            raise ValueError("grid must be 2D or 3D")
        if min(self.shape) < 4:
            raise ValueError("need at least 4 cells per axis")
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        cfl_dt(self.dx, self.courant, len(self.shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def dt(self) -> float:
        return cfl_dt(self.dx, self.courant, self.dim)


@dataclass(frozen=True)
class CpmlParams:
    thickness: int = 10
    order: float = 3.0
    sigma_scale: float = 1.0
    kappa_max: float = 1.0
    alpha_max: float = 0.05

    def __post_init__(self):
        if self.thickness < 6:
            raise ValueError("CPML needs at least 6 cells")
        if min(self.order, self.sigma_scale, self.alpha_max) < 0 or self.kappa_max < 1:
            raise ValueError("CPML parameters must be non-negative (kappa_max >= 1)")


@dataclass
class CurrentSource:
    """Point current on one Yee edge (kind 'J') or face (kind 'M').

    ``waveform(t)`` returns the volume current density; the update adds
    -dt J / eps to E (or -dt M to H) on that single location.

    Anything with ``inject_e(grid, t)`` and ``inject_h(grid, t)`` methods can
    be passed to :meth:`YeeGrid.step_e` / :meth:`YeeGrid.step_h`.
    """

    kind: str
    component: str
    index: tuple[int, ...]
    waveform: Callable[[float], float]

    def __post_init__(self):
        if self.kind not in ("J", "M"):
            raise ValueError("source kind must be 'J' or 'M'")
        self.index = tuple(int(i) for i in self.index)

    def check(self, grid: "YeeGrid"):
        family = grid.e_names if self.kind == "J" else grid.h_names
        if self.component not in family:
            raise ValueError(f"{self.kind} source cannot drive {self.component}")
        r = grid.position(self.component, self.index)
        if not grid.in_interior(r):
            raise ValueError(f"source at {r.tolist()} lies outside the grid interior")

    def inject_e(self, grid: "YeeGrid", t: float):
        if self.kind == "J":
            f = grid.fields[self.component]
            f[self.index] -= grid.ce[self.component][self.index] * grid.dx * self.waveform(t)

    def inject_h(self, grid: "YeeGrid", t: float):
        if self.kind == "M":
            grid.fields[self.component][self.index] -= grid.ch * grid.dx * self.waveform(t)


def _profile(n: int, lo: int, hi: int, shift: float, p: CpmlParams, dx: float, dt: float):
    """Per-axis CPML arrays (b, c, kappa, flag) at positions ``index + shift``."""
    b = np.zeros(n + 1)
    c = np.zeros(n + 1)
    kappa = np.ones(n + 1)
    flag = np.zeros(n + 1, dtype=np.bool_)
    L = p.thickness
    sigma_max = p.sigma_scale * 0.8 * (p.order + 1) / dx
    for i in range(n + 1):
        x = i + shift
        depth = 0.0
        if lo and x < lo:
            depth = (lo - x) / L
        elif hi and x > n - hi:
            depth = (x - (n - hi)) / L
        if depth <= 0:
            continue
        depth = min(depth, 1.0)
        sigma = sigma_max * depth**p.order
        k = 1 + (p.kappa_max - 1) * depth**p.order
        alpha = p.alpha_max * (1 - depth)
        b[i] = math.exp(-(sigma / k + alpha) * dt)
        denom = sigma * k + k * k * alpha
        c[i] = sigma / denom * (b[i] - 1) if denom > 0 else 0.0
        kappa[i] = k
        flag[i] = True
    return b, c, kappa, flag


def _stack(rows, q):
    """Stack per-axis profiles, padding shorter axes (b, c = 0; kappa = 1)."""
    n = max(r.size for r in rows)
    fill = 1.0 if q == 2 else 0
    out = np.full((len(rows), n), fill, dtype=rows[0].dtype)
    for a, r in enumerate(rows):
        out[a, : r.size] = r
    return out


class YeeGrid:
    """Field arrays, material maps and CPML state for one rectangular domain.

    ``boundaries`` maps ``"x-"``, ``"x+"``, ... to ``"cpml"`` or ``"pec"``.
    ``origin`` is the physical coordinate of grid index 0 on every axis.
    """

    def __init__(self, spec: GridSpec, cpml: CpmlParams | None = None,
                 boundaries: dict[str, str] | None = None,
                 origin: Sequence[float] | None = None, parallel: bool = False,
                 dtype=np.float64):
        self.spec = spec
        self.dim = spec.dim
        self.dx = spec.dx
        self.dt = spec.dt
        self.cpml = cpml or CpmlParams()
        bounds = {f"{a}{s}": "cpml" for a in AXES[: self.dim] for s in "-+"}
        if boundaries:
            unknown = set(boundaries) - set(bounds)
            if unknown:
                raise ValueError(f"unknown boundary keys {sorted(unknown)}")
            for key, val in boundaries.items():
                if val not in ("cpml", "pec"):
                    raise ValueError(f"boundary {key} must be 'cpml' or 'pec'")
            bounds.update(boundaries)
        self.boundaries = bounds
        self.origin = np.zeros(self.dim) if origin is None else np.asarray(origin, float)
        self.parallel = parallel
        self.n = 0
        shape = tuple(s + 1 for s in spec.shape)
        self.array_shape = shape
        self.e_names = E_COMPONENTS[self.dim]
        self.h_names = H_COMPONENTS[self.dim]
        # components of one family share a block so coupling kernels can index them by number
        self.E = np.zeros((len(self.e_names),) + shape, dtype=dtype)
        self.H = np.zeros((len(self.h_names),) + shape, dtype=dtype)
        self.fields = {c: self.E[a] for a, c in enumerate(self.e_names)}
        self.fields.update({c: self.H[a] for a, c in enumerate(self.h_names)})
        self.eps = {c: np.ones(shape) for c in self.e_names}
        self.pec = {c: np.zeros(shape, dtype=np.bool_) for c in self.e_names}
        self._pec_idx: dict[str, np.ndarray] = {}
        self._build_cpml()
        self._update_coefficients()

    # -- setup -----------------------------------------------------------
    def _build_cpml(self):
        L = self.cpml.thickness
        prof_e, prof_h = [], []
        self.interior_lo = []
        self.interior_hi = []
        for a in range(self.dim):
            n = self.spec.shape[a]
            lo = L if self.boundaries[f"{AXES[a]}-"] == "cpml" else 0
            hi = L if self.boundaries[f"{AXES[a]}+"] == "cpml" else 0
            if lo + hi >= n:
                raise ValueError(f"axis {AXES[a]} too small for its CPML layers")
            self.interior_lo.append(lo)
            self.interior_hi.append(n - hi)
            prof_e.append(_profile(n, lo, hi, 0.0, self.cpml, self.dx, self.dt))
            prof_h.append(_profile(n, lo, hi, 0.5, self.cpml, self.dx, self.dt))
        self._pe = tuple(_stack([p[q] for p in prof_e], q) for q in range(4))
        self._ph = tuple(_stack([p[q] for p in prof_h], q) for q in range(4))
        # per-axis index lists of the absorbing slabs
        self._sl_e = tuple(np.flatnonzero(p[3]).astype(np.int64) for p in prof_e)
        self._sl_h = tuple(np.flatnonzero(p[3]).astype(np.int64) for p in prof_h)
        shape = self.array_shape
        if self.dim == 2:
            self._psi_e = [np.zeros(shape) for _ in range(2)]
            self._psi_h = [np.zeros(shape) for _ in range(2)]
        else:
            self._psi_e = [np.zeros(shape) for _ in range(6)]
            self._psi_h = [np.zeros(shape) for _ in range(6)]

    def _update_coefficients(self):
        self.ce = {}
        for c in self.e_names:
            coef = self.dt / (self.eps[c] * self.dx)
            coef[self.pec[c]] = 0.0
            self.ce[c] = np.ascontiguousarray(coef)
            self._pec_idx[c] = np.flatnonzero(self.pec[c])
            self.fields[c][self.pec[c]] = 0.0
        self.ch = self.dt / self.dx

    def coords(self, component: str):
        """Open-mesh physical coordinates of ``component`` along each axis."""
        off = OFFSETS[self.dim][component]
        axes = [self.origin[a] + (np.arange(self.array_shape[a]) + off[a]) * self.dx
                for a in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def set_material(self, eps_fn: Callable | None = None, pec_fn: Callable | None = None):
        """Evaluate relative permittivity / PEC predicates at every E-edge position."""
        for c in self.e_names:
            xs = self.coords(c)
            if eps_fn is not None:
                self.eps[c] = np.broadcast_to(np.asarray(eps_fn(*xs), float), self.array_shape).copy()
            if pec_fn is not None:
                self.pec[c] = np.broadcast_to(np.asarray(pec_fn(*xs), bool), self.array_shape).copy()
        self._update_coefficients()

    # -- geometry helpers ------------------------------------------------
    def position(self, component: str, index: Sequence[int]) -> np.ndarray:
        off = OFFSETS[self.dim][component]
        return self.origin + (np.asarray(index, float) + np.asarray(off)) * self.dx

    def nearest_index(self, component: str, r: Sequence[float]) -> tuple[int, ...]:
        off = np.asarray(OFFSETS[self.dim][component])
        u = (np.asarray(r, float) - self.origin) / self.dx - off
        return tuple(int(v) for v in np.floor(u + 0.5))

    def in_interior(self, r: Sequence[float], margin: float = 0.0) -> bool:
        """True if ``r`` lies at least ``margin`` cells inside the non-CPML region."""
        u = (np.asarray(r, float) - self.origin) / self.dx
        return all(self.interior_lo[a] + margin <= u[a] <= self.interior_hi[a] - margin
                   for a in range(self.dim))

    @property
    def time_e(self) -> float:
        """Time level of the stored E field (after the step-n E update)."""
        return (self.n - 0.5) * self.dt

    @property
    def time_h(self) -> float:
        return self.n * self.dt

    # -- updates ---------------------------------------------------------
    def step_e(self, j_sources: Iterable = (), t: float | None = None):
        """Advance E by one step (n-1/2 -> n+1/2) using H at level n."""
        f = self.fields
        be, ce, ke, _ = self._pe
        if self.dim == 2:
            kernels.get("e2d", self.parallel)(f["Ex"], f["Ey"], f["Hz"], self.ce["Ex"],
                                              self.ce["Ey"], *self._psi_e, be, ce, ke,
                                              *self._sl_e)
        else:
            kernels.get("e3d", self.parallel)(
                f["Ex"], f["Ey"], f["Ez"], f["Hx"], f["Hy"], f["Hz"],
                self.ce["Ex"], self.ce["Ey"], self.ce["Ez"], *self._psi_e, be, ce, ke,
                *self._sl_e)
        t = self.n * self.dt if t is None else t
        for src in j_sources:
            src.inject_e(self, t)
        for c in self.e_names:
            idx = self._pec_idx[c]
            if idx.size:
                f[c].reshape(-1)[idx] = 0.0

    def step_h(self, m_sources: Iterable = (), t: float | None = None):
        """Advance H by one step (n -> n+1) using E at level n+1/2, then bump n."""
        f = self.fields
        bh, chh, kh, _ = self._ph
        if self.dim == 2:
            kernels.get("h2d", self.parallel)(f["Ex"], f["Ey"], f["Hz"], self.ch,
                                              *self._psi_h, bh, chh, kh, *self._sl_h)
        else:
            kernels.get("h3d", self.parallel)(
                f["Ex"], f["Ey"], f["Ez"], f["Hx"], f["Hy"], f["Hz"], self.ch,
                *self._psi_h, bh, chh, kh, *self._sl_h)
        t = (self.n + 0.5) * self.dt if t is None else t
        for src in m_sources:
            src.inject_h(self, t)
        self.n += 1

    def step(self, j_sources: Iterable = (), m_sources: Iterable = ()):
        self.step_e(j_sources)
        self.step_h(m_sources)

    # -- observation -----------------------------------------------------
    def sample_e(self, r: Sequence[float]) -> np.ndarray:
        """Linearly interpolated E vector at physical position ``r`` (non-CPML region)."""
        r = np.asarray(r, float)
        if r.shape != (self.dim,):
            raise ValueError(f"position must have {self.dim} coordinates")
        if not self.in_interior(r):
            raise ValueError(f"position {r.tolist()} is outside the grid interior")
        out = np.zeros(self.dim)
        for a, c in enumerate(self.e_names):
            u = (r - self.origin) / self.dx - np.asarray(OFFSETS[self.dim][c])
            base = np.floor(u).astype(int)
            frac = u - base
            arr = self.fields[c]
            acc = 0.0
            for corner in np.ndindex(*(2,) * self.dim):
                w = 1.0
                idx = []
                for ax, bit in enumerate(corner):
                    w *= frac[ax] if bit else 1.0 - frac[ax]
                    idx.append(base[ax] + bit)
                if w == 0.0:
                    continue
                acc += w * arr[tuple(idx)]
            out[a] = acc
        return out

    def energy(self) -> float:
        """Electromagnetic energy 1/2 sum(eps E^2 + H^2) dV (E and H half a step apart)."""
        vol = self.dx**self.dim
        we = sum(float(np.sum(self.eps[c] * self.fields[c] ** 2)) for c in self.e_names)
        wh = sum(float(np.sum(self.fields[c] ** 2)) for c in self.h_names)
        return 0.5 * (we + wh) * vol

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.fields.values())

    def all_finite(self) -> bool:
        return all(bool(np.isfinite(a).all()) for a in self.fields.values())

    def export_snapshot(self, directory, components: Sequence[str] | None = None,
                        prefix: str = "snap") -> list[Path]:
        """Write one little-endian float64 file per component plus a JSON sidecar."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for c in components or (self.e_names + self.h_names):
            stem = f"{prefix}_{c}_{self.n:08d}"
            data = np.ascontiguousarray(self.fields[c], dtype="<f8")
            (directory / f"{stem}.bin").write_bytes(data.tobytes(order="C"))
            meta = {"component": c, "shape": list(data.shape), "dx": self.dx, "dt": self.dt,
                    "step": self.n, "origin": self.origin.tolist(),
                    "offset": list(OFFSETS[self.dim][c]), "dtype": "<f8", "order": "C"}
            (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
            written.append(directory / f"{stem}.bin")
        return written


def load_snapshot(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    return data, meta
