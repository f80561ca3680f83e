"""Self-interaction exclusion with per-emitter auxiliary grids.

Each emitter radiates into its own small homogeneous grid. The field of that
grid is added to the main grid only outside a box Omega around the emitter,
so the main-grid field inside Omega never contains the emitter's own primary
radiation while everything scattered back from the environment still gets in.

The split is done with a region mask: chi = 1 where the added field lives.
Every curl stencil that straddles the mask boundary picks up a correction
``sign * (chi_target - chi_source) * A_source``. On the boundary these terms
are the discrete surface currents J = n x H and M = -n x E; away from it
they vanish. The same helper drives the plane-wave box in ``sources``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .grid import AXES, CURL, OFFSETS, CpmlParams, GridSpec, YeeGrid
from .tls import MODELS, TlsDescriptor, coherence, initial_state, population, rk4_models

AUX_MARGIN = 4


@dataclass
class PairList:
    """Correction pairs ``dst[tc, ti] += cf * src[sc, si]`` on flattened field blocks."""

    tc: np.ndarray
    ti: np.ndarray
    sc: np.ndarray
    si: np.ndarray
    cf: np.ndarray

    def __len__(self):
        return int(self.tc.size)

    def apply(self, dst_block: np.ndarray, src_block: np.ndarray):
        kernels.apply_pairs(dst_block.reshape(dst_block.shape[0], -1),
                            src_block.reshape(src_block.shape[0], -1),
                            self.tc, self.ti, self.sc, self.si, self.cf)


def mask_pairs(grid: YeeGrid, chi: Callable[[str, np.ndarray], np.ndarray],
               lo: Sequence[int], hi: Sequence[int], targets: str):
    """Stencil pairs across the boundary of the region ``chi``.

    ``chi(component, positions)`` returns a boolean per row of ``positions``
    (cell units, shape (P, D)). Targets are searched over index box
    ``lo..hi`` inclusive. Returns ``(target_comp, target_idx, source_comp,
    source_idx, coef)`` with multi-indices as (P, D) int arrays and
    ``coef = sign * (chi_t - chi_s)``.
    """
    dim = grid.dim
    names = grid.e_names if targets == "E" else grid.h_names
    axes = [np.arange(lo[a], hi[a] + 1) for a in range(dim)]
    base = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)
    out = ([], [], [], [], [])
    for comp in names:
        off_t = np.asarray(OFFSETS[dim][comp])
        chi_t = chi(comp, base + off_t).astype(int)
        for src, off, sign in CURL[dim][comp]:
            s_idx = base + np.asarray(off)
            chi_s = chi(src, s_idx + np.asarray(OFFSETS[dim][src])).astype(int)
            coef = sign * (chi_t - chi_s)
            keep = coef != 0
            if not keep.any():
                continue
            n = int(keep.sum())
            out[0].append(np.full(n, comp, dtype=object))
            out[1].append(base[keep])
            out[2].append(np.full(n, src, dtype=object))
            out[3].append(s_idx[keep])
            out[4].append(coef[keep].astype(float))
    if not out[0]:
        z = np.zeros((0, dim), int)
        return np.zeros(0, object), z, np.zeros(0, object), z, np.zeros(0)
    return tuple(np.concatenate(o) for o in out)


def _check_updatable(grid: YeeGrid, comps, idx):
    """Targets must be cells the bulk kernels update (not frozen outer planes)."""
    n = np.asarray(grid.spec.shape)
    for c, i in zip(comps, idx):
        if np.any(i < 1) or np.any(i > n - 1):
            raise ValueError("boundary box touches the grid edge")


@dataclass(frozen=True)
class OmegaBox:
    """Open box |p - center| < half_width (cells) on every axis, in grid cell units."""

    center: tuple[float, ...]
    half_width: int = 1

    def __post_init__(self):
        if self.half_width < 1:
            raise ValueError("Omega half-width must be at least 1 cell")

    def contains(self, positions: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(positions)
        return np.all(np.abs(p - np.asarray(self.center)) < self.half_width, axis=1)

    def faces(self):
        """Face list as (axis, side, outward normal)."""
        dim = len(self.center)
        out = []
        for a in range(dim):
            for side in (-1, 1):
                n = np.zeros(dim)
                n[a] = side
                out.append((a, side, n))
        return out

    def index_bounds(self, margin: int = 2):
        c = np.asarray(self.center)
        lo = np.floor(c - self.half_width).astype(int) - margin
        hi = np.ceil(c + self.half_width).astype(int) + margin
        return lo, hi


class AuxiliaryGrid:
    """Homogeneous grid radiating one emitter's primary field.

    The aux grid shares dx and dt with the main grid; its index ``k`` maps to
    main index ``k + offset``.
    """

    def __init__(self, main: YeeGrid, component: str, index: Sequence[int], box: OmegaBox,
                 eps: float, cpml: CpmlParams | None = None, margin: int = AUX_MARGIN):
        cpml = cpml or main.cpml
        if margin < 2:
            raise ValueError("aux margin must be at least 2 cells")
        m = box.half_width + cpml.thickness + margin
        dim = main.dim
        # the source edge sits mid-cell along its own axis and on a node across it;
        # 2m+1 cells along and 2m across centre the domain on it exactly
        off = OFFSETS[dim][component]
        shape = tuple(2 * m + 1 if o else 2 * m for o in off)
        spec = GridSpec(shape, main.dx, main.spec.courant, main.spec.units)
        self.offset = np.asarray(index, int) - m
        self.grid = YeeGrid(spec, cpml, origin=main.origin + self.offset * main.dx,
                            parallel=main.parallel)
        if eps != 1.0:
            self.grid.set_material(lambda *xs: eps)
        assert abs(self.grid.dt - main.dt) == 0.0
        self.component = component
        self.comp_no = main.e_names.index(component)
        self.index = (m,) * dim
        self.box = box
        self._ce_src = float(self.grid.ce[component][self.index])

    def drive(self, current: float):
        """Add a point volume current (already divided by cell volume) at the emitter edge."""
        self.grid.fields[self.component][self.index] -= self._ce_src * self.grid.dx * current


class SurfaceCurrents:
    """Equivalent currents on the Omega boundary of one emitter.

    ``e_pairs`` carries J (main E targets fed by aux H), ``h_pairs`` carries M
    (main H targets fed by aux E). Coefficients already include the update
    factors, so ``apply`` just adds them.
    """

    def __init__(self, main: YeeGrid, aux: AuxiliaryGrid):
        self.aux = aux
        box = aux.box
        chi = lambda comp, pos: ~box.contains(pos)
        lo, hi = box.index_bounds()
        self.e_pairs = self._build(main, chi, lo, hi, "E", aux)
        self.h_pairs = self._build(main, chi, lo, hi, "H", aux)

    @staticmethod
    def _build(main, chi, lo, hi, fam, aux):
        tc, ti, sc, si, coef = mask_pairs(main, chi, lo, hi, fam)
        _check_updatable(main, tc, ti)
        shape = main.array_shape
        tnames = main.e_names if fam == "E" else main.h_names
        snames = main.h_names if fam == "E" else main.e_names
        t_no = np.array([tnames.index(c) for c in tc], np.int64)
        s_no = np.array([snames.index(c) for c in sc], np.int64)
        t_flat = np.ravel_multi_index(tuple(ti.T), shape).astype(np.int64)
        s_aux = si - aux.offset
        s_flat = np.ravel_multi_index(tuple(s_aux.T), aux.grid.array_shape).astype(np.int64)
        if fam == "E":
            ce = np.stack([main.ce[c] for c in main.e_names]).reshape(len(tnames), -1)
            cf = ce[t_no, t_flat] * coef
        else:
            cf = -main.ch * coef
        return PairList(t_no, t_flat, s_no, s_flat, np.ascontiguousarray(cf))

    def currents(self):
        """Current samples (J_rad, M_rad) on the boundary, as the correction terms they add."""
        g = self.aux.grid
        j = self.e_pairs.cf * g.H.reshape(g.H.shape[0], -1)[self.e_pairs.sc, self.e_pairs.si]
        m = self.h_pairs.cf * g.E.reshape(g.E.shape[0], -1)[self.h_pairs.sc, self.h_pairs.si]
        return j, m

    def inject_e(self, grid: YeeGrid, t: float):
        self.e_pairs.apply(grid.E, self.aux.grid.H)

    def inject_h(self, grid: YeeGrid, t: float):
        self.h_pairs.apply(grid.H, self.aux.grid.E)


def compute_surface_currents_J(sc: SurfaceCurrents) -> np.ndarray:
    """Electric-current corrections from the aux H field (one value per pair)."""
    return sc.currents()[0]


def compute_surface_currents_M(sc: SurfaceCurrents) -> np.ndarray:
    """Magnetic-current corrections from the aux E field (one value per pair)."""
    return sc.currents()[1]


def inject_surface_currents(main: YeeGrid, sc: SurfaceCurrents, family: str):
    """Add the J (``family='E'``) or M (``'H'``) corrections to the main grid."""
    if family == "E":
        sc.inject_e(main, 0.0)
    elif family == "H":
        sc.inject_h(main, 0.0)
    else:
        raise ValueError("family must be 'E' or 'H'")


class _DirectDipoles:
    """Emitter currents written straight into the main grid (no exclusion)."""

    def __init__(self, system: "TlsSystem", members: list[int]):
        self.system = system
        self.members = members

    def inject_e(self, grid: YeeGrid, t: float):
        s = self.system
        for m in self.members:
            f = grid.E[s.comp_no[m]]
            idx = s.edge[m]
            f[idx] -= grid.ce[grid.e_names[s.comp_no[m]]][idx] * grid.dx * s.current[m]

    def inject_h(self, grid: YeeGrid, t: float):
        pass


class TlsSystem:
    """Main grid, emitters, auxiliary grids and the coupled time loop.

    ``models`` selects the emitter dynamics per TLS ("amplitude", "schrodinger"
    or "bloch"); ``exclude`` switches the auxiliary-grid exclusion per TLS. With
    exclusion off the emitter current goes straight into the main grid and the
    emitter sees its own field. ``aux_margin`` pads the auxiliary grids
    between the Omega box and their CPML; the residual CPML reflection that
    leaks into Omega drops as the margin grows.
    """

    def __init__(self, grid: YeeGrid, tls: Sequence[TlsDescriptor], b0: Sequence[complex] = (),
                 models: Sequence[str] | None = None, exclude: Sequence[bool] | None = None,
                 half_width: int = 1, sources: Sequence = (), monitors: Sequence = (),
                 nsub: int = 5, interface_warning: bool = True,
                 aux_margin: int = AUX_MARGIN, aux_cpml: CpmlParams | None = None,
                 hold_drive: bool = False):
        self.grid = grid
        self.tls = list(tls)
        n = len(self.tls)
        self.models = list(models) if models is not None else ["amplitude"] * n
        self.exclude = list(exclude) if exclude is not None else [True] * n
        b0 = list(b0) if len(b0) else [0.0] * n
        if not (len(self.models) == len(self.exclude) == len(b0) == n):
            raise ValueError("per-TLS lists must all have one entry per TLS")
        for mdl in self.models:
            if mdl not in MODELS:
                raise ValueError(f"unknown TLS model {mdl!r}")
        self.sources = list(sources)
        self.monitors = list(monitors)
        self.nsub = nsub
        self.hold_drive = hold_drive
        self.half_width = half_width
        dim = grid.dim
        self.comp_no = []
        self.edge = []
        self.sign = np.zeros(n)
        self.boxes = []
        for i, d in enumerate(self.tls):
            if d.dim != dim:
                raise ValueError(f"TLS {i}: position has wrong dimension")
            comp = grid.e_names[d.axis]
            idx = grid.nearest_index(comp, d.position)
            pos = grid.position(comp, idx)
            if not grid.in_interior(pos, margin=half_width + 1):
                raise ValueError(f"TLS {i}: too close to the CPML or outside the domain")
            self.comp_no.append(d.axis)
            self.edge.append(idx)
            self.sign[i] = d.sign
            center = (np.asarray(idx) + np.asarray(OFFSETS[dim][comp]))
            self.boxes.append(OmegaBox(tuple(center.tolist()), half_width))
        self._check_layout()
        self.code = np.array([MODELS.index(m) for m in self.models], np.int64)
        self.y = np.array([initial_state(m, b) for m, b in zip(self.models, b0)],
                          complex).reshape(n, 2)
        self.omega0 = np.array([d.omega0 for d in self.tls], float)
        self.gamma = np.array([0.0 if m == "schrodinger" else d.rate
                               for d, m in zip(self.tls, self.models)], float)
        self.dmag = np.array([d.dmag for d in self.tls], float)
        self._flat = np.array([np.ravel_multi_index(e, grid.array_shape) for e in self.edge],
                              np.int64).reshape(n)
        self._cno = np.array(self.comp_no, np.int64).reshape(n)
        self.e_prev = np.zeros(n)
        self.current = np.zeros(n)
        self.aux: list[AuxiliaryGrid | None] = []
        self.couplers: list[SurfaceCurrents] = []
        for i, d in enumerate(self.tls):
            if not self.exclude[i]:
                self.aux.append(None)
                continue
            comp = grid.e_names[self.comp_no[i]]
            eps = float(grid.eps[comp][self.edge[i]])
            if interface_warning:
                self._warn_interface(i, comp)
            aux = AuxiliaryGrid(grid, comp, self.edge[i], self.boxes[i], eps, aux_cpml, aux_margin)
            self.aux.append(aux)
            self.couplers.append(SurfaceCurrents(grid, aux))
        direct = [i for i in range(n) if not self.exclude[i]]
        self._direct = _DirectDipoles(self, direct) if direct else None
        self._update_current()

    # -- setup checks ------------------------------------------------------
    def _check_layout(self):
        dim = self.grid.dim
        for i, box in enumerate(self.boxes):
            for j in range(len(self.tls)):
                if i == j:
                    continue
                if self.edge[i] == self.edge[j] and self.comp_no[i] == self.comp_no[j]:
                    raise ValueError(f"TLS {i} and {j} share a sampling node")
                cj = self.grid.e_names[self.comp_no[j]]
                pj = np.asarray(self.edge[j]) + np.asarray(OFFSETS[dim][cj])
                if box.contains(pj)[0]:
                    raise ValueError(f"TLS {j} lies inside the Omega box of TLS {i}")

    def _warn_interface(self, i: int, comp: str):
        g = self.grid
        idx = np.asarray(self.edge[i])
        # the boundary stencil reaches one cell past the box
        sl = tuple(slice(max(v - 1 - self.half_width, 0), v + 2 + self.half_width) for v in idx)
        eps0 = g.eps[comp][tuple(idx)]
        for c in g.e_names:
            if np.any(g.eps[c][sl] != eps0) or np.any(g.pec[c][sl]):
                warnings.warn(f"TLS {i}: material changes inside the Omega-box stencil; "
                              "the primary-field split is approximate there", RuntimeWarning,
                              stacklevel=3)
                return

    # -- dynamics ------------------------------------------------------------
    def _update_current(self):
        n = len(self.tls)
        vol = self.grid.dx ** self.grid.dim
        for m in range(n):
            coh = coherence(self.models[m], self.y[m])
            self.current[m] = 2.0 * self.omega0[m] * self.dmag[m] * self.sign[m] * coh.imag / vol

    def sample(self) -> np.ndarray:
        """Main-grid E projected on each dipole axis (with its sign)."""
        flatE = self.grid.E.reshape(self.grid.E.shape[0], -1)
        return flatE[self._cno, self._flat] * self.sign

    def step(self):
        """One full time step in the fixed nine-stage order."""
        g = self.grid
        # (1)+(2) main E with boundary J from aux H^n and any external sources
        srcs = list(self.sources) + self.couplers
        if self._direct is not None:
            srcs.append(self._direct)
        g.step_e(srcs)
        # (3) aux E with the emitter currents J^n
        for m, aux in enumerate(self.aux):
            if aux is not None:
                aux.grid.step_e()
                aux.drive(self.current[m])
        # (4)+(5) main H with boundary M from aux E^{n+1/2}
        g.step_h(list(self.sources) + self.couplers)
        for mon in self.monitors:
            mon.accumulate(g)
        # (6) aux H
        for aux in self.aux:
            if aux is not None:
                aux.grid.step_h()
        # (7) emitters from the sampled E^{n+1/2}
        if len(self.tls):
            e_new = self.sample()
            rk4_models(self.code, self.y, self.omega0, self.gamma, self.dmag,
                       self.e_prev, e_new, g.dt, self.nsub, self.hold_drive)
            self.e_prev = e_new
            # (8) currents for the next step
            self._update_current()
        # (9) step counter advanced by step_h

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def t(self) -> float:
        return self.grid.n * self.grid.dt

    def populations(self) -> np.ndarray:
        return np.array([population(m, y) for m, y in zip(self.models, self.y)])

    def amplitudes(self) -> np.ndarray:
        """Excited amplitude b (amplitude model) or coherence (baselines) per TLS."""
        return np.array([coherence(m, y) for m, y in zip(self.models, self.y)])

    def energy(self) -> float:
        return self.grid.energy()

    def all_finite(self) -> bool:
        return self.grid.all_finite() and bool(np.all(np.isfinite(self.y)))


def step_system(system: TlsSystem) -> TlsSystem:
    system.step()
    return system
