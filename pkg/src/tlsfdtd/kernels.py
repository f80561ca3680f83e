"""Compiled Yee update kernels.

All field arrays have shape ``n + 1`` per axis (``n`` cells). Tangential E on
the outermost planes is never written, which makes the grid edge a PEC wall.

Each half step is a branch-free bulk pass followed by CPML correction passes
that visit only the absorbing slabs (index lists ``sl*``). The correction adds
``c * (psi + d * (1/kappa - 1))`` so the bulk pass stays kappa-free. Every
cell update reads only the opposite field family, so the result does not
depend on loop order or thread count.
"""
from __future__ import annotations

import numba
from numba import prange


def _e2d(Ex, Ey, Hz, cex, cey, pex_y, pey_x, be, ce, ke, slx, sly):
    nx = Ex.shape[0] - 1
    ny = Ex.shape[1] - 1
    for i in prange(nx):
        for j in range(1, ny):
            Ex[i, j] += cex[i, j] * (Hz[i, j] - Hz[i, j - 1])
    for i in prange(1, nx):
        for j in range(ny):
            Ey[i, j] -= cey[i, j] * (Hz[i, j] - Hz[i - 1, j])
    # CPML slabs
    for jj in range(sly.shape[0]):
        j = sly[jj]
        if j < 1 or j >= ny:
            continue
        for i in range(nx):
            d = Hz[i, j] - Hz[i, j - 1]
            pex_y[i, j] = be[1, j] * pex_y[i, j] + ce[1, j] * d
            Ex[i, j] += cex[i, j] * (pex_y[i, j] + d * (1.0 / ke[1, j] - 1.0))
    for ii in range(slx.shape[0]):
        i = slx[ii]
        if i < 1 or i >= nx:
            continue
        for j in range(ny):
            d = Hz[i, j] - Hz[i - 1, j]
            pey_x[i, j] = be[0, i] * pey_x[i, j] + ce[0, i] * d
            Ey[i, j] -= cey[i, j] * (pey_x[i, j] + d * (1.0 / ke[0, i] - 1.0))


def _h2d(Ex, Ey, Hz, ch, phz_x, phz_y, bh, chh, kh, slx, sly):
    nx = Ex.shape[0] - 1
    ny = Ex.shape[1] - 1
    for i in prange(nx):
        for j in range(ny):
            Hz[i, j] -= ch * ((Ey[i + 1, j] - Ey[i, j]) - (Ex[i, j + 1] - Ex[i, j]))
    for ii in range(slx.shape[0]):
        i = slx[ii]
        if i >= nx:
            continue
        for j in range(ny):
            d = Ey[i + 1, j] - Ey[i, j]
            phz_x[i, j] = bh[0, i] * phz_x[i, j] + chh[0, i] * d
            Hz[i, j] -= ch * (phz_x[i, j] + d * (1.0 / kh[0, i] - 1.0))
    for jj in range(sly.shape[0]):
        j = sly[jj]
        if j >= ny:
            continue
        for i in range(nx):
            d = Ex[i, j + 1] - Ex[i, j]
            phz_y[i, j] = bh[1, j] * phz_y[i, j] + chh[1, j] * d
            Hz[i, j] += ch * (phz_y[i, j] + d * (1.0 / kh[1, j] - 1.0))


def _e3d(Ex, Ey, Ez, Hx, Hy, Hz, cex, cey, cez,
         pexy, pexz, peyz, peyx, pezx, pezy, be, ce, ke, slx, sly, slz):
    nx = Ex.shape[0] - 1
    ny = Ex.shape[1] - 1
    nz = Ex.shape[2] - 1
    for i in prange(nx):
        for j in range(1, ny):
            for k in range(1, nz):
                Ex[i, j, k] += cex[i, j, k] * ((Hz[i, j, k] - Hz[i, j - 1, k])
                                               - (Hy[i, j, k] - Hy[i, j, k - 1]))
    for i in prange(1, nx):
        for j in range(ny):
            for k in range(1, nz):
                Ey[i, j, k] += cey[i, j, k] * ((Hx[i, j, k] - Hx[i, j, k - 1])
                                               - (Hz[i, j, k] - Hz[i - 1, j, k]))
    for i in prange(1, nx):
        for j in range(1, ny):
            for k in range(nz):
                Ez[i, j, k] += cez[i, j, k] * ((Hy[i, j, k] - Hy[i - 1, j, k])
                                               - (Hx[i, j, k] - Hx[i, j - 1, k]))
    # x slabs: Ey (-dHz/dx), Ez (+dHy/dx)
    for ii in range(slx.shape[0]):
        i = slx[ii]
        if i < 1 or i >= nx:
            continue
        b = be[0, i]
        c = ce[0, i]
        s = 1.0 / ke[0, i] - 1.0
        for j in range(ny):
            for k in range(1, nz):
                d = Hz[i, j, k] - Hz[i - 1, j, k]
                peyx[i, j, k] = b * peyx[i, j, k] + c * d
                Ey[i, j, k] -= cey[i, j, k] * (peyx[i, j, k] + d * s)
        for j in range(1, ny):
            for k in range(nz):
                d = Hy[i, j, k] - Hy[i - 1, j, k]
                pezx[i, j, k] = b * pezx[i, j, k] + c * d
                Ez[i, j, k] += cez[i, j, k] * (pezx[i, j, k] + d * s)
    # y slabs: Ex (+dHz/dy), Ez (-dHx/dy)
    for jj in range(sly.shape[0]):
        j = sly[jj]
        if j < 1 or j >= ny:
            continue
        b = be[1, j]
        c = ce[1, j]
        s = 1.0 / ke[1, j] - 1.0
        for i in range(nx):
            for k in range(1, nz):
                d = Hz[i, j, k] - Hz[i, j - 1, k]
                pexy[i, j, k] = b * pexy[i, j, k] + c * d
                Ex[i, j, k] += cex[i, j, k] * (pexy[i, j, k] + d * s)
        for i in range(1, nx):
            for k in range(nz):
                d = Hx[i, j, k] - Hx[i, j - 1, k]
                pezy[i, j, k] = b * pezy[i, j, k] + c * d
                Ez[i, j, k] -= cez[i, j, k] * (pezy[i, j, k] + d * s)
    # z slabs: Ex (-dHy/dz), Ey (+dHx/dz)
    for i in range(nx + 1):
        for j in range(ny + 1):
            for kk in range(slz.shape[0]):
                k = slz[kk]
                if k < 1 or k >= nz:
                    continue
                s = 1.0 / ke[2, k] - 1.0
                if i < nx and 0 < j < ny:
                    d = Hy[i, j, k] - Hy[i, j, k - 1]
                    pexz[i, j, k] = be[2, k] * pexz[i, j, k] + ce[2, k] * d
                    Ex[i, j, k] -= cex[i, j, k] * (pexz[i, j, k] + d * s)
                if 0 < i < nx and j < ny:
                    d = Hx[i, j, k] - Hx[i, j, k - 1]
                    peyz[i, j, k] = be[2, k] * peyz[i, j, k] + ce[2, k] * d
                    Ey[i, j, k] += cey[i, j, k] * (peyz[i, j, k] + d * s)


def _h3d(Ex, Ey, Ez, Hx, Hy, Hz, ch,
         phxy, phxz, phyz, phyx, phzx, phzy, bh, chh, kh, slx, sly, slz):
    nx = Ex.shape[0] - 1
    ny = Ex.shape[1] - 1
    nz = Ex.shape[2] - 1
    for i in prange(1, nx):
        for j in range(ny):
            for k in range(nz):
                Hx[i, j, k] -= ch * ((Ez[i, j + 1, k] - Ez[i, j, k])
                                     - (Ey[i, j, k + 1] - Ey[i, j, k]))
    for i in prange(nx):
        for j in range(1, ny):
            for k in range(nz):
                Hy[i, j, k] -= ch * ((Ex[i, j, k + 1] - Ex[i, j, k])
                                     - (Ez[i + 1, j, k] - Ez[i, j, k]))
    for i in prange(nx):
        for j in range(ny):
            for k in range(1, nz):
                Hz[i, j, k] -= ch * ((Ey[i + 1, j, k] - Ey[i, j, k])
                                     - (Ex[i, j + 1, k] - Ex[i, j, k]))
    # x slabs: Hy (-dEz/dx), Hz (+dEy/dx)
    for ii in range(slx.shape[0]):
        i = slx[ii]
        if i >= nx:
            continue
        b = bh[0, i]
        c = chh[0, i]
        s = 1.0 / kh[0, i] - 1.0
        for j in range(1, ny):
            for k in range(nz):
                d = Ez[i + 1, j, k] - Ez[i, j, k]
                phyx[i, j, k] = b * phyx[i, j, k] + c * d
                Hy[i, j, k] += ch * (phyx[i, j, k] + d * s)
        for j in range(ny):
            for k in range(1, nz):
                d = Ey[i + 1, j, k] - Ey[i, j, k]
                phzx[i, j, k] = b * phzx[i, j, k] + c * d
                Hz[i, j, k] -= ch * (phzx[i, j, k] + d * s)
    # y slabs: Hx (+dEz/dy), Hz (-dEx/dy)
    for jj in range(sly.shape[0]):
        j = sly[jj]
        if j >= ny:
            continue
        b = bh[1, j]
        c = chh[1, j]
        s = 1.0 / kh[1, j] - 1.0
        for i in range(1, nx):
            for k in range(nz):
                d = Ez[i, j + 1, k] - Ez[i, j, k]
                phxy[i, j, k] = b * phxy[i, j, k] + c * d
                Hx[i, j, k] -= ch * (phxy[i, j, k] + d * s)
        for i in range(nx):
            for k in range(1, nz):
                d = Ex[i, j + 1, k] - Ex[i, j, k]
                phzy[i, j, k] = b * phzy[i, j, k] + c * d
                Hz[i, j, k] += ch * (phzy[i, j, k] + d * s)
    # z slabs: Hx (-dEy/dz), Hy (+dEx/dz)
    for i in range(nx + 1):
        for j in range(ny + 1):
            for kk in range(slz.shape[0]):
                k = slz[kk]
                if k >= nz:
                    continue
                s = 1.0 / kh[2, k] - 1.0
                if 0 < i < nx and j < ny:
                    d = Ey[i, j, k + 1] - Ey[i, j, k]
                    phxz[i, j, k] = bh[2, k] * phxz[i, j, k] + chh[2, k] * d
                    Hx[i, j, k] += ch * (phxz[i, j, k] + d * s)
                if i < nx and 0 < j < ny:
                    d = Ex[i, j, k + 1] - Ex[i, j, k]
                    phyz[i, j, k] = bh[2, k] * phyz[i, j, k] + chh[2, k] * d
                    Hy[i, j, k] -= ch * (phyz[i, j, k] + d * s)


_FUNCS = {"e2d": _e2d, "h2d": _h2d, "e3d": _e3d, "h3d": _h3d}
_serial: dict = {}
_parallel: dict = {}


def get(name: str, parallel: bool = False):
    """Return the compiled kernel ``name``; parallel variants compile lazily, uncached."""
    table = _parallel if parallel else _serial
    if name not in table:
        if table is _parallel:
            table[name] = numba.njit(parallel=True)(_FUNCS[name])
        else:
            table[name] = numba.njit(cache=True)(_FUNCS[name])
    return table[name]


@numba.njit(cache=True)
def apply_pairs(dst, src, tc, ti, sc, si, cf):
    """dst[tc, ti] += cf * src[sc, si] for every pair, in list order.

    ``dst`` and ``src`` are (components, flat cells) views of field blocks.
    """
    for p in range(tc.shape[0]):
        dst[tc[p], ti[p]] += cf[p] * src[sc[p], si[p]]
