"""Closed-form reference values for emitter decay and dipole-dipole coupling.

Everything here is in natural units (c0 = eps0 = mu0 = hbar = 1). The dyadic
Green's function follows the convention

    curl curl G - k^2 G = I delta(r - r'),

so that a dipole p oscillating at omega radiates E = omega^2 G p.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import hankel1

ENVIRONMENTS = ("vacuum2d", "vacuum3d", "pec_halfspace", "pec_waveguide")


@dataclass(frozen=True)
class GreensTensor:
    """Value of G(r_a, r_b; omega) for one environment."""

    value: np.ndarray  # complex (D, D)
    env: str
    omega: float
    coincident: bool = False

    @property
    def dim(self) -> int:
        return self.value.shape[0]

    @property
    def imag(self) -> np.ndarray:
        return self.value.imag

    @property
    def real(self) -> np.ndarray:
        if self.coincident:
            raise ValueError("real part of G diverges at coincident points")
        return self.value.real


@dataclass(frozen=True)
class CollectiveRates:
    gamma: float  # collective decay rate Gamma_ij
    g: float  # coherent coupling g_ij


def _free_3d(r: np.ndarray, k: complex) -> np.ndarray:
    rr = float(np.linalg.norm(r))
    if rr == 0.0:
        return 1j * k / (6 * np.pi) * np.eye(3)
    u = r / rr
    kr = k * rr
    pref = np.exp(1j * kr) / (4 * np.pi * rr)
    a = 1 + 1j / kr - 1 / kr**2
    b = -1 - 3j / kr + 3 / kr**2
    return pref * (a * np.eye(3) + b * np.outer(u, u))


def _free_2d(r: np.ndarray, k: complex) -> np.ndarray:
    rr = float(np.linalg.norm(r))
    if rr == 0.0:
        return 1j / 8 * np.eye(2)
    u = r / rr
    kr = k * rr
    h0 = hankel1(0, kr)
    h1 = hankel1(1, kr)
    uu = np.outer(u, u)
    return 0.25j * (h0 * (np.eye(2) - uu) - (h1 / kr) * (np.eye(2) - 2 * uu))


def free_space(r: np.ndarray, k: complex) -> np.ndarray:
    """Vacuum dyadic Green's function for separation vector ``r`` (2D or 3D)."""
    r = np.asarray(r, dtype=float)
    if r.size == 2:
        return _free_2d(r, k)
    if r.size == 3:
        return _free_3d(r, k)
    raise ValueError(f"dimension must be 2 or 3, got {r.size}")


def _mirror(dim: int, axis: int) -> np.ndarray:
    """Image-dipole operator: tangential components flip, normal component stays."""
    m = -np.eye(dim)
    m[axis, axis] = 1.0
    return m


def _halfspace(ra, rb, k, axis: int, plane: float) -> np.ndarray:
    dim = ra.size
    if ra[axis] <= plane or rb[axis] <= plane:
        raise ValueError("positions must lie above the PEC mirror")
    rb_img = rb.copy()
    rb_img[axis] = 2 * plane - rb[axis]
    return free_space(ra - rb, k) + free_space(ra - rb_img, k) @ _mirror(dim, axis)


def waveguide_modes(ra, rb, k: complex, width: float, y0: float = 0.0,
                    tol: float = 1e-14, max_modes: int = 200000) -> np.ndarray:
    """2D parallel-plate PEC guide (walls at y0 and y0+width), by mode expansion.

    The guide axis is x. Converges exponentially for x_a != x_b; at x_a == x_b
    only the propagating-mode (imaginary) part is returned.
    """
    x = ra[0] - rb[0]
    ya, yb = ra[1] - y0, rb[1] - y0
    if not (0 < ya < width and 0 < yb < width):
        raise ValueError("positions must lie inside the waveguide")
    ax = abs(x)
    sgn = np.sign(x)
    k2 = k * k
    G = np.zeros((2, 2), dtype=complex)
    n_cut = k.real * width / np.pi
    n = 0
    while True:
        kn = n * np.pi / width
        beta = np.sqrt(k2 - kn * kn + 0j)
        if beta.imag < 0:
            beta = -beta
        if ax == 0.0 and beta.real == 0.0:
            break
        f = 1j / (2 * beta) * np.exp(1j * beta * ax)
        dfx = -0.5 * sgn * np.exp(1j * beta * ax)
        eps_n = 1.0 if n == 0 else 2.0
        cc = np.cos(kn * ya) * np.cos(kn * yb)
        ss = np.sin(kn * ya) * np.sin(kn * yb)
        term = np.zeros((2, 2), dtype=complex)
        if n > 0:
            term[0, 0] = (2 / width) * ss * (kn * kn / k2) * f
            term[1, 0] = (2 / width) * kn * np.cos(kn * ya) * np.sin(kn * yb) * dfx / k2
        term[1, 1] = (eps_n / width) * cc * (beta * beta / k2) * f
        term[0, 1] = -(eps_n / width) * kn * np.sin(kn * ya) * np.cos(kn * yb) * dfx / k2
        G += term
        mag = np.abs(term).max()
        if n > n_cut + 2 and mag <= tol * max(np.abs(G).max(), 1e-300):
            break
        n += 1
        if n > max_modes:
            raise RuntimeError("waveguide mode sum did not converge")
    return G


def waveguide_images(ra, rb, k: complex, width: float, y0: float = 0.0,
                     tol: float = 1e-10, min_images: int = 0,
                     max_images: int = 10**7) -> np.ndarray:
    """Same guide by image superposition. Needs Im k > 0 to converge."""
    ya, yb = ra[1] - y0, rb[1] - y0
    if not (0 < ya < width and 0 < yb < width):
        raise ValueError("positions must lie inside the waveguide")
    flip = np.diag([-1.0, 1.0])
    G = free_space(np.array([ra[0] - rb[0], ya - yb]), k).astype(complex)
    m = 1
    while True:
        term = np.zeros((2, 2), dtype=complex)
        for s in (1, -1):
            shift = 2 * m * width * s
            # even images: translated copies; odd images: mirrored copies
            term += free_space(np.array([ra[0] - rb[0], ya - (yb + shift)]), k)
            term += free_space(np.array([ra[0] - rb[0], ya - (-yb + shift)]), k) @ flip
        # first mirrored copy about y=0 (m=0 term of the odd family)
        if m == 1:
            term += free_space(np.array([ra[0] - rb[0], ya + yb]), k) @ flip
        G += term
        if m >= min_images and np.abs(term).max() <= tol * np.abs(G).max():
            return G
        m += 1
        if m > max_images:
            raise RuntimeError("image series did not converge (is Im k > 0?)")


def green_function(env: str, ra: Sequence[float], rb: Sequence[float], omega: float, *,
                   mirror_axis: int = 1, mirror_plane: float = 0.0,
                   width: float | None = None, wall: float = 0.0,
                   method: str = "modes") -> GreensTensor:
    """Evaluate the dyadic Green's function of ``env`` between ``ra`` and ``rb``.

    Parameters
    ----------
    env : {"vacuum2d", "vacuum3d", "pec_halfspace", "pec_waveguide"}
    ra, rb : positions (length 2 or 3)
    omega : angular frequency; k = omega / c0
    mirror_axis, mirror_plane : half-space mirror ``r[axis] = plane`` with the
        valid region above it
    width, wall : waveguide walls at ``y = wall`` and ``y = wall + width`` (2D)
    method : ``"modes"`` or ``"images"`` for the waveguide
    """
    if env not in ENVIRONMENTS:
        raise ValueError(f"unknown environment {env!r}")
    ra = np.asarray(ra, dtype=float)
    rb = np.asarray(rb, dtype=float)
    if ra.shape != rb.shape:
        raise ValueError("positions must have the same dimension")
    k = omega
    coincident = bool(np.array_equal(ra, rb))
    if env == "vacuum2d":
        if ra.size != 2:
            raise ValueError("vacuum2d needs 2D positions")
        val = free_space(ra - rb, k)
    elif env == "vacuum3d":
        if ra.size != 3:
            raise ValueError("vacuum3d needs 3D positions")
        val = free_space(ra - rb, k)
    elif env == "pec_halfspace":
        val = _halfspace(ra, rb, k, mirror_axis, mirror_plane)
    else:
        if width is None or width <= 0:
            raise ValueError("pec_waveguide needs a positive width")
        if ra.size != 2:
            raise ValueError("pec_waveguide is two-dimensional")
        if method == "modes":
            val = waveguide_modes(ra, rb, k, width, wall)
            coincident = coincident or ra[0] == rb[0]
        elif method == "images":
            val = waveguide_images(ra, rb, k, width, wall)
        else:
            raise ValueError(f"unknown method {method!r}")
    return GreensTensor(np.asarray(val, dtype=complex), env, float(omega), coincident)


def collective_rates(G: GreensTensor, d_i: Sequence[float], d_j: Sequence[float],
                     omega0: float) -> CollectiveRates:
    """Collective decay rate and coherent coupling between two dipoles."""
    di = np.asarray(d_i, dtype=float)
    dj = np.asarray(d_j, dtype=float)
    gamma = 2 * omega0**2 * float(di @ G.imag @ dj)
    g = 0.0 if G.coincident else omega0**2 * float(di @ G.real @ dj)
    return CollectiveRates(gamma, g)


def gamma_vac(omega0: float, d, dimension: int) -> float:
    """Vacuum spontaneous emission rate of a dipole ``d`` (scalar magnitude or vector)."""
    if omega0 <= 0:
        raise ValueError("omega0 must be positive")
    dmag = float(np.linalg.norm(np.atleast_1d(np.asarray(d, dtype=float))))
    if dmag <= 0:
        raise ValueError("dipole moment must be nonzero")
    if dimension == 3:
        return omega0**3 * dmag**2 / (3 * np.pi)
    if dimension == 2:
        # Im G_2D(r, r) = I/8, isotropic in-plane
        return 2 * omega0**2 * dmag**2 / 8
    raise ValueError(f"dimension must be 2 or 3, got {dimension}")


def master_p1p2(t, gamma11: float, gamma12: float, g12: float):
    """Excited populations of two identical emitters, first one excited at t=0."""
    t = np.asarray(t, dtype=float)
    fast = np.exp(-(gamma11 + gamma12) * t)
    slow = np.exp(-(gamma11 - gamma12) * t)
    osc = 0.5 * np.exp(-gamma11 * t) * np.cos(2 * g12 * t)
    return 0.25 * (fast + slow) + osc, 0.25 * (fast + slow) - osc


def coupling_matrix(positions, dipoles, omega0: float, env: str = "vacuum3d",
                    **env_kwargs) -> np.ndarray:
    """Effective non-Hermitian generator M with db/dt = -i M b (rotating frame).

    Diagonal entries carry -i Gamma_ii / 2; off-diagonals -g_ij - i Gamma_ij / 2,
    the sign that follows from db_i/dt = ... + i d_i.E with E = omega^2 G p_j.
    """
    pos = [np.asarray(p, dtype=float) for p in positions]
    n = len(pos)
    M = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            G = green_function(env, pos[a], pos[b], omega0, **env_kwargs)
            r = collective_rates(G, dipoles[a], dipoles[b], omega0)
            M[a, b] = (0.0 if a == b else -r.g) - 0.5j * r.gamma
    return M


def excitation_number(t, M: np.ndarray, b0) -> np.ndarray:
    """Sum of |b_i(t)|^2 under the Markovian coupled-dipole model."""
    w, V = np.linalg.eig(M)
    c = np.linalg.solve(V, np.asarray(b0, dtype=complex))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    b = V @ (c[:, None] * np.exp(-1j * np.outer(w, t)))
    return np.sum(np.abs(b) ** 2, axis=0)
