"""Curve fits used to pull rates and line shapes out of simulated observables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .oracles import master_p1p2

MIN_SAMPLES = 10


@dataclass
class FitResult:
    params: dict
    residual_norm: float
    converged: bool
    covariance: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]


def _covariance(res) -> np.ndarray | None:
    J = res.jac
    dof = max(res.fun.size - J.shape[1], 1)
    try:
        return np.linalg.inv(J.T @ J) * (2 * res.cost / dof)
    except np.linalg.LinAlgError:
        return None


def _window(t, y, window, t_min):
    ymax = float(np.max(y))
    lo, hi = window
    mask = t >= (t_min if t_min is not None else -np.inf)
    below = np.flatnonzero(mask & (y <= hi * ymax))
    if below.size == 0:
        # never decays past the upper cut: nothing to skip
        sel = mask & (y >= lo * ymax)
    else:
        sel = mask & (np.arange(t.size) >= below[0]) & (y <= hi * ymax) & (y >= lo * ymax)
    return sel


def fit_exponential(t, y, window=(1e-4, 0.9), t_min: float | None = None) -> FitResult:
    """Rate G of y ~ A exp(-G t) by weighted log-linear least squares.

    Samples enter from the first time y drops below ``window[1] * max(y)``
    and while y stays above ``window[0] * max(y)``. Weights equal y, which
    turns relative log errors back into absolute ones.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and y must be 1D arrays of equal length")
    sel = _window(t, y, window, t_min)
    if np.count_nonzero(sel) < MIN_SAMPLES:
        raise ValueError(f"fewer than {MIN_SAMPLES} samples in the fit window")
    ts, ys = t[sel], y[sel]
    if np.any(ys <= 0):
        raise ValueError("y must be positive in the fit window")
    w = ys / ys.max()
    A = np.stack([np.ones_like(ts), ts], 1) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, np.log(ys) * w, rcond=None)
    resid = (A @ coef - np.log(ys) * w)
    gamma = -coef[1]
    return FitResult({"gamma": float(gamma), "amplitude": float(np.exp(coef[0]))},
                     float(np.linalg.norm(resid)), True,
                     info={"n_samples": int(ts.size), "t_range": (float(ts[0]), float(ts[-1]))})


def coupling_from_amplitudes(t, b1, b2, t_min: float = 0.0) -> complex:
    """Off-diagonal generator element M12 = -g12 - i G12/2 from the amplitude ratio.

    With only emitter 1 excited at t=0, the coupled-dipole model gives
    b2/b1 = -i tan(M12 t); inverting it sample by sample and taking the
    median over |b2/b1| < 1 (before the tan pole) gives M12.
    """
    t = np.asarray(t, float)
    r = np.asarray(b2, complex) / np.asarray(b1, complex)
    sel = (t > t_min) & (np.abs(r) < 1.0) & (np.abs(r) > 0)
    if np.count_nonzero(sel) < 3:
        raise ValueError("not enough early samples to read the coupling phase")
    m = np.arctan(1j * r[sel]) / t[sel]
    return complex(np.median(m.real), np.median(m.imag))


def _first_max(t, y):
    for k in range(1, y.size - 1):
        if y[k] >= y[k - 1] and y[k] > y[k + 1]:
            return t[k]
    return None


def fit_master_equation(t, P1, P2, b1=None, b2=None, t_min: float = 0.0,
                        max_nfev: int = 2000) -> FitResult:
    """Fit (G11, G12, g12) of the two-emitter populations.

    The populations are even in both G12 and g12. If complex amplitudes
    ``b1``/``b2`` are given, both signs come from their relative phase
    (see :func:`coupling_from_amplitudes`); otherwise the returned values
    are the non-negative magnitudes.
    """
    t = np.asarray(t, float)
    P1 = np.asarray(P1, float)
    P2 = np.asarray(P2, float)
    if not (t.shape == P1.shape == P2.shape):
        raise ValueError("t, P1 and P2 must have the same shape")
    if t.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    if abs(P1[0] - 1) > 0.05 or P2[0] > 0.05:
        raise ValueError("expected P1(0) ~ 1 and P2(0) ~ 0")
    S = P1 + P2
    try:
        g11 = fit_exponential(t, S, window=(1e-3, 0.95)).params["gamma"]
    except ValueError:
        g11 = 1.0 / max(t[-1], 1e-300)
    g11 = max(g11, 1e-6 / max(t[-1], 1e-300))
    tm = _first_max(t, P2)
    g_guess = np.pi / (2 * tm) if tm else 0.1 * g11

    def resid(p):
        with np.errstate(over="ignore", invalid="ignore"):
            a, b = master_p1p2(t, *p)
        out = np.concatenate([a - P1, b - P2])
        return np.where(np.isfinite(out), out, 1e10)

    best = None
    for f12 in (-0.5, 0.0, 0.5):
        for gs in (g_guess, 0.5 * g_guess, 2 * g_guess):
            x0 = [g11, f12 * g11, gs]
            r = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                              max_nfev=max_nfev)
            if best is None or r.cost < best.cost:
                best = r
    G11, G12, g = best.x
    G12, g = abs(G12), abs(g)
    info = {"nfev": int(best.nfev), "signs": "magnitude"}
    if b1 is not None and b2 is not None:
        m12 = coupling_from_amplitudes(t, b1, b2, t_min)
        G12 = G12 if -2 * m12.imag >= 0 else -G12
        g = g if -m12.real >= 0 else -g
        info.update(signs="amplitude phase", m12=m12)
    return FitResult({"gamma11": float(G11), "gamma12": float(G12), "g12": float(g)},
                     float(np.sqrt(2 * best.cost)), bool(best.success), _covariance(best),
                     info=info)


def lorentzian(omega, center, fwhm, peak):
    h = 0.5 * fwhm
    return peak * h * h / ((np.asarray(omega) - center) ** 2 + h * h)


def fit_lorentzian(omega, sigma) -> FitResult:
    """Center, FWHM and peak of a single Lorentzian line."""
    w = np.asarray(omega, float)
    s = np.asarray(sigma, float)
    if w.shape != s.shape or w.size < 4:
        raise ValueError("need matching arrays with at least 4 samples")
    k = int(np.argmax(s))
    if s[k] - np.min(s) <= 1e-12 * abs(s[k]) or s[k] <= 0:
        raise ValueError("spectrum has no peak")
    if k == 0 or k == s.size - 1:
        raise ValueError("peak lies at the band edge")
    half = np.flatnonzero(s >= 0.5 * s[k])
    width0 = max(w[half[-1]] - w[half[0]], abs(w[1] - w[0]))
    scale = np.array([width0, width0, s[k]])

    def model(p):
        return lorentzian(w, p[0], abs(p[1]), p[2])

    r = least_squares(lambda p: (model(p) - s) / s[k], [w[k], width0, s[k]],
                      x_scale=scale, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                      max_nfev=5000)
    c, f, a = r.x
    return FitResult({"center": float(c), "fwhm": float(abs(f)), "peak": float(a)},
                     float(np.linalg.norm(r.fun) * s[k]), bool(r.success), _covariance(r))


def fit_powerlaw(N, y) -> FitResult:
    """Exponent p of y ~ c N^p by log-log least squares."""
    N = np.asarray(N, float)
    y = np.asarray(y, float)
    if N.shape != y.shape or N.size < 2:
        raise ValueError("need at least two points")
    if np.any(y <= 0) or np.any(N <= 0):
        raise ValueError("power-law fit needs positive values")
    A = np.stack([np.ones_like(N), np.log(N)], 1)
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = A @ coef - np.log(y)
    return FitResult({"exponent": float(coef[1]), "prefactor": float(np.exp(coef[0]))},
                     float(np.linalg.norm(resid)), True)
