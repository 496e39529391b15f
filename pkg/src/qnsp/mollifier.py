"""Even time-space mollifiers and discrete convolution of sampled fields."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate as _quad
from scipy import special

from .errors import ResolutionError, WindowError


def bump(s):
    """Unnormalized standard bump ``exp(-1/(1-s^2))`` on ``|s| < 1``, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _ball_mass(ndim):
    # integral of bump(|z|) over the unit ball of R^ndim
    sphere = 2 * np.pi ** (ndim / 2) / special.gamma(ndim / 2)
    radial, _ = _quad.quad(lambda s: s ** (ndim - 1) * np.exp(-1 / (1 - s * s)),
                           0, 1, epsabs=1e-15, epsrel=1e-14, limit=200)
    return sphere * radial


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(160)


@dataclass(frozen=True)
class Mollifier:
    """Radial bump ``Psi_r(t, x) = r^{-(1+d)} Psi(t/r, x/r)`` in time and ``d`` space dims."""

    radius: float
    d: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("mollifier radius must be positive")

    @property
    def norm_const(self):
        return 1.0 / _ball_mass(self.d + 1)

    def profile(self, t, *xs):
        """Normalized unit-scale profile evaluated at time ``t`` and coordinates ``xs``."""
        rad2 = np.asarray(t, dtype=float) ** 2 + sum(np.asarray(x, dtype=float) ** 2 for x in xs)
        return self.norm_const * bump(np.sqrt(rad2))

    def slice_symbol(self, tau, kmag):
        """Spatial Fourier transform of ``Psi_r(tau, .)`` at wavenumbers ``kmag``.

        The radial integral over the slice ``|x| < sqrt(r^2 - tau^2)`` uses
        Gauss-Legendre quadrature.
        """
        r = self.radius
        s = abs(tau) / r
        kmag = np.asarray(kmag, dtype=float)
        if s >= 1:
            return np.zeros_like(kmag)
        a = np.sqrt(1 - s * s)
        xi = 0.5 * a * (_GL_NODES + 1)
        w = 0.5 * a * _GL_WEIGHTS
        prof = self.norm_const * bump(np.sqrt(s * s + xi**2))
        arg = np.multiply.outer(kmag * r, xi)
        if self.d == 1:
            kern = 2 * np.cos(arg)
        elif self.d == 2:
            kern = 2 * np.pi * special.j0(arg) * xi
        else:
            kern = 4 * np.pi * np.sinc(arg / np.pi) * xi**2
        return (kern * prof * w).sum(axis=-1) / r

    def time_offsets(self, dt):
        """Integer offsets ``j`` with ``|j dt| < r``."""
        r = self.radius
        jmax = int(np.ceil(r / dt))
        js = np.arange(-jmax, jmax + 1)
        js = js[np.abs(js * dt) < r]
        return js

    def symbol(self, kmag, dt):
        """Discrete time-space symbol at spatial wavenumber ``kmag`` for time step ``dt``.

        Normalized so the zero mode is exactly one.
        """
        js = self.time_offsets(dt)
        tot = sum(dt * self.slice_symbol(j * dt, kmag) for j in js)
        mass = sum(dt * self.slice_symbol(j * dt, 0.0) for j in js)
        return tot / mass


def mollify(times, values, grid, moll):
    """Discrete time-space convolution of a uniformly sampled field sequence.

    ``values`` has shape ``(n_times, *components, *grid.shape)``.  Only times
    whose full stencil ``[t - r, t + r]`` lies inside the sample window are
    returned, as ``(window_times, mollified)``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 2:
        raise ResolutionError("need at least two time samples")
    dts = np.diff(times)
    dt = float(dts.mean())
    if np.max(np.abs(dts - dt)) > 1e-9 * max(dt, 1.0):
        raise ResolutionError("time samples must be uniformly spaced")
    r = moll.radius
    if dt > r / 4 * (1 + 1e-12):
        raise ResolutionError(f"time spacing {dt:.3g} exceeds r/4 = {r / 4:.3g}")
    if r >= min(grid.lengths) / 4:
        raise ResolutionError(f"mollifier radius {r} must be below L/4")

    js = moll.time_offsets(dt)
    jmax = int(np.max(np.abs(js)))
    n = times.size
    idx = np.arange(jmax, n - jmax)
    if idx.size == 0:
        raise WindowError("sample window shorter than the mollifier stencil")

    kmag = np.sqrt(grid.k2)
    slices = {int(j): dt * moll.slice_symbol(j * dt, kmag) for j in js}
    mass = sum(dt * float(moll.slice_symbol(j * dt, 0.0)) for j in js)

    fh = grid.fft(values)
    out = np.zeros((idx.size,) + fh.shape[1:], dtype=complex)
    for j, sym in slices.items():
        out += fh[idx - j] * sym
    out /= mass
    return times[idx], grid.ifft(out)
