"""Periodic Fourier grids and spectral operators.

Everything here works on plain numpy arrays whose trailing ``d`` axes are the
collocation grid; leading axes hold vector/matrix components.  ``SpectralField``
is a thin immutable wrapper used at module boundaries.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft

from .errors import UnsupportedOrderError

MAX_DERIVATIVE_ORDER = 18
_RANKS = {"scalar": 0, "vector": 1, "matrix": 2}


class Grid:
    """Uniform periodic grid on a ``d``-torus with ``N`` points per axis."""

    def __init__(self, shape, lengths=None):
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        if not 1 <= len(shape) <= 3:
            raise ValueError(f"dimension must be 1, 2 or 3, got {len(shape)}")
        for n in shape:
            if n < 8 or n % 2:
                raise ValueError(f"modes per axis must be even and >= 8, got {n}")
        if lengths is None:
            lengths = (2 * np.pi,) * len(shape)
        lengths = tuple(float(x) for x in np.broadcast_to(lengths, (len(shape),)))
        if any(x <= 0 for x in lengths):
            raise ValueError("periods must be positive")
        self.shape = shape
        self.lengths = lengths
        self.d = len(shape)
        self.axes = tuple(range(-self.d, 0))
        self.volume = float(np.prod(lengths))
        self.dx = tuple(L / n for L, n in zip(lengths, shape))

        kint, kphys = [], []
        for ax, (n, L) in enumerate(zip(shape, lengths)):
            if ax == self.d - 1:
                ki = np.arange(n // 2 + 1)
            else:
                ki = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
            bshape = [1] * self.d
            bshape[ax] = ki.size
            kint.append(ki.reshape(bshape))
            kphys.append((2 * np.pi / L * ki).reshape(bshape))
        self.kint = kint
        self.k = kphys
        self.spectral_shape = tuple(s.size for s in (k.ravel() for k in kint))
        self.k2 = sum(k**2 for k in kphys)
        self.nyquist = [np.abs(ki) == n // 2 for ki, n in zip(kint, shape)]
        self.dealias_mask = np.ones(self.spectral_shape, dtype=bool)
        for ki, n in zip(kint, shape):
            self.dealias_mask = self.dealias_mask & (np.abs(ki) <= n // 3)
        self.kmax_dealiased = max(
            2 * np.pi / L * (n // 3) for n, L in zip(shape, lengths))

    def __repr__(self):
        return f"Grid(shape={self.shape}, lengths={self.lengths})"

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.shape == other.shape
                and np.allclose(self.lengths, other.lengths, rtol=0, atol=0))

    def __hash__(self):
        return hash((self.shape, self.lengths))

    @cached_property
    def coords(self):
        """Meshgrid of collocation coordinates, one array per axis."""
        xs = [np.arange(n) * L / n for n, L in zip(self.shape, self.lengths)]
        return np.meshgrid(*xs, indexing="ij")

    @property
    def npoints(self):
        return int(np.prod(self.shape))

    # transforms -----------------------------------------------------------
    def fft(self, a):
        return scipy.fft.rfftn(a, axes=self.axes)

    def ifft(self, c):
        return scipy.fft.irfftn(c, s=self.shape, axes=self.axes)

    # spectral multipliers ---------------------------------------------------
    def derivative_symbol(self, axis, order):
        sym = (1j * self.k[axis]) ** order
        if order % 2:
            sym = np.where(self.nyquist[axis], 0.0, sym)
        return sym

    def diff_hat(self, ah, axis, order=1):
        return ah * self.derivative_symbol(axis, order)

    def diff(self, a, axis, order=1):
        return self.ifft(self.diff_hat(self.fft(a), axis, order))

    def grad(self, a):
        ah = self.fft(a)
        return np.stack([self.ifft(self.diff_hat(ah, ax)) for ax in range(self.d)])

    def div(self, v):
        vh = self.fft(v)
        out = sum(self.diff_hat(vh[ax], ax) for ax in range(self.d))
        return self.ifft(out)

    def laplacian_power(self, a, power=1):
        """(Delta)^power applied as the multiplier (-|k|^2)^power."""
        return self.ifft(self.fft(a) * (-self.k2) ** power)

    def hessian(self, a):
        ah = self.fft(a)
        out = np.empty((self.d, self.d) + a.shape)
        for i in range(self.d):
            for j in range(i, self.d):
                if i == j:
                    h = self.ifft(self.diff_hat(ah, i, 2))
                else:
                    h = self.ifft(self.diff_hat(self.diff_hat(ah, i), j))
                out[i, j] = h
                out[j, i] = h
        return out

    def jacobian(self, v):
        """``J[i, j] = d v_i / d x_j`` for a vector field ``v`` of shape (d, *N)."""
        vh = self.fft(v)
        return np.stack([np.stack([self.ifft(self.diff_hat(vh[i], j))
                                   for j in range(self.d)]) for i in range(self.d)])

    def div_tensor(self, T):
        """Row divergence ``(div T)_i = sum_j d_j T_ij``."""
        Th = self.fft(T)
        return np.stack([self.ifft(sum(self.diff_hat(Th[i, j], j) for j in range(self.d)))
                         for i in range(self.d)])

    def dealias(self, a):
        return self.ifft(self.fft(a) * self.dealias_mask)

    def integrate(self, a):
        return self.volume * np.mean(a, axis=self.axes)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real periodic field with a lazily computed Fourier-coefficient view."""

    grid: Grid
    values: np.ndarray
    rank: str = "scalar"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rank not in _RANKS:
            raise ValueError(f"unknown rank {self.rank!r}")
        vals = np.array(self.values, dtype=float, copy=True)
        expected = (self.grid.d,) * _RANKS[self.rank] + self.grid.shape
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} != expected {expected}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @cached_property
    def coeffs(self):
        c = self.grid.fft(self.values)
        c.flags.writeable = False
        return c

    @classmethod
    def from_coeffs(cls, grid, coeffs, rank="scalar", meta=None):
        return cls(grid, grid.ifft(coeffs), rank, dict(meta or {}))

    @classmethod
    def from_function(cls, grid, func, rank="scalar"):
        vals = np.asarray(func(*grid.coords), dtype=float)
        if rank == "scalar":
            vals = np.broadcast_to(vals, grid.shape)
        return cls(grid, vals, rank)

    def with_values(self, values, rank=None, meta=None):
        return SpectralField(self.grid, values, rank or self.rank, dict(meta or {}))

    def roundtrip_error(self):
        back = self.grid.ifft(self.coeffs)
        scale = max(np.max(np.abs(self.values)), np.finfo(float).tiny)
        return float(np.max(np.abs(back - self.values)) / scale)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _vals(x):
    return x.values if isinstance(x, SpectralField) else x


def derivative(f, axis, order=1):
    """Spectral derivative of ``f`` along ``axis``.

    Orders above 18 are refused.  When the highest resolved wavenumber raised
    to ``order`` exceeds 1/machine-epsilon, low modes can no longer be
    represented next to high ones and ``meta['unresolved']`` is set.
    """
    if order < 1 or int(order) != order:
        raise UnsupportedOrderError(f"derivative order must be a positive integer, got {order}")
    if order > MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(
            f"derivative order {order} exceeds supported maximum {MAX_DERIVATIVE_ORDER}")
    g = f.grid
    coeffs = g.diff_hat(f.coeffs, axis, int(order))
    kmax = 2 * np.pi / g.lengths[axis] * (g.shape[axis] // 2 - 1)
    unresolved = order * np.log10(max(kmax, 1.0)) > 16
    return SpectralField.from_coeffs(g, coeffs, f.rank, {"unresolved": bool(unresolved),
                                                         "order": int(order)})


def inverse_laplacian_zero_mean(f, compat_tol=1e-10):
    """Solve ``-Delta V = f`` for zero-mean ``V``.

    ``compat_tol`` bounds ``|integral of f|``; a larger mean raises
    ``CompatibilityError`` carrying the measured value.
    """
    from .errors import CompatibilityError

    g = f.grid
    mass = float(g.integrate(f.values))
    if abs(mass) > compat_tol:
        raise CompatibilityError(mass, compat_tol)
    return SpectralField.from_coeffs(g, _inv_lap_hat(g, f.coeffs), f.rank)


def _inv_lap_hat(grid, fh):
    k2 = grid.k2
    out = np.zeros_like(fh)
    nz = k2 > 0
    out[..., nz] = fh[..., nz] / k2[nz]
    return out


def dealias(f):
    """Two-thirds rule: zero every coefficient with a wavenumber index above N//3."""
    return SpectralField.from_coeffs(f.grid, f.coeffs * f.grid.dealias_mask, f.rank)


def integrate(f):
    """Domain integral, i.e. volume times the zeroth Fourier coefficient."""
    g = f.grid
    c0 = f.coeffs[(...,) + (0,) * g.d].real / g.npoints
    return g.volume * c0 if np.ndim(c0) else float(g.volume * c0)


def hs_norm(grid, a, s):
    """Sobolev ``H^s`` norm with weight ``(1+|k|^2)^s``; ``||1||_{H^s} = sqrt(volume)``."""
    ah = grid.fft(a)
    w = np.full(ah.shape[-grid.d:], 2.0)
    w[..., 0] = 1.0
    if grid.shape[-1] % 2 == 0:
        w[..., -1] = 1.0
    power = np.abs(ah) ** 2 * w * (1 + grid.k2) ** s
    total = power.sum(axis=grid.axes)
    total = np.sum(total) if np.ndim(total) else total
    return float(np.sqrt(total * grid.volume) / grid.npoints)


def lp_norm(grid, a, p):
    a = np.abs(a)
    if a.ndim > grid.d:
        a = np.sqrt(np.sum(a.reshape((-1,) + grid.shape) ** 2, axis=0))
    if np.isinf(p):
        return float(np.max(a))
    return float(grid.integrate(a**p) ** (1.0 / p))
