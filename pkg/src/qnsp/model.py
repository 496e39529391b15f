"""Regularized quantum Navier-Stokes-Poisson model: state, parameters, force terms.

Momentum tendency assembled here (``d m / dt`` with ``m = rho u``)::

    - div(m (x) u) + div(rho D u) - grad rho^gamma + eta grad rho^-10 - rho grad V
    - mu Delta^2 u - eps (grad rho . grad) u + div(rho Hess log rho)
    - rho u - r0 u - r1 rho |u|^2 u + delta rho grad Delta^9 rho

and the density tendency is ``-div m + eps Delta rho``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BlowUpError, CompatibilityError, ConfigError, FloorViolationError
from .spectral import SpectralField, _inv_lap_hat

BOHM_FORMS = ("divergence_logrho", "gradient_ratio", "sqrt_split")
COUPLINGS = ("grad_rho_dot_grad", "transpose")
TERM_NAMES = ("convection", "viscosity", "pressure", "cold_pressure", "electrostatic",
              "hyperviscosity", "eps_coupling", "bohm", "drag", "r0_friction",
              "r1_friction", "capillarity", "forcing")


@dataclass(frozen=True)
class ModelParams:
    gamma: float = 2.0
    eps: float = 0.0
    mu: float = 0.0
    delta: float = 0.0
    eta: float = 0.0
    r0: float = 0.0
    r1: float = 0.0
    rho_floor: float = 1e-8
    vacuum_threshold: float = 1e-6
    compat_rtol: float = 1e-10
    bohm_form: str = "divergence_logrho"
    coupling: str = "grad_rho_dot_grad"

    def __post_init__(self):
        if not self.gamma > 1:
            raise ConfigError("adiabatic exponent must exceed 1", "gamma")
        for name in ("eps", "mu", "delta", "eta", "r0", "r1"):
            if getattr(self, name) < 0:
                raise ConfigError("regularization strengths must be nonnegative", name)
        if not self.rho_floor > 0:
            raise ConfigError("density floor must be positive", "rho_floor")
        if self.bohm_form not in BOHM_FORMS:
            raise ConfigError(f"unknown Bohm form {self.bohm_form!r}", "bohm_form")
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"unknown coupling {self.coupling!r}", "coupling")

    @property
    def tied_friction(self):
        """True when the friction strengths equal eps (high-friction approximation)."""
        return self.r0 == self.r1 == self.eps

    def with_friction_eps(self, eps):
        """Set ``eps = r0 = r1``, the joint friction limit."""
        return replace(self, eps=eps, r0=eps, r1=eps)

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class State:
    t: float
    rho: SpectralField
    m: SpectralField
    V: SpectralField

    @property
    def grid(self):
        return self.rho.grid

    @classmethod
    def from_arrays(cls, grid, t, rho, m, V):
        return cls(float(t), SpectralField(grid, rho), SpectralField(grid, m, "vector"),
                   SpectralField(grid, V))

    def validate(self, params=None, tol=1e-12):
        """Raise ``ValueError`` when a state invariant fails."""
        g = self.grid
        rho = self.rho.values
        if not np.all(np.isfinite(rho)) or not np.all(np.isfinite(self.m.values)):
            raise ValueError("non-finite state values")
        if rho.min() < 0:
            raise ValueError(f"negative density {rho.min():.3e}")
        if params is not None and (params.eta > 0 or params.delta > 0):
            if rho.min() < params.rho_floor:
                raise FloorViolationError(rho.min(), params.rho_floor)
        if abs(g.integrate(self.V.values)) > tol * max(1.0, g.volume):
            raise ValueError("potential does not have zero mean")
        thr = params.vacuum_threshold if params is not None else 0.0
        vac = rho <= thr
        if np.any(vac) and np.any(self.m.values[:, vac] != 0):
            raise ValueError("momentum must vanish on vacuum points")
        return True


@dataclass(frozen=True)
class DopingProfile:
    g: SpectralField
    mass: float

    @classmethod
    def preset(cls, grid, mass, kind="uniform", amplitude=0.0, mode=1, width=0.5):
        x = grid.coords
        if kind == "uniform":
            shape = np.ones(grid.shape)
        elif kind == "cosine":
            k = 2 * np.pi / grid.lengths[0] * mode
            shape = 1 + amplitude * np.cos(k * x[0])
        elif kind == "gaussian":
            r2 = sum((xi - L / 2) ** 2 for xi, L in zip(x, grid.lengths))
            shape = 1 + amplitude * np.exp(-r2 / (2 * width**2))
        else:
            raise ConfigError(f"unknown doping preset {kind!r}", "doping.kind")
        g = SpectralField(grid, shape)
        return cls.shifted(g, mass)[0]

    @classmethod
    def shifted(cls, g, mass):
        """Add a constant to ``g`` so its integral equals ``mass``; returns (profile, shift)."""
        grid = g.grid
        shift = (mass - grid.integrate(g.values)) / grid.volume
        return cls(SpectralField(grid, g.values + shift), float(mass)), float(shift)


def compat_tol(params, mass):
    return params.compat_rtol * max(abs(mass), 1.0)


def solve_poisson(rho, doping, tol=None):
    """Zero-mean ``V`` with ``-Delta V = rho - g``."""
    grid = rho.grid
    f = rho.values - doping.g.values
    defect = grid.integrate(f)
    if tol is None:
        tol = 1e-10 * max(abs(doping.mass), 1.0)
    if abs(defect) > tol:
        raise CompatibilityError(defect, tol)
    Vh = _inv_lap_hat(grid, grid.fft(f))
    return SpectralField.from_coeffs(grid, Vh)


def velocity_array(grid, rho, m, rho_floor=1e-8, vacuum_threshold=1e-6):
    u = m / np.maximum(rho, rho_floor)
    if vacuum_threshold > 0:
        u = np.where(rho > vacuum_threshold, u, 0.0)
    return u


def velocity_from_momentum(rho, m, rho_floor=1e-8, vacuum_threshold=1e-6):
    """``u = m / max(rho, floor)``, zeroed where ``rho <= vacuum_threshold``."""
    u = velocity_array(rho.grid, rho.values, m.values, rho_floor, vacuum_threshold)
    return SpectralField(rho.grid, u, "vector")


# -- Bohm force ---------------------------------------------------------------

def _require_floor(rho, floor):
    if rho.min() < floor:
        raise FloorViolationError(rho.min(), floor)


def bohm_array(grid, rho, form="divergence_logrho", rho_floor=1e-8, dealias=True):
    dl = grid.dealias if dealias else (lambda a: a)
    if form == "divergence_logrho":
        _require_floor(rho, rho_floor)
        H = grid.hessian(np.log(rho))
        return grid.div_tensor(dl(rho * H))
    if form == "gradient_ratio":
        _require_floor(rho, rho_floor)
        s = np.sqrt(rho)
        q = dl(grid.laplacian_power(s, 1) / s)
        return dl(2 * rho * grid.grad(q))
    if form == "sqrt_split":
        s = np.sqrt(np.maximum(rho, 0.0))
        gs = grid.grad(s)
        T = 2 * s * grid.hessian(s) - 2 * np.einsum("i...,j...->ij...", gs, gs)
        return grid.div_tensor(dl(T))
    raise ValueError(f"unknown Bohm form {form!r}")


def bohm_force(rho, form="divergence_logrho", rho_floor=1e-8):
    """Quantum force in one of the three equivalent forms; see ``BOHM_FORMS``."""
    return SpectralField(rho.grid, bohm_array(rho.grid, rho.values, form, rho_floor), "vector")


# -- momentum terms -----------------------------------------------------------

def _sym(J):
    return 0.5 * (J + np.swapaxes(J, 0, 1))


def momentum_terms(grid, rho, m, V, params, forcing=None, u=None, skip_zero=True):
    """Every momentum tendency term, each dealiased, keyed by ``TERM_NAMES``."""
    p = params
    dl = grid.dealias
    d = grid.d
    if u is None:
        u = dl(velocity_array(grid, rho, m, p.rho_floor, p.vacuum_threshold))
    zero = np.zeros_like(m)
    out = {}

    out["convection"] = -grid.div_tensor(dl(np.einsum("i...,j...->ij...", m, u)))
    J = grid.jacobian(u)
    out["viscosity"] = grid.div_tensor(dl(rho * _sym(J)))
    out["pressure"] = -grid.grad(dl(rho ** p.gamma))
    if p.eta > 0 or not skip_zero:
        out["cold_pressure"] = p.eta * grid.grad(dl(np.maximum(rho, p.rho_floor) ** -10.0))
    else:
        out["cold_pressure"] = zero
    out["electrostatic"] = -dl(rho * grid.grad(V))
    if p.mu > 0 or not skip_zero:
        uh = grid.fft(u)
        out["hyperviscosity"] = -p.mu * grid.ifft(uh * grid.k2**2)
    else:
        out["hyperviscosity"] = zero
    if p.eps > 0 or not skip_zero:
        grho = grid.grad(rho)
        if p.coupling == "grad_rho_dot_grad":
            c = np.einsum("ij...,j...->i...", J, grho)
        else:
            c = np.einsum("ji...,j...->i...", J, grho)
        out["eps_coupling"] = -p.eps * dl(c)
    else:
        out["eps_coupling"] = zero
    out["bohm"] = bohm_array(grid, rho, p.bohm_form, p.rho_floor)
    out["drag"] = -m.copy()
    out["r0_friction"] = -p.r0 * u if p.r0 > 0 else zero
    if p.r1 > 0:
        out["r1_friction"] = -p.r1 * dl(rho * np.sum(u * u, axis=0) * u)
    else:
        out["r1_friction"] = zero
    if p.delta > 0:
        rh = grid.fft(rho)
        g19 = np.stack([grid.ifft(grid.diff_hat(rh * (-grid.k2) ** 9, ax))
                        for ax in range(d)])
        out["capillarity"] = p.delta * dl(rho * g19)
    else:
        out["capillarity"] = zero
    out["forcing"] = zero if forcing is None else np.asarray(forcing, dtype=float)
    return out


@dataclass
class MomentumRHS:
    total: SpectralField
    terms: dict
    ledger: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)


def _check_finite(terms):
    for name, arr in terms.items():
        if not np.all(np.isfinite(arr)):
            ledger = {k: float(np.sqrt(np.mean(v**2))) if np.all(np.isfinite(v)) else float("nan")
                      for k, v in terms.items()}
            raise BlowUpError(f"non-finite values in momentum term {name!r}", ledger, name)


def assemble_momentum_rhs(state, params, forcing=None):
    """Full momentum tendency with a per-term ledger of L2 norms."""
    g = state.grid
    rho = state.rho.values
    if params.eta > 0 and rho.min() < params.rho_floor:
        raise FloorViolationError(rho.min(), params.rho_floor)
    terms = momentum_terms(g, rho, state.m.values, state.V.values, params, forcing)
    _check_finite(terms)
    total = sum(terms.values())
    ledger = {k: float(np.sqrt(g.integrate(np.sum(v**2, axis=0)))) for k, v in terms.items()}
    notes = {"eps_coupling_contraction": params.coupling}
    return MomentumRHS(SpectralField(g, total, "vector"), terms, ledger, notes)


def continuity_array(grid, rho, m, eps):
    rh = grid.fft(rho)
    mh = grid.fft(m)
    out = -sum(grid.diff_hat(mh[ax], ax) for ax in range(grid.d)) - eps * grid.k2 * rh
    return grid.ifft(out * grid.dealias_mask)


def continuity_rhs(state, params):
    """``-div m + eps Delta rho``, dealiased."""
    return SpectralField(state.grid, continuity_array(state.grid, state.rho.values,
                                                      state.m.values, params.eps))


# -- frozen-coefficient linear part ------------------------------------------------

@dataclass
class LinearSymbols:
    """Per-mode 2x2 system for (rho_hat, m_parallel) and a scalar decay for m_perp.

    ``rho' = a rho + b m_par``, ``m_par' = c rho + dd m_par``, ``m_perp' = -b_perp m_perp``.
    """
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    dd: np.ndarray
    b_perp: np.ndarray
    khat: list
    rho_bar: float


def linear_symbols(grid, params, rho_bar):
    """Linearization about the uniform state ``(rho_bar, 0)``."""
    p = params
    k2 = grid.k2
    kap = np.sqrt(k2)
    safe_k2 = np.where(k2 > 0, k2, 1.0)
    c2 = p.gamma * rho_bar ** (p.gamma - 1) + 10 * p.eta * rho_bar ** -11
    A = c2 + np.where(k2 > 0, rho_bar / safe_k2, 0.0) + k2 + p.delta * rho_bar * k2**9
    base = 1.0 + p.r0 / rho_bar + p.mu * k2**2 / rho_bar
    a = -p.eps * k2 + 0j
    b = -1j * kap
    c = -1j * kap * A
    dd = -(base + k2) + 0j
    b_perp = base + 0.5 * k2
    khat = [np.where(k2 > 0, k / np.where(kap > 0, kap, 1.0), 0.0) for k in grid.k]
    return LinearSymbols(a, b, c, dd, b_perp, khat, float(rho_bar))
