"""Time integration: integrating-factor Runge-Kutta on (rho, m), Galerkin mode, trajectories."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (BlowUpError, ConfigError, FloorViolationError, IndefiniteMassError,
                     PositivityGuardError)
from .model import (State, linear_symbols, momentum_terms, velocity_array,
                    _check_finite)
from .spectral import SpectralField, _inv_lap_hat

log = logging.getLogger(__name__)

SCHEMES = ("imex_integrating_factor", "if_rk4", "explicit_rk4_reference")


# -- Galerkin basis -----------------------------------------------------------

class GalerkinBasis:
    """Real trigonometric L2-orthonormal basis ordered by increasing |k|.

    Order on a 1-D torus: constant, cos x, sin x, cos 2x, sin 2x, ...  Nyquist
    modes are excluded.  If ``n_modes`` would split a cos/sin pair, the
    partner is included so the span is closed under translations.
    """

    def __init__(self, grid, n_modes=None):
        self.grid = grid
        g = grid
        reps = []
        ranges = [np.arange(-(n // 2) + 1, n // 2) for n in g.shape]
        mesh = np.meshgrid(*ranges, indexing="ij")
        ks = np.stack([m.ravel() for m in mesh], axis=1)
        for kv in ks:
            nz = np.nonzero(kv)[0]
            if nz.size == 0 or kv[nz[0]] > 0:
                reps.append(tuple(int(v) for v in kv))
        kphys = lambda kv: sum((2 * np.pi / L * ki) ** 2 for ki, L in zip(kv, g.lengths))
        reps.sort(key=lambda kv: (kphys(kv), tuple(abs(v) for v in kv), kv))
        entries = []
        for kv in reps:
            if all(v == 0 for v in kv):
                entries.append((kv, "const"))
            else:
                entries.append((kv, "cos"))
                entries.append((kv, "sin"))
        if n_modes is not None:
            n_modes = int(n_modes)
            if n_modes < 1:
                raise ConfigError("Galerkin basis needs at least one mode", "n_modes")
            if n_modes < len(entries) and entries[n_modes - 1][1] == "cos":
                n_modes += 1
            entries = entries[:n_modes]
        self.entries = entries
        self.size = len(entries)
        self._mask = None
        self._E = None

    @property
    def wavevectors(self):
        return [kv for kv, _ in self.entries]

    def evaluate(self):
        """Basis functions sampled on the grid, shape (size, npoints)."""
        if self._E is None:
            g = self.grid
            x = [c.ravel() for c in g.coords]
            E = np.empty((self.size, g.npoints))
            for i, (kv, kind) in enumerate(self.entries):
                phase = sum(2 * np.pi / L * ki * xi for ki, L, xi in zip(kv, g.lengths, x))
                if kind == "const":
                    E[i] = 1.0 / math.sqrt(g.volume)
                elif kind == "cos":
                    E[i] = math.sqrt(2.0 / g.volume) * np.cos(phase)
                else:
                    E[i] = math.sqrt(2.0 / g.volume) * np.sin(phase)
            self._E = E
        return self._E

    @property
    def weight(self):
        return self.grid.volume / self.grid.npoints

    @property
    def fourier_mask(self):
        """Boolean mask in rfft layout selecting the span of the basis."""
        if self._mask is None:
            g = self.grid
            mask = np.zeros(g.spectral_shape, dtype=bool)
            for kv in {kv for kv, _ in self.entries}:
                for sgn in (1, -1):
                    kk = [sgn * v for v in kv]
                    if kk[-1] < 0:
                        continue
                    idx = tuple(k % n for k, n in zip(kk[:-1], g.shape[:-1])) + (kk[-1],)
                    mask[idx] = True
            self._mask = mask
        return self._mask

    def project_coeffs(self, f):
        """``<f, e_i>`` for scalar arrays or stacked component arrays."""
        f = np.asarray(f, dtype=float)
        lead = f.shape[: f.ndim - self.grid.d]
        flat = f.reshape(lead + (-1,))
        return flat @ self.evaluate().T * self.weight

    def reconstruct(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = lam @ self.evaluate()
        return out.reshape(lam.shape[:-1] + self.grid.shape)


def project(f, basis):
    """Coefficient vector ``<f, e_i>`` of a field on the basis."""
    vals = f.values if isinstance(f, SpectralField) else f
    if isinstance(f, SpectralField) and f.grid != basis.grid:
        raise ValueError("field and basis live on different grids")
    return basis.project_coeffs(vals)


def mass_matrix(rho, basis):
    """``M_ij = integral rho e_i e_j``; symmetric."""
    vals = rho.values if isinstance(rho, SpectralField) else np.asarray(rho)
    if vals.min() < 0:
        raise ValueError("density must be nonnegative")
    E = basis.evaluate()
    M = (E * (vals.ravel() * basis.weight)) @ E.T
    return 0.5 * (M + M.T)


def galerkin_velocity(rho, m, basis):
    """Velocity ``u_N`` in the basis span with ``P(rho u_N) = P(m)`` (Cholesky solve)."""
    M = mass_matrix(rho, basis)
    try:
        cf = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteMassError(
            "mass matrix is not positive definite (vacuum?); use collocation mode") from exc
    q = basis.project_coeffs(m)
    lam = scipy.linalg.cho_solve(cf, q.T).T
    return basis.reconstruct(lam), lam


# -- schemes ------------------------------------------------------------------

@dataclass
class StepScheme:
    kind: str = "imex_integrating_factor"
    dt: float = None
    safety: float = 0.4

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.kind!r}", "scheme.kind")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("time step must be positive", "scheme.dt")
        if not 0 < self.safety <= 1:
            raise ConfigError("safety factor must lie in (0, 1]", "scheme.safety")


def _expm2(a, b, c, dd, tau):
    """Entries of exp(tau [[a, b], [c, dd]]) per mode, in closed form."""
    s = 0.5 * (a + dd)
    h = 0.5 * (a - dd)
    q = np.sqrt(h * h + b * c + 0j)
    z = q * tau
    big = np.abs(z.real) > 20
    zs = np.where(big, 0.0, z)
    es = np.exp(s * tau)
    small = np.abs(zs) < 1e-3
    zsafe = np.where(small, 1.0, zs)
    sinhc = np.where(small, 1 + zs**2 / 6 + zs**4 / 120, np.sinh(zsafe) / zsafe)
    C = es * np.cosh(zs)
    S = es * tau * sinhc
    if np.any(big):
        qb = np.where(big, q, 1.0)
        ep = np.exp((s + qb) * tau)
        em = np.exp((s - qb) * tau)
        C = np.where(big, 0.5 * (ep + em), C)
        S = np.where(big, (ep - em) / (2 * qb), S)
    return C + S * h, S * b, S * c, C - S * h


class LinearPropagator:
    """Exact flow of the frozen-coefficient linear part on spectral (rho, m)."""

    def __init__(self, grid, params, rho_bar, pinned=False, mask=None):
        self.grid = grid
        self.sym = sym = linear_symbols(grid, params, rho_bar)
        self.pinned = pinned
        self.mask = mask
        ny = np.zeros(grid.spectral_shape, dtype=bool)
        for nyq in grid.nyquist:
            ny = ny | np.broadcast_to(nyq, grid.spectral_shape)
        self.b = np.where(ny, 0.0, sym.b)
        self.c = np.where(ny, 0.0, sym.c)
        self.khat = [np.broadcast_to(kh, grid.spectral_shape) for kh in sym.khat]
        self._cache = {}

    def _split(self, mh):
        par = sum(kh * mh[i] for i, kh in enumerate(self.khat))
        perp = mh - np.stack([kh * par for kh in self.khat])
        return par, perp

    def _join(self, par, perp):
        return perp + np.stack([kh * par for kh in self.khat])

    def apply(self, rh, mh):
        """``L U`` for the linear part."""
        s = self.sym
        if self.pinned:
            return s.a * rh, np.zeros_like(mh)
        par, perp = self._split(mh)
        lr = s.a * rh + self.b * par
        lpar = self.c * rh + s.dd * par
        lm = self._join(lpar, -s.b_perp * perp)
        if self.mask is not None:
            lm = lm * self.mask
        return lr, lm

    def expm(self, tau):
        key = round(float(tau), 15)
        if key not in self._cache:
            s = self.sym
            if self.pinned:
                self._cache[key] = (np.exp(s.a * tau),)
            else:
                self._cache[key] = _expm2(s.a, self.b, self.c, s.dd, tau) + (
                    np.exp(-s.b_perp * tau),)
            if len(self._cache) > 16:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]

    def propagate(self, tau, rh, mh):
        if tau == 0:
            return rh, mh
        E = self.expm(tau)
        if self.pinned:
            return E[0] * rh, mh
        e11, e12, e21, e22, eperp = E
        par, perp = self._split(mh)
        r_new = e11 * rh + e12 * par
        par_new = e21 * rh + e22 * par
        return r_new, self._join(par_new, eperp * perp)


# -- right-hand side ------------------------------------------------------------

class Dynamics:
    """Semi-discrete right-hand side in spectral variables.

    ``forcing(t)`` returns ``(f_rho, f_m)`` physical arrays (either may be None);
    ``pin_velocity(t)`` returns a velocity array that replaces the momentum
    update by ``m = rho u``.
    """

    def __init__(self, grid, params, doping, basis=None, forcing=None, pin_velocity=None):
        self.grid = grid
        self.params = params
        self.doping = doping
        self.basis = basis
        self.forcing = forcing
        self.pin_velocity = pin_velocity
        self.mask = None if basis is None else basis.fourier_mask
        self.last_terms = None

    def potential(self, rho):
        g = self.grid
        Vh = _inv_lap_hat(g, g.fft(rho - self.doping.g.values))
        return g.ifft(Vh)

    def velocity(self, rho, m):
        p = self.params
        if self.basis is not None:
            return galerkin_velocity(rho, m, self.basis)[0]
        return self.grid.dealias(velocity_array(self.grid, rho, m, p.rho_floor,
                                                p.vacuum_threshold))

    def pinned_momentum(self, rho, t):
        return rho * self.pin_velocity(t)

    def rhs(self, t, rh, mh):
        """Full tendencies ``(d rho_hat/dt, d m_hat/dt)``."""
        g = self.grid
        p = self.params
        rho = g.ifft(rh)
        f_rho = f_m = None
        if self.forcing is not None:
            f_rho, f_m = self.forcing(t)
        if self.pin_velocity is not None:
            m = g.dealias(self.pinned_momentum(rho, t))
            mh = g.fft(m)
        drho = -sum(g.diff_hat(mh[ax], ax) for ax in range(g.d)) - p.eps * g.k2 * rh
        if f_rho is not None:
            drho = drho + g.fft(f_rho)
        if self.pin_velocity is not None:
            return drho, np.zeros_like(mh)
        m = g.ifft(mh)
        V = self.potential(rho)
        u = self.velocity(rho, m)
        terms = momentum_terms(g, rho, m, V, p, forcing=f_m, u=u)
        self.last_terms = terms
        _check_finite(terms)
        dm = g.fft(sum(terms.values()))
        if self.mask is not None:
            dm = dm * self.mask
        return drho, dm


def _state_from_hat(grid, t, rh, mh, dyn):
    rho = grid.ifft(rh)
    if dyn.pin_velocity is not None:
        m = dyn.pinned_momentum(rho, t)
    else:
        m = grid.ifft(mh)
    return State.from_arrays(grid, t, rho, m, dyn.potential(rho))


def stable_dt(state, params, safety=0.4):
    """Explicit stability estimate for the terms left outside the integrating factor."""
    g = state.grid
    p = params
    rho = state.rho.values
    rho_bar = g.integrate(rho) / g.volume
    rmin = max(rho.min(), p.rho_floor)
    kmax = g.kmax_dealiased
    u = velocity_array(g, rho, state.m.values, p.rho_floor, p.vacuum_threshold)
    umax = float(np.max(np.sqrt(np.sum(u * u, axis=0))))
    dev = float(np.max(np.abs(rho - rho_bar)))
    glog = float(np.max(np.sqrt(np.sum(g.grad(np.log(np.maximum(rho, p.rho_floor))) ** 2,
                                       axis=0))))
    c2 = lambda r: p.gamma * r ** (p.gamma - 1) + 10 * p.eta * np.maximum(r, p.rho_floor) ** -11
    rates = [
        kmax * umax,
        kmax * math.sqrt(float(np.max(np.abs(c2(rho) - c2(rho_bar))))),
        kmax**2 * dev / rmin,
        p.mu * kmax**4 * float(np.max(np.abs(1 / np.maximum(rho, p.rho_floor) - 1 / rho_bar))),
        kmax**2 * glog,
        p.eps * kmax * glog * rho.max() / rmin,
        kmax**10 * math.sqrt(p.delta * dev),
        3 * p.r1 * float(np.max(rho * np.sum(u * u, axis=0))),
        1.0,
    ]
    return safety * math.sqrt(3.0) / max(rates)


class Stepper:
    """Advances spectral (rho_hat, m_hat) with a fixed scheme."""

    def __init__(self, grid, params, doping, scheme, basis=None, forcing=None,
                 pin_velocity=None, rho_bar=None):
        self.grid = grid
        self.params = params
        self.scheme = scheme
        self.dyn = Dynamics(grid, params, doping, basis, forcing, pin_velocity)
        if rho_bar is None:
            rho_bar = doping.mass / grid.volume
        self.rho_bar = rho_bar
        self.lin = LinearPropagator(grid, params, rho_bar, pinned=pin_velocity is not None,
                                    mask=self.dyn.mask)

    def nonlinear(self, t, rh, mh):
        fr, fm = self.dyn.rhs(t, rh, mh)
        lr, lm = self.lin.apply(rh, mh)
        return fr - lr, fm - lm

    def advance(self, t, rh, mh, h):
        kind = self.scheme.kind
        P = self.lin.propagate
        N = self.nonlinear
        if kind == "explicit_rk4_reference":
            f = self.dyn.rhs
            k1 = f(t, rh, mh)
            k2 = f(t + h / 2, rh + h / 2 * k1[0], mh + h / 2 * k1[1])
            k3 = f(t + h / 2, rh + h / 2 * k2[0], mh + h / 2 * k2[1])
            k4 = f(t + h, rh + h * k3[0], mh + h * k3[1])
            return (rh + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
                    mh + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
        k1 = N(t, rh, mh)
        u2 = P(h / 2, rh + h / 2 * k1[0], mh + h / 2 * k1[1])
        k2 = N(t + h / 2, *u2)
        if kind == "imex_integrating_factor":
            a = P(h, rh - h * k1[0], mh - h * k1[1])
            b = P(h / 2, k2[0], k2[1])
            u3 = (a[0] + 2 * h * b[0], a[1] + 2 * h * b[1])
            k3 = N(t + h, *u3)
            a = P(h, rh + h / 6 * k1[0], mh + h / 6 * k1[1])
            return (a[0] + 2 * h / 3 * b[0] + h / 6 * k3[0],
                    a[1] + 2 * h / 3 * b[1] + h / 6 * k3[1])
        # integrating-factor classical RK4
        e = P(h / 2, rh, mh)
        u3 = (e[0] + h / 2 * k2[0], e[1] + h / 2 * k2[1])
        k3 = N(t + h / 2, *u3)
        c = P(h / 2, k3[0], k3[1])
        u4 = (P(h, rh, mh)[0] + h * c[0], P(h, rh, mh)[1] + h * c[1])
        k4 = N(t + h, *u4)
        a = P(h, rh + h / 6 * k1[0], mh + h / 6 * k1[1])
        b = P(h / 2, k2[0] + k3[0], k2[1] + k3[1])
        return (a[0] + h / 3 * b[0] + h / 6 * k4[0],
                a[1] + h / 3 * b[1] + h / 6 * k4[1])

    def step_hat(self, t, rh, mh, h):
        try:
            with np.errstate(over="raise", invalid="raise"):
                rn, mn = self.advance(t, rh, mh, h)
        except FloatingPointError as exc:
            raise BlowUpError(f"floating-point overflow at t={t:.6g}", self._ledger()) from exc
        if not (np.all(np.isfinite(rn)) and np.all(np.isfinite(mn))):
            raise BlowUpError(f"non-finite state at t={t + h:.6g}", self._ledger())
        rmin = float(self.grid.ifft(rn).min())
        if rmin < self.params.rho_floor / 2 and (self.params.eta > 0 or self.dyn.basis is not None
                                                 or self.params.delta > 0):
            raise PositivityGuardError(rmin, self.params.rho_floor / 2, t + h)
        if rmin < 0:
            raise PositivityGuardError(rmin, 0.0, t + h)
        return rn, mn

    def _ledger(self):
        terms = self.dyn.last_terms or {}
        return {k: float(np.sqrt(np.mean(v**2))) if np.all(np.isfinite(v)) else float("nan")
                for k, v in terms.items()}


def _initial_hat(grid, state, dyn):
    rh = grid.fft(state.rho.values)
    mh = grid.fft(state.m.values)
    if dyn.mask is not None:
        mh = mh * dyn.mask
    return rh, mh


def step(s, p, scheme, b=None, doping=None, forcing=None, pin_velocity=None):
    """Advance ``s`` by one step of ``scheme.dt`` (or the stability estimate)."""
    from .model import DopingProfile

    g = s.grid
    if doping is None:
        doping, _ = DopingProfile.shifted(SpectralField(g, np.ones(g.shape)),
                                          g.integrate(s.rho.values))
    if b is not None and s.rho.values.min() <= 0:
        raise IndefiniteMassError("galerkin mode needs a strictly positive density")
    h = scheme.dt if scheme.dt is not None else stable_dt(s, p, scheme.safety)
    st = Stepper(g, p, doping, scheme, b, forcing, pin_velocity,
                 rho_bar=g.integrate(s.rho.values) / g.volume)
    rh, mh = _initial_hat(g, s, st.dyn)
    rn, mn = st.step_hat(s.t, rh, mh, h)
    return _state_from_hat(g, s.t + h, rn, mn, st.dyn)


# -- trajectories ---------------------------------------------------------------

@dataclass
class Trajectory:
    """Saved states with their certificate reports and per-step diagnostics."""
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    status: str = "ok"
    cause: str = None

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def column(self, name):
        return np.array([r[name] for r in self.steps])

    def __iter__(self):
        return iter(zip(self.states, self.reports))

    def __len__(self):
        return len(self.states)


def div_u_inf(state, params, basis=None):
    g = state.grid
    if basis is not None:
        u = galerkin_velocity(state.rho.values, state.m.values, basis)[0]
    else:
        u = g.dealias(velocity_array(g, state.rho.values, state.m.values,
                                     params.rho_floor, params.vacuum_threshold))
    return float(np.max(np.abs(g.div(u))))


def integrate(state0, params, doping, scheme, T, save_interval=None, basis=None,
              forcing=None, pin_velocity=None, monitors=(), report=None, stop_on_error=True):
    """Time-step from ``state0`` to ``state0.t + T``.

    ``monitors`` are callables ``state -> dict`` evaluated at every step and
    stored in ``Trajectory.steps``; ``report`` maps a saved state to its
    certificate report.  Guard and blow-up errors end the run early with a
    partial trajectory when ``stop_on_error`` is set, otherwise they propagate.
    """
    g = state0.grid
    t0 = state0.t
    traj = Trajectory(meta={"params": params, "grid": g, "scheme": scheme.kind,
                            "safety": scheme.safety, "T": T})
    if pin_velocity is not None:
        state0 = State.from_arrays(g, t0, state0.rho.values,
                                   state0.rho.values * pin_velocity(t0), state0.V.values)
    if basis is not None:
        mh = g.fft(state0.m.values) * basis.fourier_mask
        state0 = State.from_arrays(g, t0, state0.rho.values, g.ifft(mh), state0.V.values)

    def record(state, h, prev):
        rec = {"t": state.t, "dt": h, "min_rho": float(state.rho.values.min()),
               "max_rho": float(state.rho.values.max()),
               "mass": float(g.integrate(state.rho.values)),
               "mean_V": float(g.integrate(state.V.values))}
        if pin_velocity is not None:
            u = pin_velocity(state.t)
            rec["div_u_inf"] = float(np.max(np.abs(g.div(u))))
        else:
            rec["div_u_inf"] = div_u_inf(state, params, basis)
        for mon in monitors:
            rec.update(mon(state))
        traj.steps.append(rec)

    def save(state):
        traj.states.append(state)
        traj.reports.append(report(state) if report is not None else {})

    record(state0, 0.0, None)
    save(state0)
    if T <= 0:
        return traj

    if scheme.dt is not None:
        h = scheme.dt
    else:
        h = stable_dt(state0, params, scheme.safety)
    if save_interval is None or save_interval <= 0:
        save_interval = T
    save_interval = min(save_interval, T)
    h = min(h, save_interval)
    per_save = max(1, math.ceil(save_interval / h - 1e-9))
    h = save_interval / per_save
    n_saves = math.ceil(T / save_interval - 1e-9)
    traj.meta["dt_initial"] = h

    st = Stepper(g, params, doping, scheme, basis, forcing, pin_velocity,
                 rho_bar=g.integrate(state0.rho.values) / g.volume)
    rh, mh = _initial_hat(g, state0, st.dyn)
    t = t0
    state = state0
    try:
        for isave in range(n_saves):
            t_target = t0 + min((isave + 1) * save_interval, T)
            while t < t_target - 1e-12 * max(1.0, abs(t_target)):
                hh = min(h, t_target - t)
                rh, mh = st.step_hat(t, rh, mh, hh)
                t = t + hh if abs(t + hh - t_target) > 1e-12 else t_target
                state = _state_from_hat(g, t, rh, mh, st.dyn)
                record(state, hh, None)
                if scheme.dt is None and len(traj.steps) % 10 == 0:
                    lim = stable_dt(state, params, 1.0)
                    if h > lim:
                        while h > lim * scheme.safety:
                            h /= 2
                        log.warning("time step reduced to %.3e at t=%.4g", h, t)
            save(state)
    except (BlowUpError, PositivityGuardError, FloorViolationError) as exc:
        if not stop_on_error:
            raise
        traj.status = "terminated"
        traj.cause = f"{type(exc).__name__}: {exc}"
        traj.meta["error"] = exc
    return traj


def positivity_envelope_check(traj, rho_lower=None, rho_upper=None, tie_rtol=1e-10):
    """Check the exponential density envelope at every recorded step."""
    steps = traj.steps
    t = np.array([r["t"] for r in steps])
    dv = np.array([r["div_u_inf"] for r in steps])
    mins = np.array([r["min_rho"] for r in steps])
    maxs = np.array([r["max_rho"] for r in steps])
    if rho_lower is None:
        rho_lower = mins[0]
    if rho_upper is None:
        rho_upper = maxs[0]
    integral = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (dv[1:] + dv[:-1]))])
    lower = rho_lower * np.exp(-integral)
    upper = rho_upper * np.exp(integral)
    tol_lo = tie_rtol * np.abs(lower)
    tol_hi = tie_rtol * np.abs(upper)
    viol = (mins < lower - tol_lo) | (maxs > upper + tol_hi)
    return {"times": t, "lower": lower, "upper": upper, "min_rho": mins, "max_rho": maxs,
            "lower_margin": mins - lower, "upper_margin": upper - maxs,
            "violations": int(viol.sum()), "passed": bool(not viol.any())}


def run(config):
    """Run a configuration end to end; see ``harness.run_config``."""
    from .harness import run_config

    return run_config(config)
