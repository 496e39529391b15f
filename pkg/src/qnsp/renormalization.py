"""Truncated weak formulations along trajectories and DiPerna-Lions commutators.

Residuals are space-time quadratures over every saved state of a trajectory
(trapezoid in time).  Test functions vanish with all derivatives at both ends
of their window, so the time quadrature is spectrally accurate.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import WindowError
from .model import momentum_terms, velocity_array
from .mollifier import Mollifier, mollify
from .truncation import TruncationFamily


# -- test functions -------------------------------------------------------------

def _time_bump(t, a, b):
    """Bump on (a, b) and its derivative."""
    t = np.asarray(t, dtype=float)
    c, h = 0.5 * (a + b), 0.5 * (b - a)
    s = (t - c) / h
    val = np.zeros_like(t)
    der = np.zeros_like(t)
    inside = np.abs(s) < 1
    si = s[inside]
    e = np.exp(-1.0 / (1 - si**2))
    val[inside] = e
    der[inside] = e * (-2 * si / (1 - si**2) ** 2) / h
    return val, der


@dataclass(frozen=True)
class TestFunction:
    """``theta(t) * phi(x)``: a time bump on a window fraction times a trig polynomial.

    ``modes`` holds ``(amplitude, integer wavevector, phase)`` triples; the
    wavevector is padded with zeros or truncated to the grid dimension.
    """
    ident: str
    window: tuple
    modes: tuple

    __test__ = False

    def time(self, t, T):
        a, b = self.window
        return _time_bump(t, a * T, b * T)

    def space(self, grid):
        x = grid.coords
        out = np.zeros(grid.shape)
        for amp, kv, phase in self.modes:
            kv = (tuple(kv) + (0, 0, 0))[: grid.d]
            arg = sum(2 * np.pi / L * k * xi for k, L, xi in zip(kv, grid.lengths, x))
            out = out + amp * np.cos(arg + phase)
        return out


TEST_FUNCTIONS = (
    TestFunction("psi0", (0.1, 0.9), ((1.0, (0,), 0.0),)),
    TestFunction("psi1", (0.1, 0.9), ((1.0, (1,), 0.0),)),
    TestFunction("psi2", (0.1, 0.9), ((1.0, (1,), -np.pi / 2),)),
    TestFunction("psi3", (0.2, 0.8), ((1.0, (1,), 0.0), (0.5, (2,), 0.3))),
    TestFunction("psi4", (0.05, 0.95), ((1.0, (2,), 0.0),)),
    TestFunction("psi5", (0.1, 0.7), ((0.7, (1, 1), 0.0), (0.3, (0,), 0.0))),
    TestFunction("psi6", (0.3, 0.95), ((1.0, (0, 1), 0.2), (0.4, (1, 0, 1), 0.0))),
    TestFunction("psi7", (0.1, 0.9), ((1.0, (3,), 0.1), (0.5, (1,), 0.0))),
)


def test_function(ident):
    for tf in TEST_FUNCTIONS:
        if tf.ident == ident:
            return tf
    raise KeyError(ident)


# -- shared per-state quantities ---------------------------------------------------

def _u_of(state, p):
    g = state.grid
    return velocity_array(g, state.rho.values, state.m.values, p.rho_floor, p.vacuum_threshold)


def _time_setup(traj, tf):
    t = traj.times
    t0, t1 = t[0], t[-1]
    T = t1 - t0
    if T <= 0 or len(t) < 3:
        raise WindowError("trajectory too short for a space-time residual")
    theta, dtheta = tf.time(t - t0, T)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return theta, dtheta, w


def _extra_forces(state, p, u, forcing=None):
    """Momentum forces outside the displayed truncated identity, summed."""
    g = state.grid
    terms = momentum_terms(g, state.rho.values, state.m.values, state.V.values, p,
                           forcing=forcing, u=u)
    keys = ("cold_pressure", "hyperviscosity", "eps_coupling", "capillarity", "forcing")
    return sum(terms[k] for k in keys), {k: terms[k] for k in keys}


def truncated_momentum_residual(traj, psi, l, fam, p=None, forcing=None, breakdown=False):
    """Signed sum of the truncated momentum identity for component ``l`` (zero-based).

    ``psi`` is a ``TestFunction``.  ``forcing(t)`` must match the run's forcing
    hook when one was used.  With ``breakdown`` a dict of every term is also
    returned.
    """
    p = p or traj.meta["params"]
    g = traj.states[0].grid
    theta, dtheta, w = _time_setup(traj, psi)
    phi = psi.space(g)
    gphi = g.grad(phi)
    acc = {k: 0.0 for k in ("rho_beta_dt_psi", "convective", "viscous_Ts", "pressure",
                            "quantum_hess_sqrt", "quantum_grad_sqrt", "drag", "poisson",
                            "R_tilde_r1", "R_tilde_r0", "R_bar_1", "R_bar_2", "R_bar_3",
                            "extra_forces", "continuity_eps")}
    for n, s in enumerate(traj.states):
        if w[n] == 0 or (theta[n] == 0 and dtheta[n] == 0):
            continue
        rho = s.rho.values
        u = _u_of(s, p)
        ud = g.dealias(u)
        beta, gb, Hb = fam.beta_l(u, l, order=2)
        th, dth = theta[n], dtheta[n]
        I = lambda a: float(g.integrate(a))
        sq = np.sqrt(rho)
        J = g.jacobian(u)
        Du = 0.5 * (J + np.swapaxes(J, 0, 1))
        Hs = g.hessian(sq)
        gs = g.grad(sq)
        g14 = g.grad(rho**0.25)
        V = s.V.values
        gV = g.grad(V)
        grg = g.grad(rho ** (p.gamma / 2))
        gb_gphi = np.einsum("k...,j...->kj...", gb, gphi)
        # d_j u_i contracted with Hess beta: HJ[k, j] = sum_i H[k, i] d_j u_i
        HJ = np.einsum("ki...,ij...->kj...", Hb, J)
        u2 = np.sum(u * u, axis=0)
        gb_u = np.sum(gb * u, axis=0)
        G, _ = _extra_forces(s, p, ud, None if forcing is None else forcing(s.t)[1])
        lap_rho = g.laplacian_power(rho, 1)
        vals = {
            "rho_beta_dt_psi": dth * I(rho * beta * phi),
            "convective": th * I(rho * beta * np.sum(u * gphi, axis=0)),
            "viscous_Ts": -th * I(np.sum(rho * Du * gb_gphi, axis=(0, 1))),
            "pressure": -2 * th * I(rho ** (p.gamma / 2) * np.sum(grg * gb, axis=0) * phi),
            "quantum_hess_sqrt": -2 * th * I(sq * np.sum(Hs * gb_gphi, axis=(0, 1))),
            "quantum_grad_sqrt": 2 * th * I(np.sum(np.einsum("i...,j...->ij...", gs, gs)
                                                  * gb_gphi, axis=(0, 1))),
            "drag": -th * I(rho * gb_u * phi),
            "poisson": -th * I(rho * np.sum(gV * gb, axis=0) * phi),
            "R_tilde_r1": -p.r1 * th * I(rho * u2 * gb_u * phi),
            "R_tilde_r0": -p.r0 * th * I(gb_u * phi),
            "R_bar_1": -th * I(phi * np.sum(rho * Du * HJ, axis=(0, 1))),
            "R_bar_2": -2 * th * I(phi * sq * np.sum(Hs * HJ, axis=(0, 1))),
            "R_bar_3": 8 * th * I(phi * sq * np.sum(np.einsum("i...,j...->ij...", g14, g14)
                                                    * HJ, axis=(0, 1))),
            "extra_forces": th * I(np.sum(gb * G, axis=0) * phi),
            "continuity_eps": p.eps * th * I((beta - gb_u) * lap_rho * phi),
        }
        if forcing is not None:
            f_rho = forcing(s.t)[0]
            if f_rho is not None:
                vals["continuity_eps"] += th * I((beta - gb_u) * f_rho * phi)
        for k, v in vals.items():
            acc[k] += w[n] * v
    total = float(math.fsum(acc.values()))
    if breakdown:
        return total, acc
    return total


def momentum_weak_residual(traj, psi, l, p=None, forcing=None, breakdown=False):
    """Untruncated weak momentum residual for component ``l`` (zero-based)."""
    p = p or traj.meta["params"]
    g = traj.states[0].grid
    theta, dtheta, w = _time_setup(traj, psi)
    phi = psi.space(g)
    gphi = g.grad(phi)
    acc = {k: 0.0 for k in ("m_dt_psi", "convective", "viscous", "pressure", "quantum",
                            "drag", "poisson", "friction", "extra_forces")}
    for n, s in enumerate(traj.states):
        if w[n] == 0:
            continue
        th, dth = theta[n], dtheta[n]
        rho = s.rho.values
        m = s.m.values
        u = _u_of(s, p)
        I = lambda a: float(g.integrate(a))
        J = g.jacobian(u)
        sq = np.sqrt(rho)
        bohm_flux = 2 * sq * g.hessian(sq)[l] - 2 * g.grad(sq)[l] * g.grad(sq)
        visc_flux = 0.5 * rho * (J[l] + J[:, l])
        G, _ = _extra_forces(s, p, g.dealias(u), None if forcing is None else forcing(s.t)[1])
        vals = {
            "m_dt_psi": dth * I(m[l] * phi),
            "convective": th * I(m[l] * np.sum(u * gphi, axis=0)),
            "viscous": -th * I(np.sum(visc_flux * gphi, axis=0)),
            "pressure": -th * I(g.grad(rho**p.gamma)[l] * phi),
            "quantum": -th * I(np.sum(bohm_flux * gphi, axis=0)),
            "drag": -th * I(m[l] * phi),
            "poisson": -th * I(rho * g.grad(s.V.values)[l] * phi),
            "friction": -th * I((p.r1 * rho * np.sum(u * u, axis=0) + p.r0) * u[l] * phi),
            "extra_forces": th * I(G[l] * phi),
        }
        for k, v in vals.items():
            acc[k] += w[n] * v
    total = float(math.fsum(acc.values()))
    if breakdown:
        return total, acc
    return total


def truncated_dissipation_residual(traj, phi, fam, p=None, comps=None):
    """Largest ``|sum of the four integrals|`` over the (i, j) components.

    ``int sqrt(rho) T_ij bhat phi + int bhat rho u_i d_j phi
    + int sqrt(rho) u_i phi d_k bhat T_kj + 2 int sqrt(rho) u_i d_j sqrt(rho) phi bhat``
    with ``T_ij = sqrt(rho) d_j u_i``.
    """
    return _dissipation(traj, phi, fam, p, truncated=True)


def dissipation_weak_residual(traj, phi, p=None):
    """Space-time version of the untruncated integration-by-parts identity."""
    return _dissipation(traj, phi, None, p, truncated=False)


def _dissipation(traj, phi_tf, fam, p, truncated):
    p = p or traj.meta["params"]
    g = traj.states[0].grid
    d = g.d
    theta, _, w = _time_setup(traj, phi_tf)
    phi = phi_tf.space(g)
    gphi = g.grad(phi)
    acc = np.zeros((d, d))
    for n, s in enumerate(traj.states):
        if w[n] == 0 or theta[n] == 0:
            continue
        th = theta[n]
        rho = s.rho.values
        u = _u_of(s, p)
        I = lambda a: float(g.integrate(a))
        sq = np.sqrt(rho)
        T = sq * g.jacobian(u)
        gs = g.grad(sq)
        if truncated:
            bh, gbh = fam.beta_hat(u, order=1)
            gbT = np.einsum("k...,kj...->j...", gbh, T)
        for i in range(d):
            for j in range(d):
                if truncated:
                    v = (I(sq * T[i, j] * bh * phi) + I(bh * rho * u[i] * gphi[j])
                         + I(sq * u[i] * phi * gbT[j]) + 2 * I(sq * u[i] * gs[j] * phi * bh))
                else:
                    v = (I(sq * T[i, j] * phi) + I(rho * u[i] * gphi[j])
                         + 2 * I(sq * u[i] * gs[j] * phi))
                acc[i, j] += w[n] * th * v
    return float(np.max(np.abs(acc)))


def residual_report(traj, psi, l, fam, p=None, forcing=None):
    """JSON-ready record for one truncated momentum residual."""
    val, parts = truncated_momentum_residual(traj, psi, l, fam, p, forcing, breakdown=True)
    return {"test_function_id": psi.ident, "l": l, "delta": fam.delta, "value": val,
            "term_breakdown": parts}


def flat_regime(traj, fam, p=None):
    """True when ``delta * sup |u| <= 1`` along the whole trajectory."""
    p = p or traj.meta["params"]
    umax = max(float(np.max(np.abs(_u_of(s, p)))) for s in traj.states)
    return fam.delta * umax <= 1.0


# -- commutator ------------------------------------------------------------------------

def commutator_norm(times, rho, u, grid, r, moll=None):
    """``L1`` norm over the admissible window of ``Psi_r * div(rho u) - div((Psi_r * rho) u)``.

    ``rho`` has shape ``(n_times, *grid.shape)`` and ``u`` ``(n_times, d, *grid.shape)``.
    """
    times = np.asarray(times, dtype=float)
    T = times[-1] - times[0]
    if not r < T / 4:
        raise WindowError(f"mollifier radius {r} must be below T/4 = {T / 4}")
    moll = moll or Mollifier(r, grid.d)
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    flux_div = np.stack([grid.div(rho[n] * u[n]) for n in range(times.size)])
    tw, m_flux = mollify(times, flux_div, grid, moll)
    _, m_rho = mollify(times, rho, grid, moll)
    idx = np.searchsorted(times, tw)
    comm = np.stack([m_flux[k] - grid.div(m_rho[k] * u[i]) for k, i in enumerate(idx)])
    l1 = np.array([grid.integrate(np.abs(c)) for c in comm])
    if tw.size < 2:
        return float(l1.sum() * (times[1] - times[0]))
    return float(np.sum(0.5 * np.diff(tw) * (l1[1:] + l1[:-1])))


def single_mode_fields(grid, times, amp_rho=0.3, u0=0.5, amp_u=0.2):
    """Analytic single-mode samples ``rho = 1 + a cos(x - t)``, ``u = u0 + b sin(x + t/2)``."""
    x = grid.coords[0]
    k = 2 * np.pi / grid.lengths[0]
    rho = np.stack([1 + amp_rho * np.cos(k * x - t) for t in times])
    u = np.zeros((len(times), grid.d) + grid.shape)
    for n, t in enumerate(times):
        u[n, 0] = u0 + amp_u * np.sin(k * x + 0.5 * t)
    return rho, u


def commutator_slope(radii=(0.2, 0.1, 0.05), grid=None, T=2.0):
    """Log-log slope of ``commutator_norm`` on the single-mode fields."""
    from .spectral import Grid

    grid = grid or Grid((64,))
    norms = []
    for r in radii:
        dt = r / 8
        n = int(round(T / dt)) + 1
        times = np.linspace(0, T, n)
        rho, u = single_mode_fields(grid, times)
        norms.append(commutator_norm(times, rho, u, grid, r))
    slope = float(np.polyfit(np.log(radii), np.log(norms), 1)[0])
    return {"radii": list(radii), "norms": norms, "slope": slope}


__all__ = ["TruncationFamily", "TestFunction", "TEST_FUNCTIONS", "test_function",
           "truncated_momentum_residual", "momentum_weak_residual",
           "truncated_dissipation_residual", "dissipation_weak_residual", "residual_report",
           "flat_regime", "commutator_norm", "commutator_slope", "single_mode_fields"]
