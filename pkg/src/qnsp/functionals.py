"""Energy and BD entropy functionals, dissipation ledgers, tensors and certificates.

Ledger column names spell out the integrand, e.g. ``r1_rho_u4`` for
``r1 * integral rho |u|^4`` and ``eps_rho_hess_log_rho_sq`` for
``eps * integral rho |Hess log rho|^2``.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import FloorViolationError
from .model import continuity_array, velocity_array
from .spectral import hs_norm, lp_norm

ENERGY_COMPONENTS = ("kinetic_half_rho_u2", "cold_eta_rho_m10_over_11",
                     "pressure_rho_gamma_over_gm1", "highorder_half_delta_grad_lap4_rho_sq",
                     "quantum_2_grad_sqrt_rho_sq", "electrostatic_half_grad_V_sq")
ENERGY_DISSIPATION = ("rho_Du_sq", "4eps_over_gamma_grad_rho_gamma_half_sq",
                      "2_5_eps_eta_grad_rho_m5_sq", "delta_eps_lap5_rho_sq", "r0_u_sq",
                      "r1_rho_u4", "mu_lap_u_sq", "eps_rho_hess_log_rho_sq", "rho_u_sq",
                      "eps_rho_rho_minus_g")
BD_COMPONENTS = ("half_rho_w_sq", "pressure_rho_gamma_over_gm1", "quantum_cq_grad_sqrt_rho_sq",
                 "cold_eta_rho_m10_over_11", "rho_log_rho_minus_1_plus_1", "minus_r0_log_rho",
                 "highorder_half_delta_grad_lap4_rho_sq", "electrostatic_half_grad_V_sq")
BD_DISSIPATION = ("rho_A_u_sq", "4eps_over_gamma_grad_rho_gamma_half_sq",
                  "4_over_gamma_grad_rho_gamma_half_sq", "r0_u_sq", "r1_rho_u4",
                  "rho_rho_minus_g", "eps_rho_rho_minus_g", "rho_u_sq",
                  "eps_rho_grad_log_rho_sq", "2_5_eps_eta_grad_rho_m5_sq",
                  "2_5_eta_grad_rho_m5_sq", "mu_lap_u_sq", "delta_eps_lap5_rho_sq",
                  "delta_lap5_rho_sq", "eps_lap_rho_sq_over_rho", "rho_hess_log_rho_sq",
                  "eps_rho_hess_log_rho_sq")
BD_REMAINDERS = ("R1", "R2", "R3", "R4", "R5", "R6")


def _dot(a, b):
    return np.sum(a * b, axis=0)


def _frob2(T):
    return np.sum(T * T, axis=(0, 1))


class _Derived:
    """Lazily computed pointwise quantities shared by the functionals."""

    def __init__(self, state, params, doping=None, need_floor=True):
        self.g = state.grid
        self.p = params
        self.rho = state.rho.values
        self.m = state.m.values
        self.V = state.V.values
        self.doping = doping
        if need_floor and self.rho.min() < params.rho_floor:
            raise FloorViolationError(self.rho.min(), params.rho_floor)
        self.rc = np.maximum(self.rho, params.rho_floor)

    def I(self, a):
        return float(self.g.integrate(a))

    @cached_property
    def u(self):
        p = self.p
        return self.g.dealias(velocity_array(self.g, self.rho, self.m, p.rho_floor,
                                             p.vacuum_threshold))

    @cached_property
    def u_raw(self):
        p = self.p
        return velocity_array(self.g, self.rho, self.m, p.rho_floor, p.vacuum_threshold)

    @cached_property
    def rh(self):
        return self.g.fft(self.rho)

    @cached_property
    def grad_rho(self):
        return self.g.grad(self.rho)

    @cached_property
    def lap_rho(self):
        return self.g.ifft(-self.g.k2 * self.rh)

    @cached_property
    def log_rho(self):
        return np.log(self.rc)

    @cached_property
    def grad_log(self):
        return self.g.grad(self.log_rho)

    @cached_property
    def hess_log(self):
        return self.g.hessian(self.log_rho)

    @cached_property
    def sqrt_rho(self):
        return np.sqrt(np.maximum(self.rho, 0.0))

    @cached_property
    def grad_sqrt(self):
        return self.g.grad(self.sqrt_rho)

    @cached_property
    def J(self):
        return self.g.jacobian(self.u)

    @cached_property
    def Du(self):
        return 0.5 * (self.J + np.swapaxes(self.J, 0, 1))

    @cached_property
    def Au(self):
        return 0.5 * (self.J - np.swapaxes(self.J, 0, 1))

    @cached_property
    def grad_V(self):
        return self.g.grad(self.V)

    @cached_property
    def u2(self):
        return _dot(self.u, self.u)

    def spectral_norm2(self, power, grad=False):
        """``integral |grad^? Delta^power rho|^2`` via Parseval."""
        g = self.g
        w = g.k2 ** (2 * power) * (g.k2 if grad else 1.0)
        return _parseval(g, self.rh, w)

    @cached_property
    def g_minus(self):
        if self.doping is None:
            return np.full(self.g.shape, self.I(self.rho) / self.g.volume)
        return self.doping.g.values


def _parseval(grid, ah, weight):
    wt = np.full(grid.spectral_shape, 2.0)
    wt[..., 0] = 1.0
    if grid.shape[-1] % 2 == 0:
        wt[..., -1] = 1.0
    tot = np.sum(np.abs(ah) ** 2 * wt * weight)
    return float(tot * grid.volume / grid.npoints**2)


@dataclass
class EnergyReport:
    components: dict
    dissipation: dict
    total: float
    total_dissipation: float

    def as_row(self, prefix="E_"):
        row = {"E": self.total, "D_E": self.total_dissipation}
        row.update({prefix + k: v for k, v in self.components.items()})
        row.update({"DE_" + k: v for k, v in self.dissipation.items()})
        return row


def energy(s, p, doping=None):
    """Energy components and the energy dissipation ledger of a state."""
    f = _Derived(s, p, doping, need_floor=p.eta > 0)
    eps, gam = p.eps, p.gamma
    comp = {
        "kinetic_half_rho_u2": 0.5 * f.I(_dot(f.m, f.u_raw)),
        "cold_eta_rho_m10_over_11": p.eta / 11 * f.I(f.rc**-10.0) if p.eta > 0 else 0.0,
        "pressure_rho_gamma_over_gm1": f.I(np.maximum(f.rho, 0) ** gam) / (gam - 1),
        "highorder_half_delta_grad_lap4_rho_sq":
            0.5 * p.delta * f.spectral_norm2(4, grad=True) if p.delta > 0 else 0.0,
        "quantum_2_grad_sqrt_rho_sq": 2 * f.I(_dot(f.grad_rho, f.grad_rho) / (4 * f.rc)),
        "electrostatic_half_grad_V_sq": 0.5 * f.I(_dot(f.grad_V, f.grad_V)),
    }
    grg = f.g.grad(np.maximum(f.rho, 0) ** (gam / 2))
    lap_u = f.g.laplacian_power(f.u, 1) if p.mu > 0 else None
    diss = {
        "rho_Du_sq": f.I(f.rho * _frob2(f.Du)),
        "4eps_over_gamma_grad_rho_gamma_half_sq": 4 * eps / gam * f.I(_dot(grg, grg)),
        "2_5_eps_eta_grad_rho_m5_sq": 0.0,
        "delta_eps_lap5_rho_sq": p.delta * eps * f.spectral_norm2(5) if p.delta > 0 else 0.0,
        "r0_u_sq": p.r0 * f.I(f.u2),
        "r1_rho_u4": p.r1 * f.I(f.rho * f.u2**2),
        "mu_lap_u_sq": p.mu * f.I(_dot(lap_u, lap_u)) if p.mu > 0 else 0.0,
        "eps_rho_hess_log_rho_sq": eps * f.I(f.rho * _frob2(f.hess_log)) if eps > 0 else 0.0,
        "rho_u_sq": f.I(f.rho * f.u2),
        "eps_rho_rho_minus_g": eps * f.I(f.rho * (f.rho - f.g_minus)),
    }
    if p.eta > 0 and eps > 0:
        gm5 = f.g.grad(f.rc**-5.0)
        diss["2_5_eps_eta_grad_rho_m5_sq"] = 0.4 * eps * p.eta * f.I(_dot(gm5, gm5))
    return EnergyReport(comp, diss, float(sum(comp.values())), float(sum(diss.values())))


@dataclass
class EntropyReport:
    components: dict
    dissipation: dict
    remainders: dict
    majorants: dict
    total: float
    total_dissipation: float
    total_remainder: float
    coefficients: dict = field(default_factory=dict)
    w_identity_error: float = 0.0

    def as_row(self):
        row = {"F_BD": self.total, "D_BD": self.total_dissipation, "R_sum": self.total_remainder}
        row.update({"BD_" + k: v for k, v in self.components.items()})
        row.update({"DBD_" + k: v for k, v in self.dissipation.items()})
        row.update(self.remainders)
        row.update(self.majorants)
        return row


def bd_entropy(s, p, doping=None, quantum_coeff=2.0, cold_coeff=1.0):
    """BD entropy in the effective velocity ``w = u + grad log rho`` with its ledger.

    ``quantum_coeff`` multiplies ``integral |grad sqrt rho|^2`` and ``cold_coeff``
    multiplies ``eta rho^-10 / 11``; the defaults are the values for which
    ``dF/dt + D = R1 + ... + R6`` holds for the model assembled in ``model``.
    """
    f = _Derived(s, p, doping, need_floor=True)
    g = f.g
    eps, gam, r0, r1, mu, delta, eta = p.eps, p.gamma, p.r0, p.r1, p.mu, p.delta, p.eta
    w = f.u + f.grad_log
    w_err = float(np.sqrt(f.I(_dot(w - f.u - f.grad_log, w - f.u - f.grad_log))))
    rho = f.rho
    comp = {
        "half_rho_w_sq": 0.5 * f.I(rho * _dot(w, w)),
        "pressure_rho_gamma_over_gm1": f.I(rho**gam) / (gam - 1),
        "quantum_cq_grad_sqrt_rho_sq": quantum_coeff * f.I(_dot(f.grad_rho, f.grad_rho) / (4 * rho)),
        "cold_eta_rho_m10_over_11": cold_coeff * eta / 11 * f.I(rho**-10.0) if eta > 0 else 0.0,
        "rho_log_rho_minus_1_plus_1": f.I(rho * (f.log_rho - 1) + 1),
        "minus_r0_log_rho": -r0 * f.I(f.log_rho),
        "highorder_half_delta_grad_lap4_rho_sq":
            0.5 * delta * f.spectral_norm2(4, grad=True) if delta > 0 else 0.0,
        "electrostatic_half_grad_V_sq": 0.5 * f.I(_dot(f.grad_V, f.grad_V)),
    }
    grg = g.grad(rho ** (gam / 2))
    grg2 = f.I(_dot(grg, grg))
    hl2 = f.I(rho * _frob2(f.hess_log))
    rrg = f.I(rho * (rho - f.g_minus))
    gm5sq = 0.0
    if eta > 0:
        gm5 = g.grad(rho**-5.0)
        gm5sq = f.I(_dot(gm5, gm5))
    lap5 = f.spectral_norm2(5) if delta > 0 else 0.0
    lap_u = g.laplacian_power(f.u, 1) if mu > 0 else None
    diss = {
        "rho_A_u_sq": f.I(rho * _frob2(f.Au)),
        "4eps_over_gamma_grad_rho_gamma_half_sq": 4 * eps / gam * grg2,
        "4_over_gamma_grad_rho_gamma_half_sq": 4 / gam * grg2,
        "r0_u_sq": r0 * f.I(f.u2),
        "r1_rho_u4": r1 * f.I(rho * f.u2**2),
        "rho_rho_minus_g": rrg,
        "eps_rho_rho_minus_g": eps * rrg,
        "rho_u_sq": f.I(rho * f.u2),
        "eps_rho_grad_log_rho_sq": eps * f.I(rho * _dot(f.grad_log, f.grad_log)),
        "2_5_eps_eta_grad_rho_m5_sq": 0.4 * eps * eta * gm5sq,
        "2_5_eta_grad_rho_m5_sq": 0.4 * eta * gm5sq,
        "mu_lap_u_sq": mu * f.I(_dot(lap_u, lap_u)) if mu > 0 else 0.0,
        "delta_eps_lap5_rho_sq": delta * eps * lap5,
        "delta_lap5_rho_sq": delta * lap5,
        "eps_lap_rho_sq_over_rho": eps * f.I(f.lap_rho**2 / rho),
        "rho_hess_log_rho_sq": hl2,
        "eps_rho_hess_log_rho_sq": eps * hl2,
    }
    rem, maj = bd_remainders(f, p, comp_E0=None)
    return EntropyReport(comp, diss, rem, maj, float(sum(comp.values())),
                         float(sum(diss.values())), float(sum(rem.values())),
                         {"quantum_coeff": quantum_coeff, "cold_coeff": cold_coeff}, w_err)


def bd_remainders(f, p, comp_E0=None):
    """Remainders R1..R6 by quadrature, plus the majorants for R3 and R6."""
    g = f.g
    eps, r0, r1, mu = p.eps, p.r0, p.r1, p.mu
    rho = f.rho
    gl = f.grad_log
    if p.coupling == "grad_rho_dot_grad":
        c = np.einsum("ij...,j...->i...", f.J, f.grad_rho)
    else:
        c = np.einsum("ji...,j...->i...", f.J, f.grad_rho)
    R = {
        "R1": -eps * f.I(_dot(c, gl)),
        "R2": 0.5 * eps * f.I(f.lap_rho * _dot(gl, gl)),
        "R3": -r1 * f.I(rho * f.u2 * _dot(f.u, gl)),
        "R4": -eps * f.I(f.lap_rho * g.div(f.m) / rho),
        "R5": 0.0,
        "R6": -r0 * eps * f.I(f.lap_rho / rho),
    }
    if mu > 0:
        R["R5"] = -mu * f.I(_dot(g.laplacian_power(f.u, 1), g.grad(g.laplacian_power(f.log_rho, 1))))
    g14 = g.grad(rho**0.25)
    maj3 = r1 * (3 * f.I(rho * f.u2**2) + f.I(_dot(g14, g14) ** 2))
    maj6 = r0 * eps * math.sqrt(g.volume) * hs_norm(g, rho, 2) * float(np.max(1 / rho))
    M = {"R3_majorant": maj3, "R6_majorant": maj6,
         "R6_constant": r0 * math.sqrt(g.volume)}
    return R, M


# -- tensors and identities ----------------------------------------------------

@dataclass
class TensorFields:
    T: np.ndarray
    Ts: np.ndarray
    Ta: np.ndarray
    S: np.ndarray
    S_over_sqrt_rho: np.ndarray
    checks: dict


def tensors(s, p):
    """``T = sqrt(rho) grad u`` (``T_ij = sqrt(rho) d_j u_i``), its parts, and ``S``."""
    f = _Derived(s, p, need_floor=False)
    g = f.g
    sq = f.sqrt_rho
    T = sq * f.J
    Ts = sq * f.Du
    Ta = sq * f.Au
    gs = f.grad_sqrt
    S = 2 * sq * g.hessian(sq) - 2 * np.einsum("i...,j...->ij...", gs, gs)
    S_over = np.where(sq > 0, S / np.where(sq > 0, sq, 1.0), 0.0)
    scale = max(float(np.max(np.abs(T))), 1e-300)
    checks = {
        "split_error": float(np.max(np.abs(Ts + Ta - T))) / scale,
        "sym_error": float(np.max(np.abs(Ts - np.swapaxes(Ts, 0, 1)))) / scale,
        "antisym_error": float(np.max(np.abs(Ta + np.swapaxes(Ta, 0, 1)))) / scale,
    }
    if f.rho.min() >= p.rho_floor:
        ref = f.rho * f.hess_log
        checks["S_vs_rho_hess_log"] = float(np.max(np.abs(S - ref))) / max(
            float(np.max(np.abs(ref))), 1e-300)
    return TensorFields(T, Ts, Ta, S, S_over, checks)


def dissipation_identity_residual(s, phi, p=None):
    """Largest ``|int sqrt(rho) T_ij phi + int rho u_i d_j phi + 2 int sqrt(rho) u_i d_j sqrt(rho) phi|``."""
    from .model import ModelParams

    p = p or ModelParams()
    f = _Derived(s, p, need_floor=False)
    g = f.g
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    gphi = g.grad(phi)
    sq = f.sqrt_rho
    T = sq * g.jacobian(f.u_raw)
    gs = f.grad_sqrt
    worst = 0.0
    for i in range(g.d):
        for j in range(g.d):
            r = (f.I(sq * T[i, j] * phi) + f.I(f.rho * f.u_raw[i] * gphi[j])
                 + 2 * f.I(sq * f.u_raw[i] * gs[j] * phi))
            worst = max(worst, abs(r))
    return worst


def sobolev_certificate(rho, k=2):
    """Norm factors of ``||1/rho||_inf <= C (1+||rho||_{H^{k+2}})^2 (1+||1/rho||_{L^3})^3``."""
    g = rho.grid
    vals = rho.values
    if vals.min() <= 0:
        raise FloorViolationError(vals.min(), 0.0)
    left = float(np.max(1 / vals))
    right = (1 + hs_norm(g, vals, k + 2)) ** 2 * (1 + lp_norm(g, 1 / vals, 3)) ** 3
    return {"left": left, "right": right, "ratio": left / right, "k": k}


# -- trajectory-level quantities -------------------------------------------------

def _trap(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * np.diff(t) * (y[1:] + y[:-1])))


def qpart_rhs(s, p, doping=None):
    """Initial BD data on the right of the quantum-part inequality."""
    f = _Derived(s, p, doping)
    w = f.u + f.grad_log
    return (0.5 * f.I(f.rho * _dot(w, w)) + f.I(f.rho**p.gamma) / (p.gamma - 1)
            + 2 * f.I(_dot(f.grad_sqrt, f.grad_sqrt)) + f.I(f.rho * (f.log_rho - 1) + 1)
            + 0.5 * f.I(_dot(f.grad_V, f.grad_V)) - p.r0 * f.I(f.log_rho))


def quantum_part_density(s, p):
    f = _Derived(s, p)
    H = f.g.hessian(f.sqrt_rho)
    g14 = f.g.grad(f.rho**0.25)
    return f.I(_frob2(H)) + f.I(_dot(g14, g14) ** 2)


def quantum_part_certificate(traj, p=None, doping=None):
    """Time-integrated ``|Hess sqrt rho|^2 + |grad rho^1/4|^4`` against the initial BD data."""
    p = p or traj.meta["params"]
    t = traj.times
    lhs_t = [quantum_part_density(s, p) for s in traj.states]
    left = _trap(t, lhs_t)
    right = qpart_rhs(traj.states[0], p, doping)
    return {"left": left, "right": right, "ratio": left / right if right else float("inf")}


def apriori_bounds_snapshot(traj, p=None):
    """Space-time norms from the eps-uniform bound lists along a trajectory."""
    p = p or traj.meta["params"]
    t = traj.times
    eps = p.eps
    per = {k: [] for k in ("sqrt_rho_u_L2sq", "rho_gamma_half_L2sq", "grad_sqrt_rho_L2sq",
                           "T_L2sq", "grad_rho_gamma_half_4_over_gamma_L2sq",
                           "sqrt_rho_hess_log_L2sq", "dt_rho_L1", "rho_u_L2sq",
                           "grad_rho_u_L32", "u_L2sq", "rho_u4_L1", "sqrt_rho_H2sq",
                           "grad_rho_quarter_L4_4")}
    for s in traj.states:
        f = _Derived(s, p, need_floor=False)
        g = f.g
        I = f.I
        rho = f.rho
        per["sqrt_rho_u_L2sq"].append(I(rho * f.u2))
        per["rho_gamma_half_L2sq"].append(I(rho**p.gamma))
        per["grad_sqrt_rho_L2sq"].append(I(_dot(f.grad_sqrt, f.grad_sqrt)))
        per["T_L2sq"].append(I(rho * _frob2(f.J)))
        grg = g.grad(rho ** (p.gamma / 2))
        per["grad_rho_gamma_half_4_over_gamma_L2sq"].append(4 / p.gamma * I(_dot(grg, grg)))
        per["sqrt_rho_hess_log_L2sq"].append(I(rho * _frob2(f.hess_log)))
        per["dt_rho_L1"].append(I(np.abs(continuity_array(g, rho, f.m, eps))))
        per["rho_u_L2sq"].append(I(_dot(f.m, f.m)))
        gm = g.jacobian(f.m)
        per["grad_rho_u_L32"].append(I(np.sqrt(_frob2(gm)) ** 1.5) ** (2 / 1.5))
        per["u_L2sq"].append(I(f.u2))
        per["rho_u4_L1"].append(I(rho * f.u2**2))
        per["sqrt_rho_H2sq"].append(hs_norm(g, f.sqrt_rho, 2) ** 2)
        g14 = g.grad(np.maximum(rho, 0) ** 0.25)
        per["grad_rho_quarter_L4_4"].append(I(_dot(g14, g14) ** 2))
    L2 = lambda k: math.sqrt(max(_trap(t, per[k]), 0.0))
    out = {
        "sqrt_rho_u_LinfL2": math.sqrt(max(per["sqrt_rho_u_L2sq"])),
        "rho_gamma_half_LinfL2": math.sqrt(max(per["rho_gamma_half_L2sq"])),
        "grad_sqrt_rho_LinfL2": math.sqrt(max(per["grad_sqrt_rho_L2sq"])),
        "T_L2L2": L2("T_L2sq"),
        "sqrt_rho_u_L2L2": L2("sqrt_rho_u_L2sq"),
        "sqrt_4_over_gamma_grad_rho_gamma_half_L2L2": L2("grad_rho_gamma_half_4_over_gamma_L2sq"),
        "sqrt_rho_hess_log_rho_L2L2": L2("sqrt_rho_hess_log_L2sq"),
        "dt_rho_L2L1": math.sqrt(_trap(t, np.square(per["dt_rho_L1"]))),
        "rho_u_L2L2": L2("rho_u_L2sq"),
        "grad_rho_u_L2L32": math.sqrt(_trap(t, per["grad_rho_u_L32"])),
        "sqrt_eps_u_L2L2": math.sqrt(eps) * L2("u_L2sq"),
        "eps_quarter_rho_quarter_u_L4L4": eps**0.25 * max(_trap(t, per["rho_u4_L1"]), 0.0) ** 0.25,
    }
    lhs = (math.sqrt(eps) * L2("sqrt_rho_H2sq")
           + eps**0.25 * max(_trap(t, per["grad_rho_quarter_L4_4"]), 0.0) ** 0.25)
    rhs = eps * out["sqrt_rho_hess_log_rho_L2L2"]
    out["rem_lhs"] = lhs
    out["rem_rhs"] = rhs
    out["rem_ratio"] = lhs / rhs if rhs > 0 else float("inf")
    return out


# -- per-step ledgers ---------------------------------------------------------------

def energy_monitor(p, doping=None):
    """Callable for ``integrate(monitors=...)`` recording the energy ledger each step."""
    def mon(state):
        return energy(state, p, doping).as_row()
    return mon


def bd_monitor(p, doping=None, quantum_coeff=2.0, cold_coeff=1.0):
    def mon(state):
        return bd_entropy(state, p, doping, quantum_coeff, cold_coeff).as_row()
    return mon


@dataclass
class LedgerCheck:
    inequality: str
    residuals: np.ndarray
    tolerances: np.ndarray
    violations: int
    steps: int
    fraction_ok: float
    worst: float
    worst_step: int
    margin: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.fraction_ok >= 0.99

    def summary(self):
        return {"inequality": self.inequality, "margin": self.margin,
                "worst_step": self.worst_step, "worst": self.worst,
                "violations": self.violations, "steps": self.steps,
                "fraction_ok": self.fraction_ok, **self.extra}


def ledger_check(steps, functional="E", dissipation="D_E", remainder=None, rtol=1e-6,
                 name="energy", rule="trapezoid"):
    """Per-step residual ``F_{n+1} - F_n + dt D - dt R`` against ``rtol * F_0 * dt``.

    ``rule='trapezoid'`` averages the dissipation and remainder over both step
    ends; ``rule='left'`` uses the value at ``t_n`` only.
    """
    F = np.array([r[functional] for r in steps])
    D = np.array([r[dissipation] for r in steps])
    R = np.array([r[remainder] for r in steps]) if remainder else np.zeros_like(D)
    t = np.array([r["t"] for r in steps])
    dt = np.diff(t)
    if rule == "trapezoid":
        Dq = 0.5 * (D[1:] + D[:-1])
        Rq = 0.5 * (R[1:] + R[:-1])
    else:
        Dq, Rq = D[:-1], R[:-1]
    res = F[1:] - F[:-1] + dt * (Dq - Rq)
    tol = rtol * abs(F[0]) * dt
    bad = res > tol
    n = res.size
    worst_idx = int(np.argmax(np.abs(res))) if n else -1
    return LedgerCheck(name, res, tol, int(bad.sum()), n,
                       float(1.0 - bad.sum() / n) if n else 1.0,
                       float(np.max(np.abs(res))) if n else 0.0, worst_idx + 1,
                       float(np.min(tol - res)) if n else 0.0)


def majorant_check(steps, value, majorant):
    v = np.abs(np.array([r[value] for r in steps]))
    m = np.array([r[majorant] for r in steps])
    ok = v <= m * (1 + 1e-12) + 1e-300
    return {"value": value, "max_abs": float(v.max()), "max_majorant": float(m.max()),
            "violations": int((~ok).sum()), "passed": bool(ok.all())}


def write_ledger_csv(path, steps):
    keys = list(steps[0].keys())
    for r in steps[1:]:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in steps:
            w.writerow({k: r.get(k, "") for k in keys})


def write_summary_json(path, summaries):
    with open(path, "w") as fh:
        json.dump(summaries, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
