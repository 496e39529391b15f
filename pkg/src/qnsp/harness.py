"""Run driver, vanishing-limit sweeps, manufactured solutions and verification suites."""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import functionals as fn
from .config import apply_sweep_value, build_initial_state
from .errors import QNSPError
from .integrator import (Dynamics, GalerkinBasis, StepScheme, integrate,
                         positivity_envelope_check, stable_dt)
from .model import DopingProfile, ModelParams, State, bohm_array
from .renormalization import (TEST_FUNCTIONS, commutator_slope, dissipation_weak_residual,
                              momentum_weak_residual, truncated_dissipation_residual,
                              truncated_momentum_residual)
from .spectral import Grid, SpectralField, hs_norm
from .truncation import TruncationFamily, verify_truncation_bounds

log = logging.getLogger(__name__)


def thread_count():
    """Worker count from ``QNSP_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("QNSP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class RunResult:
    config: object
    trajectory: object
    doping: object
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.get("passed", True) for c in self.checks.values())


def run_config(config, ledgers=True, write=None, save_every_step=False):
    """Run one configuration and evaluate the conservation, ledger and envelope checks."""
    state0, doping, shift = build_initial_state(config)
    p = config.params
    basis = GalerkinBasis(state0.grid, config.n_modes) if config.mode == "galerkin" else None
    monitors = []
    with_bd = state0.rho.values.min() >= p.rho_floor
    if ledgers:
        monitors.append(fn.energy_monitor(p, doping))
        if with_bd:
            monitors.append(fn.bd_monitor(p, doping))
    scheme = config.scheme
    save_interval = config.save_interval
    if save_every_step:
        dt = scheme.dt or stable_dt(state0, p, scheme.safety)
        if config.T > 0:
            dt = config.T / math.ceil(config.T / dt - 1e-9)
        scheme = StepScheme(scheme.kind, dt, scheme.safety)
        save_interval = dt
    report = (lambda s: fn.energy(s, p, doping).as_row()) if ledgers else None
    traj = integrate(state0, p, doping, scheme, config.T, save_interval, basis=basis,
                     monitors=monitors, report=report)
    traj.meta["doping_shift"] = shift
    res = RunResult(config, traj, doping)
    res.checks = evaluate_checks(traj, ledgers and len(traj.steps) > 1, with_bd)
    if write or config.output_dir:
        write_outputs(res, write or config.output_dir)
    return res


def evaluate_checks(traj, ledgers=True, with_bd=True):
    steps = traj.steps
    g = traj.states[0].grid
    mass0 = steps[0]["mass"]
    mass_err = max(abs(r["mass"] - mass0) for r in steps) / abs(mass0)
    meanV = max(abs(r["mean_V"]) for r in steps)
    checks = {
        "run_status": {"passed": traj.status == "ok", "status": traj.status,
                       "cause": traj.cause},
        "mass": {"passed": mass_err <= 1e-10, "max_relative_drift": mass_err},
        "mean_V": {"passed": meanV <= 1e-12, "max_abs": meanV},
    }
    env = positivity_envelope_check(traj)
    checks["positivity_envelope"] = {"passed": env["passed"], "violations": env["violations"],
                                     "min_lower_margin": float(env["lower_margin"].min()),
                                     "min_upper_margin": float(env["upper_margin"].min())}
    if ledgers:
        E = fn.ledger_check(steps, "E", "D_E", name="energy")
        El = fn.ledger_check(steps, "E", "D_E", name="energy_left_rule", rule="left")
        checks["energy_ledger"] = {"passed": E.passed, **E.summary(),
                                   "left_rule_violations": El.violations}
        if with_bd and "F_BD" in steps[0]:
            B = fn.ledger_check(steps, "F_BD", "D_BD", "R_sum", name="bd_entropy")
            r3 = fn.majorant_check(steps, "R3", "R3_majorant")
            r6 = fn.majorant_check(steps, "R6", "R6_majorant")
            E0 = steps[0]["E"]
            checks["bd_ledger"] = {"passed": B.passed, **B.summary()}
            checks["R3_majorant"] = {**r3, "C_tilde": r3["max_majorant"] / E0}
            checks["R6_majorant"] = {**r6, "C": steps[0]["R6_constant"]}
    return checks


def write_outputs(res, out_dir):
    from .checkpoint import save_state

    os.makedirs(out_dir, exist_ok=True)
    traj = res.trajectory
    fn.write_ledger_csv(os.path.join(out_dir, "steps.csv"), traj.steps)
    rows = [dict(t=s.t, **rep) for s, rep in zip(traj.states, traj.reports)]
    if rows and len(rows[0]) > 1:
        fn.write_ledger_csv(os.path.join(out_dir, "ledger.csv"), rows)
    fn.write_summary_json(os.path.join(out_dir, "summary.json"),
                          {"status": traj.status, "cause": traj.cause,
                           "checks": res.checks, "config": res.config.to_dict()})
    save_state(os.path.join(out_dir, "initial.qnsp"), traj.states[0])
    save_state(os.path.join(out_dir, "final.qnsp"), traj.states[-1])


# -- sweeps -------------------------------------------------------------------------

def _time_integral(t, y):
    return fn._trap(t, y)


def sweep_quantities(traj, name, value, fam_delta=0.5):
    """The vanishing quantity attached to the swept parameter for one rung."""
    p = traj.meta["params"]
    t = traj.times
    states = traj.states
    g = states[0].grid
    I = lambda a: float(g.integrate(a))
    if name == "eta":
        inv = [I(s.rho.values ** -10.0) for s in states]
        grad = [I(np.sum(g.grad(s.rho.values ** -5.0) ** 2, axis=0)) for s in states]
        return {"eta_int_rho_m10": value * _time_integral(t, inv),
                "sqrt_eta_grad_rho_m5_L2L2": math.sqrt(value * _time_integral(t, grad))}
    if name == "delta":
        a = [fn._parseval(g, g.fft(s.rho.values), g.k2**9) for s in states]
        b = [fn._parseval(g, g.fft(s.rho.values), g.k2**10) for s in states]
        return {"sqrt_delta_grad_lap4_rho_LinfL2": math.sqrt(value * max(a)),
                "sqrt_delta_lap5_rho_L2L2": math.sqrt(value * _time_integral(t, b))}
    if name == "mu":
        lap = []
        for s in states:
            u = g.dealias(s.m.values / s.rho.values)
            lu = g.laplacian_power(u, 1)
            lap.append(I(np.sum(lu * lu, axis=0)))
        phi = TEST_FUNCTIONS[3].space(g)
        lphi = math.sqrt(I(g.laplacian_power(phi, 1) ** 2) * (t[-1] - t[0]))
        q = value * _time_integral(t, lap)
        return {"mu_int_lap_u_sq": q,
                "sqrt_mu_pairing_bound": math.sqrt(value) * math.sqrt(q) * lphi}
    if name in ("eps", "eps_friction"):
        ap = fn.apriori_bounds_snapshot(traj, p)
        out = {"sqrt_eps_u_L2L2": ap["sqrt_eps_u_L2L2"],
               "eps_quarter_rho_quarter_u_L4L4": ap["eps_quarter_rho_quarter_u_L4L4"]}
        if name == "eps_friction":
            fam = TruncationFamily(fam_delta, g.d)
            _, parts = truncated_momentum_residual(traj, TEST_FUNCTIONS[3], 0, fam, p,
                                                   breakdown=True)
            out["R_tilde"] = abs(parts["R_tilde_r1"] + parts["R_tilde_r0"])
        return out
    raise ValueError(name)


def _run_rung(args):
    config, name, value = args
    cfg = apply_sweep_value(config, name, value)
    every = name == "eps_friction"
    res = run_config(cfg, ledgers=False, write=None, save_every_step=every)
    if res.trajectory.status != "ok":
        return {"value": value, "status": res.trajectory.status, "cause": res.trajectory.cause}
    q = sweep_quantities(res.trajectory, name, value)
    return {"value": value, "status": "ok", "quantities": q, "checks": res.checks,
            "digest": cfg.digest(exclude_param=name)}


def _slope(x, y):
    x = np.log(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(x, np.log(y), 1)[0])


def sweep(config, schedule, workers=None):
    """Run every rung of a ladder and report the vanishing quantities with log-log slopes."""
    if config.output_dir:
        config = config.replace(output_dir=None)
    values = schedule.values
    workers = workers or thread_count()
    jobs = [(config, schedule.param, v) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            rungs = list(ex.map(_run_rung, jobs))
    else:
        rungs = [_run_rung(j) for j in jobs]
    ok = [r for r in rungs if r["status"] == "ok"]
    report = {"param": schedule.param, "values": values, "rungs": rungs,
              "complete": len(ok) == len(rungs)}
    digests = {r["digest"] for r in ok}
    report["isolated"] = len(digests) <= 1
    if len(ok) >= 3:
        keys = ok[0]["quantities"].keys()
        report["slopes"] = {k: _slope([r["value"] for r in ok],
                                      [r["quantities"][k] for r in ok]) for k in keys}
        report["strictly_decreasing"] = {
            k: all(a["quantities"][k] > b["quantities"][k] for a, b in zip(ok, ok[1:]))
            for k in keys}
    elif len(rungs) == 1 and ok:
        report["slopes"] = None
    else:
        report["failure"] = "; ".join(f"{r['value']}: {r.get('cause')}" for r in rungs
                                      if r["status"] != "ok")
    return report


# -- manufactured solutions -----------------------------------------------------------

class ManufacturedSolution:
    """``rho_e = 1 + 0.2 cos(x - t)``, ``m_e = 0.3 sin(x) cos(t) + 0.1 cos(2x - t)`` on the 1-torus."""

    def __init__(self, grid, params):
        self.grid = grid
        self.params = params
        x = grid.coords[0]
        self.x = x
        self.doping = DopingProfile.shifted(SpectralField(grid, np.ones(grid.shape)),
                                            grid.volume)[0]
        self.dyn = Dynamics(grid, params, self.doping)

    def exact(self, t):
        x = self.x
        rho = 1 + 0.2 * np.cos(x - t)
        m = (0.3 * np.sin(x) * np.cos(t) + 0.1 * np.cos(2 * x - t))[None]
        return rho, m

    def exact_dt(self, t):
        x = self.x
        drho = 0.2 * np.sin(x - t)
        dm = -0.3 * np.sin(x) * np.sin(t) + 0.1 * np.sin(2 * x - t)
        return drho, dm[None]

    def forcing(self, t):
        g = self.grid
        rho, m = self.exact(t)
        drho, dm = self.dyn.rhs(t, g.fft(rho), g.fft(m))
        er, em = self.exact_dt(t)
        return er - g.ifft(drho), em - g.ifft(dm)

    def state(self, t):
        rho, m = self.exact(t)
        V = self.dyn.potential(rho)
        return State.from_arrays(self.grid, t, rho, m, V)


def mms_order(dts=(0.04, 0.02, 0.01), N=32, T=0.5, kind="imex_integrating_factor",
              params=None):
    """Observed temporal order under dt-halving against the manufactured solution."""
    g = Grid((N,))
    p = params or ModelParams(eps=0.05, mu=1e-3, eta=1e-4, r0=0.01, r1=0.01)
    ms = ManufacturedSolution(g, p)
    errs = []
    for dt in dts:
        traj = integrate(ms.state(0.0), p, ms.doping, StepScheme(kind, dt), T,
                         save_interval=T, forcing=ms.forcing, stop_on_error=False)
        fin = traj.states[-1]
        rho_e, m_e = ms.exact(fin.t)
        err = math.sqrt(g.integrate((fin.rho.values - rho_e) ** 2)
                        + g.integrate(np.sum((fin.m.values - m_e) ** 2, axis=0)))
        errs.append(err)
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(dts[i] / dts[i + 1])
              for i in range(len(dts) - 1)]
    return {"dts": list(dts), "errors": errs, "orders": orders, "scheme": kind,
            "min_order": min(orders)}


# -- verification suites ------------------------------------------------------------------

def random_smooth_density(grid, rng, modes=4, min_rho=0.5, log_amplitude=(0.2, 0.6)):
    """Random smooth positive density ``min_rho * exp(f - min f)``.

    ``f`` is a random trigonometric polynomial of degree ``modes`` per axis,
    rescaled so that ``max |f|`` is drawn from ``log_amplitude``.
    """
    x = grid.coords
    f = np.zeros(grid.shape)
    for ax in range(grid.d):
        kx = 2 * np.pi / grid.lengths[ax] * x[ax]
        for k in range(1, modes + 1):
            a, b = rng.normal(size=2) / k**2
            f = f + a * np.cos(k * kx) + b * np.sin(k * kx)
    f = f / max(np.abs(f).max(), 1e-300) * rng.uniform(*log_amplitude)
    return min_rho * np.exp(f - f.min())


BOHM_FORMS = ("divergence_logrho", "gradient_ratio", "sqrt_split")


def _bohm_spread(g, rho):
    forms = [bohm_array(g, rho, f) for f in BOHM_FORMS]
    scale = max(float(np.max(np.abs(v))) for v in forms)
    if scale == 0:
        return 0.0
    return max(float(np.max(np.abs(a - b))) for i, a in enumerate(forms)
               for b in forms[i + 1:]) / scale


def verify_bohm(N=64, samples=20, seed=0, rtol=1e-6, amplitude=0.3):
    """Pairwise agreement of the Bohm force forms on ``exp(a cos x)`` and random densities."""
    g = Grid((N,))
    rng = np.random.default_rng(seed)
    reference = _bohm_spread(g, np.exp(amplitude * np.cos(g.coords[0])))
    cases = [_bohm_spread(g, random_smooth_density(g, rng)) for _ in range(samples)]
    worst = max([reference] + cases)
    return {"passed": worst <= rtol, "worst_pairwise_relative": worst,
            "exp_cos_relative": reference, "samples": samples, "N": N, "tolerance": rtol}


def verify_truncation(sample_count=10000, seed=0):
    rep = verify_truncation_bounds(TruncationFamily(1.0, 3), sample_count, seed=seed)
    return rep


def verify_commutator(radii=(0.2, 0.1, 0.05)):
    rep = commutator_slope(radii)
    rep["passed"] = rep["slope"] >= 1.0
    return rep


def dissipation_identity_suite(N=64, seed=0, rtol=1e-8):
    """Single-state identity on random band-limited fields plus the flat-regime (T) equality."""
    g = Grid((N,))
    rng = np.random.default_rng(seed)
    p = ModelParams()
    worst = 0.0
    for _ in range(5):
        rho = random_smooth_density(g, rng, modes=3)
        u = random_smooth_density(g, rng, modes=3) - 1.0
        phi = random_smooth_density(g, rng, modes=2)
        s = State.from_arrays(g, 0.0, rho, (rho * u)[None], np.zeros(g.shape))
        scale = g.integrate(rho * np.abs(u)) * np.max(np.abs(phi)) + 1e-300
        worst = max(worst, fn.dissipation_identity_residual(s, phi, p) / scale)
    return {"passed": worst <= rtol, "worst_normalized": worst, "N": N}


def flat_regime_suite(Ns=(16, 32), dts=(0.02, 0.01), T=0.5, delta=0.5, amplitude=0.6):
    """Truncated against untruncated residuals, and their decay under refinement."""
    p = ModelParams(eps=0.05, mu=1e-3, eta=1e-4, r0=0.05, r1=0.05)
    psi_m = TEST_FUNCTIONS[3]
    levels = []
    for N, dt in zip(Ns, dts):
        g = Grid((N,))
        x = g.coords[0]
        rho = 1 + amplitude * np.cos(x)
        m = (rho * 0.3 * np.sin(x))[None]
        dop = DopingProfile.shifted(SpectralField(g, np.ones(g.shape)), g.integrate(rho))[0]
        V = Dynamics(g, p, dop).potential(rho)
        traj = integrate(State.from_arrays(g, 0.0, rho, m, V), p, dop, StepScheme(dt=dt), T,
                         save_interval=dt)
        fam = TruncationFamily(delta, g.d)
        umax = max(float(np.max(np.abs(s.m.values / s.rho.values))) for s in traj.states)
        tm, parts = truncated_momentum_residual(traj, psi_m, 0, fam, p, breakdown=True)
        um = momentum_weak_residual(traj, psi_m, 0, p)
        scale_m = sum(abs(v) for v in parts.values())
        td = truncated_dissipation_residual(traj, psi_m, fam, p)
        ud = dissipation_weak_residual(traj, psi_m, p)
        levels.append({"N": N, "dt": dt, "delta_sup_u": delta * umax,
                       "momentum_truncated": tm, "momentum_untruncated": um,
                       "momentum_scale": scale_m,
                       "momentum_equality_error": abs(tm - um) / max(scale_m, 1.0),
                       "dissipation_truncated": td, "dissipation_untruncated": ud,
                       "dissipation_equality_error": abs(td - ud)})
    a, b = levels[0], levels[-1]
    dec_m = abs(a["momentum_truncated"]) / max(abs(b["momentum_truncated"]), 1e-300)
    dec_d = abs(a["dissipation_truncated"]) / max(abs(b["dissipation_truncated"]), 1e-300)
    eq = max(max(l["momentum_equality_error"], l["dissipation_equality_error"]) for l in levels)
    flat = all(l["delta_sup_u"] <= 1 for l in levels)
    return {"levels": levels, "momentum_decay": dec_m, "dissipation_decay": dec_d,
            "equality_error": eq, "flat": flat,
            "passed": flat and eq <= 1e-8 and dec_m >= 4 and dec_d >= 4}


def verify_mms(**kw):
    rep = mms_order(**kw)
    rep["passed"] = rep["min_order"] >= 2.0
    return rep


VERIFY_KINDS = {
    "bohm": verify_bohm,
    "truncation": verify_truncation,
    "commutator": verify_commutator,
    "dissipation-identity": lambda **kw: _combine(dissipation_identity_suite(),
                                                  flat_regime_suite()),
    "mms-order": verify_mms,
}


def _combine(a, b):
    return {"single_state": a, "flat_regime": b, "passed": a["passed"] and b["passed"]}


def verify(kind, **options):
    """Run a named verification suite; returns ``(passed, report)``."""
    if kind not in VERIFY_KINDS:
        raise QNSPError(f"unknown verification kind {kind!r}; choose from {sorted(VERIFY_KINDS)}")
    rep = VERIFY_KINDS[kind](**options)
    return bool(rep["passed"]), rep
