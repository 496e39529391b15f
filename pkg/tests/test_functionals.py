import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnsp import functionals as fn
from qnsp.integrator import StepScheme, integrate
from qnsp.model import DopingProfile, ModelParams, State, solve_poisson
from qnsp.spectral import Grid, SpectralField

TWO_PI = 2 * np.pi


def doping_for(g, rho):
    return DopingProfile.shifted(SpectralField(g, np.ones(g.shape)), g.integrate(rho))[0]


def make_state(g, rho, u):
    rho = np.broadcast_to(rho, g.shape).astype(float)
    m = rho * np.broadcast_to(u, (g.d,) + g.shape)
    V = solve_poisson(SpectralField(g, rho), doping_for(g, rho)).values
    return State.from_arrays(g, 0.0, rho, m, V)


@pytest.fixture
def g64():
    return Grid((64,))


# -- energy -------------------------------------------------------------------------

@pytest.mark.parametrize("gamma, eta", [(2.0, 0.0), (1.4, 1e-2)])
def test_energy_constant_state(g64, gamma, eta):
    rep = fn.energy(make_state(g64, 1.0, 0.0), ModelParams(gamma=gamma, eta=eta))
    assert rep.total == pytest.approx(TWO_PI * (1 / (gamma - 1) + eta / 11), rel=1e-13)
    assert rep.components["kinetic_half_rho_u2"] == 0.0


def test_energy_kinetic_and_pressure(g64):
    x = g64.coords[0]
    rep = fn.energy(make_state(g64, 1.0, np.sin(x)), ModelParams())
    assert rep.components["kinetic_half_rho_u2"] == pytest.approx(np.pi / 2, rel=1e-13)
    rep = fn.energy(make_state(g64, 1 + 0.2 * np.cos(x), 0.0), ModelParams(gamma=2.0))
    assert rep.components["pressure_rho_gamma_over_gm1"] == pytest.approx(TWO_PI * 1.02,
                                                                           rel=1e-13)


def test_energy_row_has_every_dissipation_column(g64):
    row = fn.energy(make_state(g64, 1.0, 0.0), ModelParams()).as_row()
    for name in fn.ENERGY_DISSIPATION:
        assert "DE_" + name in row


# -- BD entropy ---------------------------------------------------------------------

def test_bd_constant_one(g64):
    rep = fn.bd_entropy(make_state(g64, 1.0, 0.0), ModelParams(r0=0.1))
    c = rep.components
    assert c["half_rho_w_sq"] == 0.0
    assert c["rho_log_rho_minus_1_plus_1"] == pytest.approx(0.0, abs=1e-14)
    assert c["minus_r0_log_rho"] == pytest.approx(0.0, abs=1e-14)


def test_bd_constant_e(g64):
    rep = fn.bd_entropy(make_state(g64, math.e, 0.0), ModelParams())
    assert rep.components["rho_log_rho_minus_1_plus_1"] == pytest.approx(TWO_PI, rel=1e-13)


def test_bd_w_term_matches_dense_quadrature(g64):
    x = g64.coords[0]
    rep = fn.bd_entropy(make_state(g64, 1 + 0.2 * np.cos(x), 0.0), ModelParams())
    xf = np.linspace(0, TWO_PI, 1024, endpoint=False)
    rho, drho = 1 + 0.2 * np.cos(xf), -0.2 * np.sin(xf)
    ref = 0.5 * np.sum(drho**2 / rho) * TWO_PI / xf.size
    assert rep.components["half_rho_w_sq"] == pytest.approx(ref, rel=1e-12)
    assert rep.w_identity_error <= 1e-14


def test_bd_row_reports_remainders_and_majorants(g64):
    x = g64.coords[0]
    s = make_state(g64, 1 + 0.2 * np.cos(x), 0.3 * np.sin(x))
    row = fn.bd_entropy(s, ModelParams(eps=0.05, r0=0.01, r1=0.01)).as_row()
    for k in ("R1", "R2", "R3", "R4", "R5", "R6", "R3_majorant", "R6_majorant", "R6_constant"):
        assert k in row
    assert abs(row["R3"]) <= row["R3_majorant"]
    assert abs(row["R6"]) <= row["R6_majorant"]


# -- tensors ------------------------------------------------------------------------

def test_tensors_constant_density(g64):
    tf = fn.tensors(make_state(g64, 1.0, np.sin(g64.coords[0])), ModelParams())
    assert np.max(np.abs(tf.S)) <= 1e-13
    assert np.max(np.abs(tf.Ta)) <= 1e-13


def test_tensor_S_matches_closed_form(g64):
    x = g64.coords[0]
    rho = np.exp(0.4 * np.cos(x))
    tf = fn.tensors(make_state(g64, rho, 0.0), ModelParams())
    sq = np.exp(0.2 * np.cos(x))
    d1 = -0.2 * np.sin(x) * sq
    d2 = (-0.2 * np.cos(x) + 0.04 * np.sin(x) ** 2) * sq
    ref = 2 * sq * d2 - 2 * d1**2
    assert np.max(np.abs(tf.S[0, 0] - ref)) <= 1e-8 * np.max(np.abs(ref))
    assert tf.checks["S_vs_rho_hess_log"] <= 1e-10


def test_tensor_split_2d():
    g = Grid((16, 16))
    x, y = g.coords
    s = make_state(g, 1 + 0.2 * np.cos(x), np.stack([np.sin(y), np.cos(x)]))
    tf = fn.tensors(s, ModelParams())
    assert tf.checks["split_error"] <= 1e-14
    assert tf.checks["sym_error"] <= 1e-14 and tf.checks["antisym_error"] <= 1e-14


# -- integration-by-parts identity --------------------------------------------------------

def test_dissipation_identity_zero_velocity(g64):
    s = make_state(g64, 1 + 0.3 * np.cos(g64.coords[0]), 0.0)
    assert fn.dissipation_identity_residual(s, np.cos(g64.coords[0])) == 0.0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.6), st.floats(-1, 1), st.integers(1, 3))
def test_dissipation_identity_property(a, b, k):
    g = Grid((64,))
    x = g.coords[0]
    s = make_state(g, 1 + a * np.cos(k * x), b * np.sin(x) + 0.2)
    phi = np.cos(x) + 0.5 * np.sin(2 * x)
    assert fn.dissipation_identity_residual(s, phi) <= 1e-12


# -- certificates -------------------------------------------------------------------------

def test_sobolev_certificate_constant(g64):
    rep = fn.sobolev_certificate(SpectralField(g64, np.ones(g64.shape)))
    assert rep["left"] == 1.0
    right = (1 + math.sqrt(TWO_PI)) ** 2 * (1 + TWO_PI ** (1 / 3)) ** 3
    assert rep["right"] == pytest.approx(right, rel=1e-12)


def test_sobolev_certificate_family_bounded(g64):
    x = g64.coords[0]
    ratios = [fn.sobolev_certificate(SpectralField(g64, a + np.cos(x)))["ratio"]
              for a in (2.0, 1.5, 1.2)]
    assert all(np.isfinite(ratios)) and max(ratios) < 1


def _heat_run(N, T=0.2):
    g = Grid((N,))
    x = g.coords[0]
    s = make_state(g, 1 + 0.3 * np.cos(x), 0.0)
    p = ModelParams(eps=0.5)
    return integrate(s, p, doping_for(g, s.rho.values), StepScheme(dt=0.01), T,
                     save_interval=0.01, pin_velocity=lambda t: np.zeros((1,) + g.shape)), p


def test_quantum_part_certificate_grid_refinement():
    r = []
    for N in (32, 64):
        traj, p = _heat_run(N)
        rep = fn.quantum_part_certificate(traj, p)
        assert np.isfinite(rep["ratio"]) and rep["left"] > 0
        r.append(rep["ratio"])
    assert abs(r[0] - r[1]) <= 0.05 * abs(r[1])


def test_quantum_part_certificate_constant(g64):
    s = make_state(g64, 1.0, 0.0)
    traj = integrate(s, ModelParams(eps=0.1), doping_for(g64, s.rho.values),
                     StepScheme(dt=0.05), 0.2)
    assert fn.quantum_part_certificate(traj)["left"] == 0.0


def test_apriori_snapshot(g64):
    x = g64.coords[0]
    s = make_state(g64, 1.0, 0.0)
    traj = integrate(s, ModelParams(eps=0.1), doping_for(g64, s.rho.values),
                     StepScheme(dt=0.05), 0.2)
    snap = fn.apriori_bounds_snapshot(traj)
    assert snap["sqrt_rho_u_LinfL2"] == 0.0 and snap["sqrt_eps_u_L2L2"] == 0.0
    s2 = make_state(g64, 1 + 0.2 * np.cos(x), 0.3 * np.sin(x))
    traj2 = integrate(s2, ModelParams(eps=0.1), doping_for(g64, s2.rho.values),
                      StepScheme(), 0.0)
    snap2 = fn.apriori_bounds_snapshot(traj2)
    kin = fn.energy(s2, ModelParams()).components["kinetic_half_rho_u2"]
    assert snap2["sqrt_rho_u_LinfL2"] ** 2 == pytest.approx(2 * kin, rel=1e-12)


# -- ledgers --------------------------------------------------------------------------------

def test_ledger_check_counts_violations():
    steps = [{"t": 0.0, "E": 1.0, "D_E": 1.0}, {"t": 0.1, "E": 0.9, "D_E": 1.0},
             {"t": 0.2, "E": 0.95, "D_E": 1.0}]
    chk = fn.ledger_check(steps, rtol=1e-6)
    assert chk.violations == 1 and chk.worst_step == 2
    assert not chk.passed


def test_short_run_ledgers_close(g64):
    x = g64.coords[0]
    s = make_state(g64, 1 + 0.2 * np.cos(x), 0.3 * np.sin(x))
    p = ModelParams(eps=0.05, mu=1e-3, eta=1e-4, r0=0.01, r1=0.01)
    dop = doping_for(g64, s.rho.values)
    traj = integrate(s, p, dop, StepScheme(), 0.1,
                     monitors=(fn.energy_monitor(p, dop), fn.bd_monitor(p, dop)))
    E = fn.ledger_check(traj.steps)
    B = fn.ledger_check(traj.steps, "F_BD", "D_BD", "R_sum", name="bd")
    assert E.passed and E.violations == 0
    assert B.passed and B.violations == 0
    assert fn.majorant_check(traj.steps, "R3", "R3_majorant")["passed"]
