import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnsp import renormalization as rn
from qnsp.errors import WindowError
from qnsp.harness import flat_regime_suite
from qnsp.integrator import StepScheme, integrate
from qnsp.model import DopingProfile, ModelParams, State, solve_poisson
from qnsp.spectral import Grid, SpectralField
from qnsp.truncation import BOUND_NAMES, TruncationFamily, beta_hat, beta_l, verify_truncation_bounds


# -- profile --------------------------------------------------------------------------

def test_profile_contract():
    z = np.array([-1.0, -0.3, 0.0, 0.7, 1.0])
    assert np.all(TruncationFamily.bbar(z) == 1.0)
    far = np.array([-3.0, -2.0, 2.0, 5.0])
    assert np.all(TruncationFamily.bbar(far) == 0.0)
    assert np.all(TruncationFamily.btilde(far) == np.sign(far) * 1.5)
    zz = np.linspace(-1, 1, 11)
    assert np.array_equal(TruncationFamily.btilde(zz), zz)


@settings(max_examples=50, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4))
def test_btilde_odd_and_lipschitz(a, b):
    ta, tb, _ = TruncationFamily.btilde(np.array([a, b, -a]))
    assert ta == pytest.approx(-TruncationFamily.btilde(np.array([-a]))[0], abs=1e-15)
    assert abs(ta - tb) <= abs(a - b) * (1 + 1e-10) + 1e-12
    assert tb == TruncationFamily.btilde(np.array([b]))[0]


def test_btilde_table_accuracy():
    # int_0^z bbar against direct quadrature of the profile
    from scipy.integrate import quad
    for z in (1.2, 1.5, 1.9):
        ref, _ = quad(lambda s: float(TruncationFamily.bbar(np.array([s]))[0]), 0, z,
                      epsabs=1e-13, points=[1.0])
        assert TruncationFamily.btilde(np.array([z]))[0] == pytest.approx(ref, abs=1e-10)


def test_bbar_derivative_matches_finite_difference():
    z = np.linspace(1.05, 1.95, 19)
    h = 1e-6
    fd = (TruncationFamily.bbar(z + h) - TruncationFamily.bbar(z - h)) / (2 * h)
    assert np.allclose(TruncationFamily.bbar(z, 1), fd, atol=1e-6)


# -- beta family ------------------------------------------------------------------------------

def test_beta_l_flat_zone_is_identity():
    fam = TruncationFamily(0.1, 3)
    y = np.array([3.0, 0.0, 0.0])
    assert beta_l(y, 0, fam) == pytest.approx(3.0, abs=1e-14)


def test_beta_l_vanishes_outside_support():
    fam = TruncationFamily(0.1, 3)
    assert beta_l(np.array([3.0, 25.0, 0.0]), 0, fam) == 0.0


def test_beta_l_pointwise_limit():
    y = np.array([3.0, -7.0, 12.0])
    errs = [abs(beta_l(y, 0, TruncationFamily(d, 3)) - 3.0) for d in (0.5, 0.2, 0.05, 0.01)]
    assert errs[-1] == 0.0 and errs[-2] == 0.0
    assert all(a >= b for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("y, expected", [
    ([0.0, 0.0, 0.0], 1.0),
    ([5.0, -9.0, 10.0], 1.0),
    ([20.0, 0.0, 0.0], 0.0),
])
def test_beta_hat_oracles(y, expected):
    assert beta_hat(np.array(y), TruncationFamily(0.1, 3)) == expected


def test_gradients_match_finite_differences():
    fam = TruncationFamily(0.5, 2)
    y = np.array([[2.7], [-3.1]])
    v, gr, H = fam.beta_l(y, 1, order=2)
    h = 1e-6
    for k in range(2):
        e = np.zeros_like(y)
        e[k] = h
        fd = (fam.beta_l(y + e, 1) - fam.beta_l(y - e, 1)) / (2 * h)
        assert gr[k, 0] == pytest.approx(fd[0], abs=1e-6)
        _, gp = fam.beta_l(y + e, 1, order=1)
        _, gm = fam.beta_l(y - e, 1, order=1)
        assert np.allclose(H[:, k, 0], (gp - gm)[:, 0] / (2 * h), atol=1e-5)


def test_verify_truncation_bounds_report():
    rep = verify_truncation_bounds(TruncationFamily(1.0, 3), 10_000)
    assert rep["passed"], rep["failures"]
    assert {r["bound_name"] for r in rep["rows"]} == set(BOUND_NAMES)
    assert rep["slopes"]["beta_inf"]["slope"] == pytest.approx(-1, abs=0.1)
    assert rep["slopes"]["hess_beta_inf"]["slope"] == pytest.approx(1, abs=0.1)
    assert max(r["sample_sup"] for r in rep["rows"] if r["bound_name"] == "beta_hat_inf") <= 1


def test_verify_truncation_rejects_small_samples():
    with pytest.raises(ValueError):
        verify_truncation_bounds(sample_count=100)


# -- residuals -----------------------------------------------------------------------------

def _run(g, rho, u, p, T=0.5, dt=0.01):
    rho = np.broadcast_to(rho, g.shape).astype(float)
    dop = DopingProfile.shifted(SpectralField(g, np.ones(g.shape)), g.integrate(rho))[0]
    V = solve_poisson(SpectralField(g, rho), dop).values
    s = State.from_arrays(g, 0.0, rho, rho * np.broadcast_to(u, (g.d,) + g.shape), V)
    return integrate(s, p, dop, StepScheme(dt=dt), T, save_interval=dt)


def test_test_function_library():
    assert len(rn.TEST_FUNCTIONS) == 8
    tf = rn.test_function("psi3")
    theta, dtheta = tf.time(np.array([0.0, 0.2, 0.5, 0.8, 1.0]), 1.0)
    assert theta[0] == theta[1] == theta[3] == theta[4] == 0.0 and theta[2] > 0


def test_equilibrium_residuals_vanish():
    g = Grid((32,))
    p = ModelParams(eps=0.05, mu=1e-3, eta=1e-4, r0=0.05, r1=0.05)
    traj = _run(g, 1.0, 0.0, p)
    fam = TruncationFamily(0.5, 1)
    for psi in rn.TEST_FUNCTIONS[:4]:
        assert abs(rn.truncated_momentum_residual(traj, psi, 0, fam)) <= 1e-12
    assert rn.truncated_dissipation_residual(traj, rn.TEST_FUNCTIONS[1], fam) <= 1e-12


def test_flat_regime_equivalence_single_run():
    g = Grid((32,))
    x = g.coords[0]
    p = ModelParams(eps=0.05, mu=1e-3, eta=1e-4, r0=0.05, r1=0.05)
    traj = _run(g, 1 + 0.6 * np.cos(x), 0.3 * np.sin(x), p)
    fam = TruncationFamily(0.5, 1)
    assert rn.flat_regime(traj, fam)
    for psi in rn.TEST_FUNCTIONS[1:4]:
        val, parts = rn.truncated_momentum_residual(traj, psi, 0, fam, breakdown=True)
        ref = rn.momentum_weak_residual(traj, psi, 0)
        scale = sum(abs(v) for v in parts.values())
        assert abs(val - ref) <= 1e-8 * max(scale, 1.0)
        td = rn.truncated_dissipation_residual(traj, psi, fam)
        assert td == pytest.approx(rn.dissipation_weak_residual(traj, psi), abs=1e-8)


def test_residual_report_json_fields():
    g = Grid((16,))
    x = g.coords[0]
    traj = _run(g, 1 + 0.2 * np.cos(x), 0.2 * np.sin(x), ModelParams(eps=0.05), T=0.2, dt=0.02)
    rep = rn.residual_report(traj, rn.TEST_FUNCTIONS[3], 0, TruncationFamily(0.5, 1))
    assert set(rep) == {"test_function_id", "l", "delta", "value", "term_breakdown"}
    for k in ("R_bar_1", "R_bar_2", "R_bar_3", "R_tilde_r0", "R_tilde_r1"):
        assert k in rep["term_breakdown"]


def test_flat_regime_refinement_decay():
    rep = flat_regime_suite()
    assert rep["flat"]
    assert rep["equality_error"] <= 1e-8
    assert rep["momentum_decay"] >= 4 and rep["dissipation_decay"] >= 4


def test_short_trajectory_rejected():
    g = Grid((16,))
    traj = _run(g, 1.0, 0.0, ModelParams(), T=0.02, dt=0.02)
    with pytest.raises(WindowError):
        rn.truncated_momentum_residual(traj, rn.TEST_FUNCTIONS[1], 0, TruncationFamily())


# -- commutator ------------------------------------------------------------------------------

def test_commutator_constant_velocity():
    g = Grid((32,))
    times = np.linspace(0, 2, 161)
    rho, _ = rn.single_mode_fields(g, times)
    u = np.full((times.size, 1) + g.shape, 0.7)
    assert rn.commutator_norm(times, rho, u, g, 0.1) <= 1e-12


def test_commutator_unit_density_second_order():
    g = Grid((64,))
    norms = []
    radii = (0.2, 0.1, 0.05)
    for r in radii:
        times = np.linspace(0, 2, int(round(2 / (r / 8))) + 1)
        rho = np.ones((times.size,) + g.shape)
        _, u = rn.single_mode_fields(g, times)
        norms.append(rn.commutator_norm(times, rho, u, g, r))
    slope = np.polyfit(np.log(radii), np.log(norms), 1)[0]
    assert slope >= 1.8


def test_commutator_slope_single_mode():
    assert rn.commutator_slope()["slope"] >= 1.0


def test_commutator_window_error():
    g = Grid((16,))
    times = np.linspace(0, 0.4, 41)
    rho, u = rn.single_mode_fields(g, times)
    with pytest.raises(WindowError):
        rn.commutator_norm(times, rho, u, g, 0.1)
