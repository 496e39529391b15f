import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings, strategies as st

from qnsp.checkpoint import inspect, load_fields, load_state, save_fields, save_state
from qnsp.errors import CompatibilityError, ResolutionError, UnsupportedOrderError
from qnsp.model import State
from qnsp.mollifier import Mollifier, mollify
from qnsp.spectral import (Grid, SpectralField, dealias, derivative, hs_norm,
                           integrate, inverse_laplacian_zero_mean)


@pytest.fixture
def g64():
    return Grid((64,))


def field(g, func):
    return SpectralField.from_function(g, func)


@pytest.mark.parametrize("shape", [(7,), (6,), (8, 9)])
def test_grid_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        Grid(shape)


def test_grid_point_count():
    g = Grid((8, 10, 12))
    assert g.npoints == 8 * 10 * 12
    assert g.coords[0].shape == (8, 10, 12)


@pytest.mark.parametrize("func, order, expected", [
    (np.sin, 1, np.cos),
    (np.cos, 2, lambda x: -np.cos(x)),
    (lambda x: np.exp(np.cos(x)), 1, lambda x: -np.sin(x) * np.exp(np.cos(x))),
])
def test_derivative_oracles(g64, func, order, expected):
    out = derivative(field(g64, func), 0, order)
    ref = expected(g64.coords[0])
    assert np.max(np.abs(out.values - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_derivative_order_limits(g64):
    f = field(g64, np.sin)
    with pytest.raises(UnsupportedOrderError):
        derivative(f, 0, 19)
    assert derivative(f, 0, 18).meta["order"] == 18


def test_derivative_flags_unresolved_order():
    g = Grid((256,))
    assert derivative(field(g, np.sin), 0, 18).meta["unresolved"]
    assert not derivative(field(g, np.sin), 0, 2).meta["unresolved"]


@pytest.mark.parametrize("func, expected", [
    (np.cos, np.cos),
    (lambda x: 0 * x, lambda x: 0 * x),
    (lambda x: np.cos(2 * x), lambda x: np.cos(2 * x) / 4),
])
def test_inverse_laplacian_oracles(g64, func, expected):
    V = inverse_laplacian_zero_mean(field(g64, func))
    assert np.max(np.abs(V.values - expected(g64.coords[0]))) <= 1e-12


def test_inverse_laplacian_rejects_mean(g64):
    with pytest.raises(CompatibilityError) as err:
        inverse_laplacian_zero_mean(field(g64, lambda x: 1 + np.cos(x)))
    assert err.value.mass_defect == pytest.approx(2 * np.pi)


def test_dealias_modes(g64):
    x = g64.coords[0]
    kept = field(g64, lambda x: np.cos(16 * x))
    assert np.allclose(dealias(kept).values, kept.values, atol=1e-14)
    cut = field(g64, lambda x: np.cos(31 * x))
    assert np.max(np.abs(dealias(cut).values)) <= 1e-13
    const = SpectralField(g64, np.full(x.shape, 3.0))
    assert np.allclose(dealias(const).values, 3.0)


@pytest.mark.parametrize("func, expected", [
    (lambda x: np.ones_like(x), 2 * np.pi),
    (np.sin, 0.0),
    (lambda x: 2 + np.cos(3 * x), 4 * np.pi),
])
def test_integrate_oracles(g64, func, expected):
    assert integrate(field(g64, func)) == pytest.approx(expected, abs=1e-12)


def test_operator_exactness_3d():
    g = Grid((16, 16, 16))
    x, y, z = g.coords
    f = np.sin(x) * np.cos(2 * y) * np.cos(z)
    lap = g.laplacian_power(f, 1)
    assert np.max(np.abs(lap + 6 * f)) <= 1e-12
    H = g.hessian(f)
    assert np.allclose(H[0, 1], -2 * np.cos(x) * np.sin(2 * y) * np.cos(z), atol=1e-12)
    assert np.allclose(H[1, 0], H[0, 1])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_parseval_and_poisson_residual(coefs):
    g = Grid((32,))
    x = g.coords[0]
    f = sum(c * np.cos((k + 1) * x + k) for k, c in enumerate(coefs))
    ff = SpectralField(g, f)
    assert ff.roundtrip_error() <= 1e-12
    energy = g.integrate(f * f)
    coeff_sum = hs_norm(g, f, 0) ** 2
    assert energy == pytest.approx(coeff_sum, rel=1e-10, abs=1e-14)
    V = inverse_laplacian_zero_mean(ff)
    res = -g.laplacian_power(V.values, 1) - f
    assert np.linalg.norm(res) <= 1e-10 * max(np.linalg.norm(f), 1e-300)


def test_field_rank_shape_checked(g64):
    with pytest.raises(ValueError):
        SpectralField(g64, np.zeros((2, 64)), "vector")
    v = SpectralField(g64, np.zeros((1, 64)), "vector")
    assert v.values.flags.writeable is False


# -- mollifier ----------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2, 3])
def test_mollifier_profile_is_unit_mass_and_supported(d):
    m = Mollifier(0.3, d)
    assert m.profile(1.0, *([0.0] * d)) == 0.0
    assert m.profile(0.2, *([0.1] * d)) == m.profile(-0.2, *([-0.1] * d))
    taus = np.linspace(-0.3, 0.3, 2001)
    mass = trapezoid([m.slice_symbol(t, 0.0) for t in taus], taus)
    assert mass == pytest.approx(1.0, rel=1e-6)


def test_mollify_constant_is_fixed():
    g = Grid((32,))
    times = np.linspace(0, 1, 41)
    vals = np.full((times.size,) + g.shape, 2.5)
    tw, out = mollify(times, vals, g, Mollifier(0.1, 1))
    assert np.max(np.abs(out - 2.5)) <= 1e-12
    assert tw[0] > 0 and tw[-1] < 1


def test_mollify_mode_multiplied_by_symbol():
    g = Grid((32,))
    times = np.linspace(0, 1, 81)
    x = g.coords[0]
    vals = np.broadcast_to(np.cos(3 * x), (times.size,) + g.shape)
    m = Mollifier(0.1, 1)
    _, out = mollify(times, vals, g, m)
    sym = m.symbol(3.0, times[1] - times[0])
    assert np.max(np.abs(out[0] - sym * np.cos(3 * x))) <= 1e-12


def test_mollify_converges_quadratically():
    g = Grid((32,))
    x = g.coords[0]
    errs = []
    for r in (0.2, 0.1, 0.05):
        times = np.linspace(0, 1, int(round(1 / (r / 8))) + 1)
        vals = np.broadcast_to(np.sin(x), (times.size,) + g.shape)
        _, out = mollify(times, vals, g, Mollifier(r, 1))
        errs.append(np.max(np.abs(out[0] - np.sin(x))))
    slopes = np.diff(np.log(errs)) / np.log(0.5)
    assert np.all(slopes > 1.8)


def test_mollify_preserves_evenness():
    g = Grid((32,))
    x = g.coords[0]
    times = np.linspace(0, 1, 41)
    vals = np.broadcast_to(np.cos(x) + 0.3 * np.cos(2 * x), (times.size,) + g.shape)
    _, out = mollify(times, vals, g, Mollifier(0.1, 1))
    c = np.fft.rfft(out[0])
    assert np.max(np.abs(c.imag)) <= 1e-12 * np.max(np.abs(c))


def test_mollify_resolution_errors():
    g = Grid((32,))
    times = np.linspace(0, 1, 5)
    vals = np.zeros((5,) + g.shape)
    with pytest.raises(ResolutionError):
        mollify(times, vals, g, Mollifier(0.2, 1))
    times = np.linspace(0, 1, 401)
    with pytest.raises(ResolutionError):
        mollify(times, np.zeros((401,) + g.shape), g, Mollifier(2.0, 1))


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    g = Grid((8, 10), lengths=(1.0, 2.0))
    rng = np.random.default_rng(1)
    rho = 1 + 0.1 * rng.random(g.shape)
    s = State.from_arrays(g, 0.25, rho, rng.random((2,) + g.shape), rng.random(g.shape))
    path = tmp_path / "s.qnsp"
    save_state(path, s)
    back = load_state(path)
    assert back.t == 0.25
    assert back.grid == g
    assert np.array_equal(back.m.values, s.m.values)
    headers = inspect(path)
    assert headers[0]["magic"] == "QNSPF1"
    assert headers[1]["rank"] == "vector"


def test_checkpoint_layout_is_little_endian_float64(tmp_path):
    g = Grid((8,))
    f = SpectralField(g, np.arange(8.0))
    path = tmp_path / "f.qnsp"
    save_fields(path, [f], time=1.5)
    raw = path.read_bytes()
    assert raw.startswith(b"QNSPF1")
    assert np.arange(8.0).astype("<f8").tobytes() in raw
    (h, back), = load_fields(path)
    assert h["time"] == 1.5 and np.array_equal(back.values, f.values)
