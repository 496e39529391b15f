"""Smooth truncations of the identity and of the constant 1, with certified bounds."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as _quad
from scipy.interpolate import CubicHermiteSpline


def _b(s):
    """Bridge bump ``exp(-1/(s(1-s)))`` on (0, 1), zero elsewhere."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = s[inside]
    out[inside] = np.exp(-1.0 / (si * (1 - si)))
    return out


def _db(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = s[inside]
    out[inside] = np.exp(-1.0 / (si * (1 - si))) * (1 - 2 * si) / (si * (1 - si)) ** 2
    return out


class _Smoothstep:
    """``S(t) = int_0^t b / int_0^1 b`` tabulated with exact derivatives."""

    def __init__(self, n=4001):
        self.mass, _ = _quad.quad(lambda s: float(_b(s)), 0, 1, epsabs=1e-16, epsrel=1e-14)
        t = np.linspace(0, 1, n)
        pieces = [_quad.quad(lambda s: float(_b(s)), a, c, epsabs=1e-17, epsrel=1e-13)[0]
                  for a, c in zip(t[:-1], t[1:])]
        S = np.concatenate([[0.0], np.cumsum(pieces)]) / self.mass
        S = 0.5 * (S + (1 - S[::-1]))  # exact symmetry S(t) + S(1-t) = 1
        self.spline = CubicHermiteSpline(t, S, _b(t) / self.mass)
        self.integral = self.spline.antiderivative()

    def __call__(self, t):
        t = np.clip(t, 0.0, 1.0)
        return self.spline(t)

    def int0(self, t):
        """``int_0^t S``; equals 1/2 at ``t = 1`` by symmetry."""
        t = np.clip(t, 0.0, 1.0)
        return self.integral(t) - self.integral(0.0)


_STEP = None


def _step():
    global _STEP
    if _STEP is None:
        _STEP = _Smoothstep()
    return _STEP


@dataclass(frozen=True)
class TruncationFamily:
    """Profile ``bbar`` (1 on [-1,1], 0 outside (-2,2)) and ``btilde = int_0^z bbar``."""

    delta: float = 1.0
    d: int = 3
    _consts: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("truncation parameter must be positive")

    def with_delta(self, delta):
        return TruncationFamily(delta, self.d)

    # profile ---------------------------------------------------------------
    @staticmethod
    def bbar(z, nu=0):
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        st = _step()
        mid = (a > 1) & (a < 2)
        out = np.zeros_like(z)
        if nu == 0:
            out[a <= 1] = 1.0
            out[mid] = 1.0 - st(a[mid] - 1)
        elif nu == 1:
            out[mid] = -np.sign(z[mid]) * _b(a[mid] - 1) / st.mass
        elif nu == 2:
            out[mid] = -_db(a[mid] - 1) / st.mass
        else:
            raise ValueError("only derivatives up to order 2 are provided")
        return out

    @staticmethod
    def btilde(z, nu=0):
        if nu >= 1:
            return TruncationFamily.bbar(z, nu - 1)
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        st = _step()
        out = z.copy()
        mid = (a > 1) & (a < 2)
        out[mid] = np.sign(z[mid]) * (a[mid] - st.int0(a[mid] - 1))
        far = a >= 2
        out[far] = np.sign(z[far]) * 1.5
        return out

    # profile constants -------------------------------------------------------
    @property
    def constants(self):
        if not self._consts:
            s = np.linspace(0, 1, 200001)
            st = _step()
            k1 = float(np.max(_b(s)) / st.mass)
            k2 = float(np.max(np.abs(_db(s))) / st.mass) * (1 + 1e-6)
            d = self.d
            tinf = 1.5
            self._consts.update({
                "bbar_inf": 1.0, "dbbar_inf": k1, "d2bbar_inf": k2, "btilde_inf": tinf,
                "K": max(1.0, k1, k2),
                "C_beta": tinf,
                "C_grad_beta": math.sqrt(1 + (d - 1) * (tinf * k1) ** 2),
                "C_hess_beta": math.sqrt(k1**2 + 2 * (d - 1) * k1**2 + (d - 1) * (tinf * k2) ** 2
                                         + (d - 1) * (d - 2) * (tinf * k1**2) ** 2),
                "C_beta_hat": 1.0,
                "C_grad_beta_hat": math.sqrt(d) * k1,
                "C_beta_hat_y": 2 * math.sqrt(d),
            })
        return self._consts

    # products -----------------------------------------------------------------
    def _factors(self, y, l):
        """Per-coordinate values and derivatives of the product factors."""
        dl = self.delta
        z = dl * np.asarray(y, dtype=float)
        F, F1, F2 = [], [], []
        for j in range(z.shape[0]):
            if l is not None and j == l:
                F.append(self.btilde(z[j]))
                F1.append(self.btilde(z[j], 1))
                F2.append(self.btilde(z[j], 2))
            else:
                F.append(self.bbar(z[j]))
                F1.append(self.bbar(z[j], 1))
                F2.append(self.bbar(z[j], 2))
        return F, F1, F2

    @staticmethod
    def _prod(F, skip=()):
        out = np.ones_like(F[0])
        for j, f in enumerate(F):
            if j not in skip:
                out = out * f
        return out

    def _eval(self, y, l, scale, order):
        F, F1, F2 = self._factors(y, l)
        n = len(F)
        dl = self.delta
        val = scale * self._prod(F)
        if order == 0:
            return val
        grad = np.stack([scale * dl * F1[k] * self._prod(F, (k,)) for k in range(n)])
        if order == 1:
            return val, grad
        hess = np.empty((n, n) + np.shape(F[0]))
        for k in range(n):
            for m in range(k, n):
                if k == m:
                    h = scale * dl**2 * F2[k] * self._prod(F, (k,))
                else:
                    h = scale * dl**2 * F1[k] * F1[m] * self._prod(F, (k, m))
                hess[k, m] = h
                hess[m, k] = h
        return val, grad, hess

    def beta_l(self, y, l, order=0):
        """``beta^l(y) = btilde(delta y_l) prod_{j != l} bbar(delta y_j) / delta``.

        ``y`` has shape ``(n, ...)``; ``l`` is zero-based.  ``order`` 1 or 2
        also returns the gradient (shape ``(n, ...)``) and Hessian
        (``(n, n, ...)``) in ``y``.  Where every ``|delta y_j| <= 1`` the value
        is ``y_l`` exactly, not ``(delta y_l) / delta``.
        """
        out = self._eval(y, l, 1.0 / self.delta, order)
        y = np.asarray(y, dtype=float)
        flat = np.all(np.abs(self.delta * y) <= 1, axis=0)
        if order == 0:
            return np.where(flat, y[l], out)
        out[0][...] = np.where(flat, y[l], out[0])
        return out

    def beta_hat(self, y, order=0):
        """``prod_j bbar(delta y_j)`` and optionally its gradient and Hessian."""
        return self._eval(y, None, 1.0, order)


def beta_l(y, l, fam, order=0):
    return fam.beta_l(np.asarray(y, dtype=float), l, order)


def beta_hat(y, fam, order=0):
    return fam.beta_hat(np.asarray(y, dtype=float), order)


BOUND_NAMES = ("beta_inf", "grad_beta_inf", "hess_beta_inf", "beta_hat_inf",
               "grad_beta_hat_inf", "beta_hat_y")


def _samples(rng, count, d):
    n_focus = int(0.8 * count)
    mag = rng.uniform(0.5, 2.5, size=(d, n_focus))
    sgn = rng.choice([-1.0, 1.0], size=(d, n_focus))
    focus = mag * sgn
    # mix in coordinates inside the flat zone so single-axis transitions are probed
    flat = rng.uniform(-1, 1, size=(d, n_focus)) < 0
    focus = np.where(flat & (rng.uniform(size=(d, n_focus)) < 0.5),
                     rng.uniform(-1, 1, size=(d, n_focus)), focus)
    wide = rng.uniform(-3, 3, size=(d, count - n_focus))
    return np.concatenate([focus, wide], axis=1)


def verify_truncation_bounds(fam=None, sample_count=10000, deltas=(1.0, 0.1, 0.01), l=0,
                             seed=0, slope_tol=0.1):
    """Sample sups of the six truncation bounds and their scaling in ``delta``.

    Each bound ``sup <= C * delta^p`` is checked with the family's certified
    constant; log-log slopes over ``deltas`` are fitted per bound.
    """
    if sample_count < 10_000:
        raise ValueError("sample_count must be at least 10^4")
    fam = fam or TruncationFamily()
    C = fam.constants
    rng = np.random.default_rng(seed)
    z = _samples(rng, sample_count, fam.d)
    bounds = {
        "beta_inf": ("C_beta", -1),
        "grad_beta_inf": ("C_grad_beta", 0),
        "hess_beta_inf": ("C_hess_beta", 1),
        "beta_hat_inf": ("C_beta_hat", 0),
        "grad_beta_hat_inf": ("C_grad_beta_hat", 1),
        "beta_hat_y": ("C_beta_hat_y", -1),
    }
    rows = []
    sups = {k: [] for k in bounds}
    failures = []
    for dl in deltas:
        f = fam.with_delta(dl)
        y = z / dl
        v, gr, H = f.beta_l(y, l, order=2)
        bh, gbh = f.beta_hat(y, order=1)
        vals = {
            "beta_inf": np.abs(v),
            "grad_beta_inf": np.sqrt(np.sum(gr**2, axis=0)),
            "hess_beta_inf": np.sqrt(np.sum(H**2, axis=(0, 1))),
            "beta_hat_inf": np.abs(bh),
            "grad_beta_hat_inf": np.sqrt(np.sum(gbh**2, axis=0)),
            "beta_hat_y": np.abs(bh) * np.sqrt(np.sum(y**2, axis=0)),
        }
        for name, arr in vals.items():
            cname, power = bounds[name]
            bound = C[cname] * dl**power
            i = int(np.argmax(arr))
            sup = float(arr[i])
            sups[name].append(sup)
            ok = sup <= bound * (1 + 1e-12)
            rows.append({"delta": dl, "bound_name": name, "sample_sup": sup,
                         "certified_C": C[cname], "ratio": sup / bound, "passed": ok,
                         "witness": y[:, i].tolist()})
            if not ok:
                failures.append(f"{name} at delta={dl}: sup {sup:.6g} > {bound:.6g}, "
                                f"witness y={y[:, i].tolist()}")
    slopes = {}
    ld = np.log(np.asarray(deltas))
    for name, (_, power) in bounds.items():
        slope = float(np.polyfit(ld, np.log(sups[name]), 1)[0])
        slopes[name] = {"slope": slope, "expected": power,
                        "passed": abs(slope - power) <= slope_tol}
    return {"rows": rows, "slopes": slopes, "constants": dict(C), "failures": failures,
            "passed": not failures and all(s["passed"] for s in slopes.values())}
