"""Run configuration files (INI sections: grid, params, initial, doping, scheme, run, output, sweep)."""
import configparser
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .integrator import StepScheme
from .model import DopingProfile, ModelParams, State, solve_poisson
from .spectral import Grid, SpectralField

log = logging.getLogger(__name__)

INITIAL_KINDS = ("constant", "cosine", "gaussian", "vacuum_touching", "checkpoint")
DOPING_KINDS = ("uniform", "cosine", "gaussian", "checkpoint")
SWEEP_PARAMS = ("eps", "mu", "delta", "eta", "eps_friction")

DEFAULT_INITIAL = {"kind": "cosine", "mean": 1.0, "amplitude": 0.2, "mode": 1,
                   "velocity_amplitude": 0.3, "velocity_mode": 1}
DEFAULT_PARAMS = dict(gamma=2.0, eps=0.05, mu=1e-3, delta=1e-30, eta=1e-4, r0=0.01, r1=0.01)


@dataclass(frozen=True)
class SweepSchedule:
    param: str
    start: float
    ratio: float
    count: int

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter {self.param!r}", "sweep.param")
        if not self.start > 0:
            raise ConfigError("ladder start must be positive", "sweep.ladder")
        if not 0 < self.ratio < 1:
            raise ConfigError("ladder ratio must lie in (0, 1) so values decrease",
                              "sweep.ladder")
        if self.count == 2 or self.count < 1:
            raise ConfigError("a ladder needs at least 3 rungs for a slope fit "
                              "(a single rung is allowed as a plain run)", "sweep.ladder")

    @classmethod
    def parse(cls, param, text):
        try:
            a, r, n = (s.strip() for s in text.split(","))
            return cls(param, float(a), float(r), int(n))
        except ValueError as exc:
            raise ConfigError(f"ladder must read 'start,ratio,count', got {text!r}",
                              "sweep.ladder") from exc

    @property
    def values(self):
        return [float(f"{self.start * self.ratio**i:.12g}") for i in range(self.count)]


@dataclass(frozen=True)
class RunConfig:
    shape: tuple = (128,)
    lengths: tuple = None
    params: ModelParams = field(default_factory=lambda: ModelParams(**DEFAULT_PARAMS))
    initial: dict = field(default_factory=lambda: dict(DEFAULT_INITIAL))
    doping: dict = field(default_factory=lambda: {"kind": "uniform"})
    T: float = 1.0
    save_interval: float = 0.1
    scheme: StepScheme = field(default_factory=StepScheme)
    mode: str = "collocation"
    n_modes: int = None
    output_dir: str = None
    seed: int = 0
    sweep: SweepSchedule = None

    def __post_init__(self):
        lengths = (2 * math.pi,) * len(self.shape) if self.lengths is None else self.lengths
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "lengths", tuple(float(x) for x in lengths))
        object.__setattr__(self, "initial", _typed(self.initial))
        object.__setattr__(self, "doping", _typed(self.doping))
        if self.T < 0:
            raise ConfigError("final time must be nonnegative", "run.T")
        if self.mode not in ("collocation", "galerkin"):
            raise ConfigError(f"unknown mode {self.mode!r}", "scheme.mode")
        if self.initial.get("kind") not in INITIAL_KINDS:
            raise ConfigError(f"unknown initial kind {self.initial.get('kind')!r}",
                              "initial.kind")
        if self.doping.get("kind") not in DOPING_KINDS:
            raise ConfigError(f"unknown doping kind {self.doping.get('kind')!r}", "doping.kind")
        if self.mode == "galerkin" and self.initial.get("kind") == "vacuum_touching":
            raise ConfigError("vacuum-touching initial data cannot run in galerkin mode",
                              "initial.kind")

    @property
    def grid(self):
        return Grid(self.shape, self.lengths)

    def replace(self, **kw):
        return replace(self, **kw)

    def with_params(self, **kw):
        return replace(self, params=replace(self.params, **kw))

    def to_dict(self):
        d = asdict(self)
        d["sweep"] = None if self.sweep is None else asdict(self.sweep)
        return d

    def digest(self, exclude_param=None):
        """Hash of the configuration, optionally ignoring one swept parameter."""
        d = self.to_dict()
        d.pop("output_dir", None)
        d.pop("sweep", None)
        if exclude_param:
            for k in _param_keys(exclude_param):
                d["params"].pop(k, None)
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()


def _typed(section):
    """Convert numeric strings so equal configurations hash equally."""
    out = {}
    for k, v in section.items():
        if isinstance(v, str):
            try:
                v = int(v) if v.strip().lstrip("+-").isdigit() else float(v)
            except ValueError:
                pass
        out[k] = v
    return out


def _param_keys(name):
    return ("eps", "r0", "r1") if name == "eps_friction" else (name,)


def apply_sweep_value(config, name, value):
    if name == "eps_friction":
        return config.with_params(eps=value, r0=value, r1=value)
    return config.with_params(**{name: value})


# -- initial data -------------------------------------------------------------

def initial_fields(config, grid):
    ini = config.initial
    kind = ini["kind"]
    x = grid.coords
    L0 = grid.lengths[0]
    mean = float(ini.get("mean", 1.0))
    amp = float(ini.get("amplitude", 0.2))
    mode = int(ini.get("mode", 1))
    if kind == "checkpoint":
        from .checkpoint import load_state

        st = load_state(ini["path"])
        if st.grid != grid:
            raise ConfigError("checkpoint grid differs from [grid]", "initial.path")
        return st.rho.values.copy(), st.m.values.copy()
    if kind == "constant":
        rho = np.full(grid.shape, mean)
    elif kind == "cosine":
        rho = mean * (1 + amp * np.cos(2 * np.pi / L0 * mode * x[0]))
    elif kind == "gaussian":
        width = float(ini.get("width", 0.5))
        r2 = sum((xi - L / 2) ** 2 for xi, L in zip(x, grid.lengths))
        rho = mean * (1 + amp * np.exp(-r2 / (2 * width**2)))
    else:  # vacuum_touching: minimum exactly 0 at x = 0
        rho = mean * (1 - np.cos(2 * np.pi / L0 * x[0])) / 1.0
    va = float(ini.get("velocity_amplitude", 0.0))
    vm = int(ini.get("velocity_mode", 1))
    u = np.zeros((grid.d,) + grid.shape)
    u[0] = va * np.sin(2 * np.pi / L0 * vm * x[0])
    m = rho * u
    m[0] = m[0] + float(ini.get("momentum_offset", 0.0))
    return rho, m


def build_initial_state(config):
    """Initial state, doping profile and the doping mean shift applied."""
    g = config.grid
    rho, m = initial_fields(config, g)
    p = config.params
    if rho.min() < 0:
        raise ConfigError("initial density is negative", "initial")
    vac = rho <= p.vacuum_threshold
    if np.any(vac) and np.any(m[:, vac] != 0):
        raise ConfigError("initial momentum must vanish where the density vanishes",
                          "initial.momentum_offset")
    if config.mode == "galerkin" and rho.min() <= 0:
        raise ConfigError("galerkin mode needs strictly positive initial density", "initial")
    if (p.eta > 0 or p.delta > 0) and rho.min() < p.rho_floor and config.initial["kind"] != "vacuum_touching":
        raise ConfigError("initial density below the floor while eta or delta is active",
                          "initial")
    mass = float(g.integrate(rho))
    dop = config.doping
    dk = dop["kind"]
    if dk == "checkpoint":
        from .checkpoint import load_fields

        (_, gfield), *_ = load_fields(dop["path"])
        base = SpectralField(g, gfield.values)
    elif dk == "uniform":
        base = SpectralField(g, np.ones(g.shape))
    else:
        tmp = DopingProfile.preset(g, mass, dk, float(dop.get("amplitude", 0.0)),
                                   int(dop.get("mode", 1)), float(dop.get("width", 0.5)))
        base = tmp.g
    doping, shift = DopingProfile.shifted(base, mass)
    if dk == "checkpoint" and abs(shift) > 0:
        log.info("doping profile mean-shifted by %.6e to match the initial mass", shift)
    tol = p.compat_rtol * max(abs(mass), 1.0)
    V = solve_poisson(SpectralField(g, rho), doping, tol).values
    return State.from_arrays(g, 0.0, rho, m, V), doping, shift


# -- file loading -------------------------------------------------------------------

def _getfloat(sec, key, default, field_name):
    try:
        return sec.getfloat(key, fallback=default)
    except ValueError as exc:
        raise ConfigError(f"expected a number for {key}", field_name) from exc


def _getint(sec, key, default, field_name):
    try:
        return sec.getint(key, fallback=default)
    except ValueError as exc:
        raise ConfigError(f"expected an integer for {key}", field_name) from exc


def parse_config(text):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable configuration: {exc}") from exc
    for name in cp.sections():
        if name not in ("grid", "params", "initial", "doping", "scheme", "run", "output", "sweep"):
            raise ConfigError(f"unknown section [{name}]", name)
    sec = lambda n: cp[n] if cp.has_section(n) else cp[cp.default_section]

    gs = sec("grid")
    d = _getint(gs, "d", 1, "grid.d")
    n = _getint(gs, "N", 128, "grid.N")
    L = _getfloat(gs, "L", 2 * math.pi, "grid.L")
    if not 1 <= d <= 3:
        raise ConfigError("dimension must be 1, 2 or 3", "grid.d")
    if n < 8 or n % 2:
        raise ConfigError("N must be even and at least 8", "grid.N")

    ps = sec("params")
    kw = {}
    for key, default in DEFAULT_PARAMS.items():
        kw[key] = _getfloat(ps, key, default, f"params.{key}")
    for key in ("rho_floor", "vacuum_threshold", "compat_rtol"):
        if key in ps:
            kw[key] = _getfloat(ps, key, None, f"params.{key}")
    for key in ("bohm_form", "coupling"):
        if key in ps:
            kw[key] = ps[key].strip()
    if ps.getboolean("tied_friction", fallback=False):
        kw["r0"] = kw["r1"] = kw["eps"]
    params = ModelParams(**kw)

    ini = {k: v.strip() for k, v in sec("initial").items()} if cp.has_section("initial") else {}
    ini.setdefault("kind", "cosine")
    if ini["kind"] == "cosine":
        for k, v in DEFAULT_INITIAL.items():
            ini.setdefault(k, v)
    dop = {k: v.strip() for k, v in sec("doping").items()} if cp.has_section("doping") else {}
    dop.setdefault("kind", "uniform")

    ss = sec("scheme")
    dt_text = ss.get("dt", "auto").strip()
    try:
        dt = None if dt_text in ("auto", "") else float(dt_text)
    except ValueError as exc:
        raise ConfigError("dt must be a number or 'auto'", "scheme.dt") from exc
    scheme = StepScheme(ss.get("kind", "imex_integrating_factor").strip(), dt,
                        _getfloat(ss, "safety", 0.4, "scheme.safety"))
    mode = ss.get("mode", "collocation").strip()
    n_modes = _getint(ss, "n_modes", None, "scheme.n_modes")

    rs = sec("run")
    T = _getfloat(rs, "T", 1.0, "run.T")
    save = _getfloat(rs, "save_interval", 0.1, "run.save_interval")
    seed = _getint(rs, "seed", 0, "run.seed")
    out = sec("output").get("dir", None) if cp.has_section("output") else None

    sweep = None
    if cp.has_section("sweep"):
        sw = cp["sweep"]
        sweep = SweepSchedule.parse(sw.get("param", "").strip(), sw.get("ladder", ""))

    return RunConfig((n,) * d, (L,) * d, params, ini, dop, T, save, scheme, mode, n_modes,
                     out, seed, sweep)


def load_config(path):
    """Read and validate a configuration file; raises ``ConfigError`` with the field name."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    cfg = parse_config(text)
    build_initial_state(cfg)  # validates initial data and doping compatibility
    return cfg


DEFAULT_CONFIG_TEXT = """\
# Default desk-scale profile: d = 1, N = 128, T = 1, gamma = 2, cosine data.
[grid]
d = 1
N = 128

[params]
gamma = 2.0
eps = 0.05
mu = 1e-3
delta = 1e-30
eta = 1e-4
r0 = 0.01
r1 = 0.01

[initial]
kind = cosine
mean = 1.0
amplitude = 0.2
mode = 1
velocity_amplitude = 0.3
velocity_mode = 1

[doping]
kind = uniform

[scheme]
kind = imex_integrating_factor
dt = auto
safety = 0.4

[run]
T = 1.0
save_interval = 0.1
"""

SMOKE_3D_CONFIG_TEXT = DEFAULT_CONFIG_TEXT.replace("d = 1\nN = 128", "d = 3\nN = 16").replace(
    "T = 1.0", "T = 0.05").replace("save_interval = 0.1", "save_interval = 0.01")
