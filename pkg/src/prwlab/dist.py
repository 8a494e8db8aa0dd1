"""Joint laws of the step pair (xi, eta).

Every family is built from two one-dimensional marginals with analytic CDFs,
quantiles, Laplace transforms and moments.  Samplers work from uniforms so the
same transform serves both numpy generators and the counter-based tree keys.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, UnsupportedFamilyError
from .gridfn import GridFunction, nodes_to

FAMILIES = {
    "GEM": (),
    "ExpExp": ("rate_xi", "rate_eta"),
    "DetDet": ("c_xi", "c_eta"),
    "ExpDet": ("rate_xi", "c_eta"),
    "ParetoDet": ("r", "b", "c_eta"),
    "UniformDet": ("a_xi", "b_xi", "c_eta"),
}
COUPLINGS = ("independent", "comonotone", "gem-coupled")


# --------------------------------------------------------------------------
# marginals


class _Exp:
    lattice = False

    def __init__(self, rate):
        self.rate = rate

    def cdf(self, x):
        return -np.expm1(-self.rate * np.maximum(x, 0.0))

    def ppf(self, u):
        return -np.log(u) / self.rate

    def laplace(self, s):
        return self.rate / (self.rate + s)

    def one_minus_laplace(self, s):
        return s / (self.rate + s)

    def log_laplace(self, s):
        return -math.log1p(s / self.rate)

    def moment(self, k):
        return math.factorial(k) / self.rate**k

    def integrated_tail(self, x):
        return -np.expm1(-self.rate * np.maximum(x, 0.0)) / self.rate

    def overshoot_ppf(self, u):
        return -np.log1p(-u) / self.rate

    ess_inf = 0.0

    def scaled(self, c):
        return _Exp(self.rate / c)


class _Det:
    lattice = True

    def __init__(self, c):
        self.c = c
        self.ess_inf = c

    def cdf(self, x):
        return np.where(np.asarray(x) >= self.c, 1.0, 0.0)

    def ppf(self, u):
        return np.full(np.shape(u), self.c) if np.ndim(u) else self.c

    def laplace(self, s):
        return math.exp(-s * self.c)

    def one_minus_laplace(self, s):
        return -math.expm1(-s * self.c)

    def log_laplace(self, s):
        return -s * self.c

    def moment(self, k):
        return self.c**k

    def integrated_tail(self, x):
        return np.clip(x, 0.0, self.c)

    def overshoot_ppf(self, u):
        return self.c * u

    def scaled(self, c):
        return _Det(self.c * c)


class _Uniform:
    lattice = False

    def __init__(self, a, b):
        self.a, self.b = a, b
        self.ess_inf = a

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def ppf(self, u):
        return self.a + (self.b - self.a) * u

    def laplace(self, s):
        a, b = self.a, self.b
        return (math.exp(-s * a) - math.exp(-s * b)) / (s * (b - a))

    def one_minus_laplace(self, s):
        a, b = self.a, self.b
        L = b - a
        if s * b < 1e-3:
            # series in s, avoids cancellation
            m1, m2, m3 = self.moment(1), self.moment(2), self.moment(3)
            return s * m1 - s**2 * m2 / 2 + s**3 * m3 / 6
        return (s * L + math.expm1(-s * b) - math.expm1(-s * a)) / (s * L)

    def log_laplace(self, s):
        L = self.b - self.a
        return -s * self.a + math.log(-math.expm1(-s * L)) - math.log(s * L)

    def moment(self, k):
        a, b = self.a, self.b
        return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))

    def integrated_tail(self, x):
        a, L = self.a, self.b - self.a
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.b)
        y = np.clip(x - a, 0.0, None)
        return np.minimum(x, a) + y - y**2 / (2 * L)

    def overshoot_ppf(self, u):
        a, L = self.a, self.b - self.a
        r = u * self.moment(1)
        y = L - np.sqrt(np.maximum(L * L - 2 * L * (r - a), 0.0))
        return np.where(r <= a, r, a + y)

    def scaled(self, c):
        return _Uniform(self.a * c, self.b * c)


class _Pareto:
    """P{X > x} = (b/x)^r for x >= b."""

    lattice = False

    def __init__(self, r, b):
        self.r, self.b = r, b
        self.ess_inf = b

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.b, 1.0 - (self.b / np.maximum(x, self.b)) ** self.r, 0.0)

    def ppf(self, u):
        return self.b * u ** (-1.0 / self.r)

    def _quad(self, g):
        # X = b U^{-1/r}; integrate over the uniform
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(g, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
        return val

    def laplace(self, s):
        return self._quad(lambda u: math.exp(-s * self.b * u ** (-1.0 / self.r)) if u > 0 else 0.0)

    def one_minus_laplace(self, s):
        return self._quad(lambda u: -math.expm1(-s * self.b * u ** (-1.0 / self.r)) if u > 0 else 1.0)

    def log_laplace(self, s):
        phi = self.laplace(s)
        return math.log(phi) if phi > 0 else -math.inf

    def moment(self, k):
        if self.r <= k:
            return None
        return self.r * self.b**k / (self.r - k)

    def integrated_tail(self, x):
        r, b = self.r, self.b
        x = np.asarray(x, dtype=float)
        xc = np.maximum(x, b)
        return np.where(x <= b, np.maximum(x, 0.0), b + b**r * (xc ** (1 - r) - b ** (1 - r)) / (1 - r))

    def overshoot_ppf(self, u):
        raise UnsupportedFamilyError("stationary overshoot is not implemented for Pareto steps")

    def scaled(self, c):
        return _Pareto(self.r, self.b * c)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    m: float
    ex2: float | None
    ex3: float | None
    eeta: float | None
    eeta2: float | None
    s2: float | None
    lattice: bool
    lattice_span: float | None = None


@dataclass(frozen=True)
class JointStepModel:
    family: str
    params: dict = field(default_factory=dict)
    coupling: str = "independent"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        names = FAMILIES[self.family]
        params = {k: float(v) for k, v in dict(self.params).items()}
        if set(params) != set(names):
            raise DomainError(f"{self.family} needs parameters {names}, got {sorted(params)}")
        for k, v in params.items():
            if not (v > 0 and math.isfinite(v)) and not (k == "a_xi" and v == 0):
                raise DomainError(f"parameter {k} must be a positive real, got {v}")
        coupling = self.coupling
        if self.family == "GEM":
            coupling = "gem-coupled"
        elif coupling not in COUPLINGS[:2]:
            raise DomainError(f"coupling {coupling!r} is not valid for {self.family}")
        if self.family == "ParetoDet" and params["r"] <= 1:
            raise DomainError("ParetoDet needs r > 1 for a finite mean")
        if self.family == "UniformDet" and params["b_xi"] <= params["a_xi"]:
            raise DomainError("UniformDet needs b_xi > a_xi")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "coupling", coupling)

    # -- convenience constructors
    @classmethod
    def gem(cls):
        return cls("GEM")

    @classmethod
    def exp_exp(cls, rate_xi=1.0, rate_eta=1.0, coupling="independent"):
        return cls("ExpExp", {"rate_xi": rate_xi, "rate_eta": rate_eta}, coupling)

    @classmethod
    def det_det(cls, c_xi=1.0, c_eta=1.0):
        return cls("DetDet", {"c_xi": c_xi, "c_eta": c_eta})

    @classmethod
    def exp_det(cls, rate_xi=1.0, c_eta=1.0):
        return cls("ExpDet", {"rate_xi": rate_xi, "c_eta": c_eta})

    @classmethod
    def pareto_det(cls, r=1.5, b=1.0, c_eta=1.0):
        return cls("ParetoDet", {"r": r, "b": b, "c_eta": c_eta})

    @classmethod
    def uniform_det(cls, a_xi=0.0, b_xi=2.0, c_eta=1.0):
        return cls("UniformDet", {"a_xi": a_xi, "b_xi": b_xi, "c_eta": c_eta})

    @classmethod
    def from_config(cls, block: dict) -> "JointStepModel":
        return cls(block["family"], block.get("params", {}), block.get("coupling", "independent"))

    def to_config(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "coupling": self.coupling}

    @property
    def model_id(self) -> str:
        ps = ",".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}({ps})"

    # -- marginals
    @property
    def xi(self):
        p, f = self.params, self.family
        if f == "GEM":
            return _Exp(1.0)
        if f in ("ExpExp", "ExpDet"):
            return _Exp(p["rate_xi"])
        if f == "DetDet":
            return _Det(p["c_xi"])
        if f == "ParetoDet":
            return _Pareto(p["r"], p["b"])
        return _Uniform(p["a_xi"], p["b_xi"])

    @property
    def eta(self):
        p, f = self.params, self.family
        if f == "GEM":
            return _Exp(1.0)
        if f == "ExpExp":
            return _Exp(p["rate_eta"])
        return _Det(p["c_eta"])

    def scaled(self, c: float) -> "JointStepModel":
        """Law of (c xi, c eta)."""
        if self.family == "GEM":
            raise UnsupportedFamilyError("a scaled GEM law is not one of the families")
        xi, eta = self.xi.scaled(c), self.eta.scaled(c)
        f = self.family
        if f == "ExpExp":
            ps = {"rate_xi": xi.rate, "rate_eta": eta.rate}
        elif f == "DetDet":
            ps = {"c_xi": xi.c, "c_eta": eta.c}
        elif f == "ExpDet":
            ps = {"rate_xi": xi.rate, "c_eta": eta.c}
        elif f == "ParetoDet":
            ps = {"r": xi.r, "b": xi.b, "c_eta": eta.c}
        else:
            ps = {"a_xi": xi.a, "b_xi": xi.b, "c_eta": eta.c}
        return JointStepModel(f, ps, self.coupling)

    def pairs_from_uniforms(self, u1, u2):
        """Transform uniforms on (0, 1) into (xi, eta) respecting the coupling."""
        u1 = np.asarray(u1, dtype=float)
        if self.family == "GEM":
            w = u1
            return -np.log(w), -np.log1p(-w)
        u2 = u1 if self.coupling == "comonotone" else np.asarray(u2, dtype=float)
        return self.xi.ppf(u1), self.eta.ppf(u2)


def _open_uniform(rng: np.random.Generator, size=None):
    u = rng.random(size)
    return np.where(u == 0.0, 2.0**-54, u)


def sample_pairs(model: JointStepModel, rng: np.random.Generator, n: int):
    """n independent draws of (xi, eta) as two arrays."""
    u1 = _open_uniform(rng, n)
    u2 = _open_uniform(rng, n)
    xi, eta = model.pairs_from_uniforms(u1, u2)
    return np.broadcast_to(xi, (n,)).astype(float), np.broadcast_to(eta, (n,)).astype(float)


def sample_pair(model: JointStepModel, rng: np.random.Generator) -> tuple[float, float]:
    xi, eta = sample_pairs(model, rng, 1)
    return float(xi[0]), float(eta[0])


def moments(model: JointStepModel) -> MomentReport:
    xi, eta = model.xi, model.eta
    m, ex2, ex3 = xi.moment(1), xi.moment(2), xi.moment(3)
    return MomentReport(
        m=m,
        ex2=ex2,
        ex3=ex3,
        eeta=eta.moment(1),
        eeta2=eta.moment(2),
        s2=None if ex2 is None else ex2 - m * m,
        lattice=xi.lattice,
        lattice_span=xi.c if xi.lattice else None,
    )


def laplace(model: JointStepModel, s: float) -> tuple[float, float]:
    """(E exp(-s xi), E exp(-s eta))."""
    if not s > 0:
        raise DomainError(f"Laplace argument must be positive, got {s}")
    return float(model.xi.laplace(s)), float(model.eta.laplace(s))


def _marginal_grid(marg, h, T, name):
    n = nodes_to(T, h) + 1
    t = np.arange(n) * h
    if isinstance(marg, _Det):
        k = int(math.ceil(marg.c / h - 1e-9))
        vals = (np.arange(n) >= k).astype(float)
        atoms = np.zeros(n)
        if k < n:
            atoms[k] = 1.0
    else:
        vals = np.asarray(marg.cdf(t), dtype=float)
        atoms = None
    return GridFunction(h, vals, atoms=atoms, monotone=True, tail_mass=float(1.0 - vals[-1]), name=name)


def discretize_cdf(model: JointStepModel, h: float, T: float) -> tuple[GridFunction, GridFunction]:
    """Exact node values of P{xi <= t} and P{eta <= t} on [0, T]."""
    if not (h > 0 and T > 0) or T < h:
        raise DomainError(f"need 0 < h <= T, got h={h}, T={T}")
    return _marginal_grid(model.xi, h, T, "F"), _marginal_grid(model.eta, h, T, "G")


def sample_stationary_overshoot(model: JointStepModel, rng: np.random.Generator, n: int | None = None):
    """Draw(s) from the density P{xi > x} / E xi on (0, inf)."""
    u = _open_uniform(rng, n)
    x = model.xi.overshoot_ppf(u)
    return float(x) if n is None else np.asarray(x, dtype=float)


def integrated_tail(model: JointStepModel, x):
    """int_0^x P{xi > y} dy."""
    return model.xi.integrated_tail(x)
