"""Renewal function U, the perturbed counting mean V = U * G and its powers V_j."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dist import JointStepModel, MomentReport, discretize_cdf, moments
from .errors import DomainError, MissingMomentError, NonConvergedError
from .gridfn import GridFunction, convolution_powers, stieltjes_convolve

log = logging.getLogger(__name__)

PLATEAU_TOL = 1e-3
SLACK_TOL = 1e-9


def renewal_function(F: GridFunction) -> GridFunction:
    """Solve U = 1 + F * U by forward marching over the grid nodes."""
    if F.start != 0:
        raise DomainError("step CDF must start at t = 0")
    if F.values[0] != 0.0:
        raise DomainError("F(0) > 0: steps must be strictly positive")
    aF, cF = F.parts()
    n = F.n
    aU = np.zeros(n)
    cU = np.zeros(n)
    aU[0] = 1.0
    has_atoms = bool(np.any(aF[1:]))
    has_cells = bool(np.any(cF[1:]))
    # pairs of cells contribute half to each of two neighbouring output cells
    half = np.zeros(n)
    half[1:-1] = 0.5 * (cF[1:-1] + cF[2:])
    implicit = 1.0 - 0.5 * (cF[1] if n > 1 else 0.0)
    for k in range(1, n):
        if has_atoms:
            aU[k] = np.dot(aF[1 : k + 1], aU[k - 1 :: -1])
            acc = np.dot(aF[1 : k + 1], cU[k - 1 :: -1]) if has_cells else 0.0
            if has_cells:
                acc += np.dot(cF[1 : k + 1], aU[k - 1 :: -1])
        else:
            acc = cF[k]
        if has_cells and k > 1:
            acc += np.dot(half[1:k], cU[k - 1 : 0 : -1])
        cU[k] = acc / implicit
    values = np.cumsum(aU + cU)
    return GridFunction(F.h, values, atoms=aU, monotone=True, name="U")


def perturbed_counting_mean(U: GridFunction, G: GridFunction) -> GridFunction:
    V = stieltjes_convolve(U, G)
    return GridFunction(V.h, V.values, atoms=V.atoms, monotone=True, name="V")


def iterate_generations(V: GridFunction, jmax: int) -> list[GridFunction]:
    """[V_1, ..., V_jmax] with V_j = V_{j-1} * V."""
    return convolution_powers(V, jmax)


def gamma0(report: MomentReport) -> float:
    """lim (V(t) - t/m) = E xi^2 / (2 m^2) - E eta / m."""
    if report.ex2 is None or report.eeta is None:
        raise MissingMomentError("gamma0 needs finite E xi^2 and E eta")
    m = report.m
    return report.ex2 / (2 * m * m) - report.eeta / m


@dataclass(frozen=True)
class Gamma0Estimate:
    value: float
    oscillation: float
    window: tuple[float, float]
    converged: bool


def gamma0_empirical(V: GridFunction, m: float, tol: float = PLATEAU_TOL) -> Gamma0Estimate:
    """V(T) - T/m at the last node, provided the last 10% of the grid has flattened out."""
    eps = V.values - V.t / m
    k0 = int(0.9 * (V.n - 1))
    tail = eps[k0:]
    osc = float(tail.max() - tail.min())
    est = Gamma0Estimate(float(eps[-1]), osc, (float(V.t[k0]), V.t_end), osc / max(1.0, abs(eps[-1])) < tol)
    if not est.converged:
        raise NonConvergedError(
            f"V(t) - t/m oscillates by {osc:.3g} over [{est.window[0]:g}, {est.window[1]:g}]", est
        )
    return est


@dataclass
class RenewalTables:
    model_id: str
    h: float
    T: float
    U: GridFunction
    V: GridFunction
    Vj: list[GridFunction]
    m: float
    gamma0: float | None = None
    c0: float | None = None
    cL: float | None = None
    tail_mass: float = 0.0
    report: MomentReport | None = field(default=None, repr=False)

    def V_at(self, j: int, t: float) -> float:
        if j == 0:
            return 1.0
        if not 1 <= j <= len(self.Vj):
            raise DomainError(f"no table for generation {j} (jmax={len(self.Vj)})")
        return self.Vj[j - 1].at(t)


def build_tables(model: JointStepModel, h: float = 1e-2, T: float = 200.0, jmax: int = 1) -> RenewalTables:
    F, G = discretize_cdf(model, h, T)
    U = renewal_function(F)
    V = perturbed_counting_mean(U, G)
    Vj = iterate_generations(V, jmax)
    rep = moments(model)
    g0 = c0 = cL = None
    if rep.ex2 is not None:
        c0 = rep.ex2 / rep.m**2
        if rep.eeta is not None:
            g0 = gamma0(rep)
            cL = max(c0, rep.eeta / rep.m)
    return RenewalTables(model.model_id, h, T, U, V, Vj, rep.m, g0, c0, cL,
                         tail_mass=F.tail_mass, report=rep)


@dataclass
class BoundReport:
    lorden_slack: float  # max over nodes of U(t) - t/m - c0; <= 0 means the bound holds
    two_sided_slack: float  # max of |V(t) - t/m| - cL
    subadditivity_slack: float  # max of V(x+y) - V(x) - U(y)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_bounds(tables: RenewalTables, pairs: int = 200, tol: float = SLACK_TOL) -> BoundReport:
    """Lorden's bound for U, the two-sided bound for V and subadditivity of V against U."""
    if tables.c0 is None or tables.cL is None:
        raise MissingMomentError("bounds need finite E xi^2 and E eta")
    U, V, m = tables.U, tables.V, tables.m
    t = U.t
    lord = U.values - t / m - tables.c0
    two = np.abs(V.values - t / m) - tables.cL
    violations = []
    for name, arr in (("lorden", lord), ("two_sided", two)):
        bad = np.flatnonzero(arr > tol)
        violations += [(name, float(t[k]), float(arr[k])) for k in bad[:20]]

    # (x, y) pairs on a coarse sub-lattice of nodes, always including x = y = 0
    idx = np.unique(np.linspace(0, V.n - 1, min(pairs, V.n)).astype(int))
    X, Y = np.meshgrid(idx, idx, indexing="ij")
    ok = X + Y < V.n
    xs, ys = X[ok], Y[ok]
    sub = V.values[xs + ys] - V.values[xs] - U.values[ys]
    bad = np.flatnonzero(sub > tol)
    violations += [("subadditivity", float(t[xs[k]]), float(t[ys[k]]), float(sub[k])) for k in bad[:20]]
    return BoundReport(float(lord.max()), float(two.max()), float(sub.max()), violations)
