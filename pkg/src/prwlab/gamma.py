"""mu(z) = inf_s e^{zs} E e^{-s eta} / (1 - E e^{-s xi}) and the rate gamma = sup{z : mu(z) < 1}."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dist import JointStepModel
from .errors import BracketError, DomainError, UnimodalityWarning

LOG_S_RANGE = (math.log(1e-6), math.log(1e6))
INV_PHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class MuValue:
    value: float
    s: float
    unimodal: bool


@dataclass(frozen=True)
class GammaResult:
    gamma: float
    mu_at_gamma: float
    inner_minimizer_s: float
    bracket: tuple[float, float]
    iterations: int


def _log_objective(model: JointStepModel, z: float):
    xi, eta = model.xi, model.eta

    def g(u):
        s = math.exp(u)
        return z * s + eta.log_laplace(s) - math.log(xi.one_minus_laplace(s))

    return g


def golden_min(g, a, b, tol):
    """Golden-section search for a minimum of g on [a, b]."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    gc, gd = g(c), g(d)
    while b - a > tol:
        if gc <= gd:
            b, d, gd = d, c, gc
            c = b - INV_PHI * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + INV_PHI * (b - a)
            gd = g(d)
    return (c, gc) if gc <= gd else (d, gd)


def mu_detail(model: JointStepModel, z: float, scan: int = 64) -> MuValue:
    if not z > 0:
        raise DomainError(f"mu needs z > 0, got {z}")
    g = _log_objective(model, z)
    lo, hi = LOG_S_RANGE
    us = np.linspace(lo, hi, scan)
    vals = np.array([g(u) for u in us])
    k = int(np.argmin(vals))
    if vals[k] == -math.inf:
        return MuValue(0.0, math.exp(us[k]), True)
    a, b = us[max(k - 1, 0)], us[min(k + 1, scan - 1)]
    # relative tolerance 1e-10 on s is an absolute one on log s
    u, val = golden_min(g, a, b, 1e-10)
    # three-point convexity probe around the refined minimiser plus a shape check of the scan
    ga, gb = g(a), g(b)
    t = (u - a) / (b - a) if b > a else 0.5
    interior = 0 < k < scan - 1
    convex = not interior or val <= (1 - t) * ga + t * gb + 1e-12 * abs(val)
    finite = vals[np.isfinite(vals)]
    dirs = np.sign(np.diff(finite))
    dirs = dirs[dirs != 0]
    unimodal = bool(convex and np.count_nonzero(np.diff(dirs) < 0) == 0)
    if not unimodal:
        warnings.warn(f"mu({z}): inner objective is not unimodal on the scan", UnimodalityWarning, stacklevel=2)
    return MuValue(math.exp(val) if val < 700 else math.inf, math.exp(u), unimodal)


def mu(model: JointStepModel, z: float) -> float:
    return mu_detail(model, z).value


def gamma_rate(model: JointStepModel, tol: float = 1e-8, max_doublings: int = 200) -> GammaResult:
    """Bisection for the edge of {z > 0 : mu(z) < 1}, bracket grown geometrically from z = 1."""
    lo = hi = 1.0
    below = mu(model, 1.0) < 1.0
    for _ in range(max_doublings):
        if below:
            hi *= 2.0
            if mu(model, hi) >= 1.0:
                break
            lo = hi
        else:
            lo /= 2.0
            if mu(model, lo) < 1.0:
                break
            hi = lo
    else:
        raise BracketError(f"no finite bracket for gamma after {max_doublings} doublings")
    bracket = (lo, hi)
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mu(model, mid) < 1.0:
            lo = mid
        else:
            hi = mid
        it += 1
    z = 0.5 * (lo + hi)
    md = mu_detail(model, z)
    return GammaResult(z, md.value, md.s, bracket, it)
