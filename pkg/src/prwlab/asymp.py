"""Asymptotic predictors for V_j and for convolution powers, in log space.

Every predictor returns the natural log of its value so that t^j / j! is
never formed directly (it overflows a double near j = 170).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .dist import JointStepModel, _open_uniform
from .errors import DomainError
from .gridfn import GridFunction, nodes_to

LABELS = ("elementary", "exp_correction", "second_order", "third_order", "ell_power", "key_renewal", "blackwell")


@dataclass(frozen=True)
class Prediction:
    log_value: float
    label: str
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in LABELS:
            raise DomainError(f"unknown predictor label {self.label!r}")

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value < 709 else math.inf


@dataclass(frozen=True)
class RatioRecord:
    ratio: float
    log_gap: float


def _log_elem(j, t, m):
    return j * math.log(t / m) - math.lgamma(j + 1)


def _check_jt(j, t):
    if j < 1:
        raise DomainError(f"generation index must be >= 1, got {j}")
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")


def predict_elementary(j: int, t: float, m: float) -> Prediction:
    _check_jt(j, t)
    return Prediction(_log_elem(j, t, m), "elementary", {"j": j, "t": t, "m": m})


def predict_exp_correction(j: int, t: float, m: float, gamma0: float) -> Prediction:
    _check_jt(j, t)
    lv = _log_elem(j, t, m) + gamma0 * m * j * j / t
    return Prediction(lv, "exp_correction", {"j": j, "t": t, "m": m, "gamma0": gamma0})


def predict_second_order(j: int, t: float, m: float, gamma0: float) -> Prediction:
    """t^j/(j! m^j) + gamma0 j t^(j-1)/((j-1)! m^(j-1)).

    When gamma0 < 0 the sum can be nonpositive for small t; the log value is
    then -inf and ``inputs['sign']`` records the sign of the sum.
    """
    _check_jt(j, t)
    inputs = {"j": j, "t": t, "m": m, "gamma0": gamma0}
    lead = _log_elem(j, t, m)
    if gamma0 == 0:
        return Prediction(lead, "second_order", inputs | {"sign": 1.0})
    corr = math.log(abs(gamma0) * j) + (j - 1) * math.log(t / m) - math.lgamma(j)
    lv, sign = logsumexp([lead, corr], b=[1.0, math.copysign(1.0, gamma0)], return_sign=True)
    if sign <= 0:
        return Prediction(-math.inf, "second_order", inputs | {"sign": float(sign)})
    return Prediction(float(lv), "second_order", inputs | {"sign": 1.0})


def predict_third_order(j: int, t: float, a: float, gamma0: float, gamma1: float) -> Prediction:
    """log of (a t)^j exp(gamma0 j^2/t + (gamma1/2 - gamma0^2) j^3/t^2).

    No 1/j! here: this approximates E(at - S_j)_+^j itself, with gamma0 = -E S_1 and
    gamma1 = E S_1^2 for the ladder walk.
    """
    _check_jt(j, t)
    lv = j * math.log(a * t) + gamma0 * j * j / t + (gamma1 / 2 - gamma0 * gamma0) * j**3 / t**2
    return Prediction(lv, "third_order", {"j": j, "t": t, "a": a, "gamma0": gamma0, "gamma1": gamma1})


# ---- the linear part l(t) = (a t + gamma0)_+ and its powers

def log_ell_conv_power(a: float, gamma0: float, j: int, t):
    """log of (a t + gamma0 j)_+^j / j!; -inf off the support."""
    t = np.asarray(t, dtype=float)
    x = a * t + gamma0 * j
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, j * np.log(np.where(x > 0, x, 1.0)) - gammaln(j + 1), -np.inf)
    return out if out.ndim else float(out)


def ell_conv_power(a: float, gamma0: float, j: int, t):
    if j < 0:
        raise DomainError("convolution power must be nonnegative")
    if j == 0:
        out = np.where(np.asarray(t) >= 0, 1.0, 0.0)
        return out if out.ndim else float(out)
    return np.exp(log_ell_conv_power(a, gamma0, j, t))


def ell_grid(a: float, gamma0: float, h: float, T: float, jmax: int = 1) -> GridFunction:
    """Samples of l on a grid long enough that its jmax-th power reaches T.

    For gamma0 > 0 the support of l starts at -gamma0/a < 0 and the grid
    starts at the node at or below it; each power of l then starts jmax
    times further left, which is why the sampled range is stretched.
    """
    lo = -gamma0 / a
    start = min(0, int(math.floor(lo / h + 1e-9)))
    hi = T - jmax * start * h
    k = np.arange(start, nodes_to(hi, h) + 1)
    vals = np.maximum(a * k * h + gamma0, 0.0)
    return GridFunction(h, vals, start=start, monotone=True, name="ell")


# ---- two-sided envelopes W_j^- <= f_j <= W_j^+

def wj_envelopes(a: float, C: float, alpha: float, jmax: int, t):
    """Explicit bounds a^j t^j/j! -/+ sum_{i<j} binom(j,i) a^i C^(j-i) (t+1)^(alpha(j-i)+i)/i!.

    Returns (lower, upper) of shape (jmax + 1,) + shape(t); row j holds the
    bounds for f_j with row 0 equal to 1. Lower bounds are clamped at 0.
    """
    if C < 1:
        raise DomainError(f"envelope constant C must be >= 1, got {C}")
    if not 0 <= alpha < 1:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("envelopes are defined for t >= 0")
    shape = (jmax + 1,) + t.shape
    lower = np.ones(shape)
    upper = np.ones(shape)
    lt1 = np.log1p(t)
    with np.errstate(divide="ignore"):
        lt = np.log(t)
    la, lC = math.log(a), math.log(C)
    for j in range(1, jmax + 1):
        lead = j * (la + lt) - math.lgamma(j + 1)
        i = np.arange(j)
        lbin = math.lgamma(j + 1) - gammaln(i + 1) - gammaln(j - i + 1)
        terms = (lbin + i * la + (j - i) * lC - gammaln(i + 1))[:, None] \
            + (alpha * (j - i) + i)[:, None] * lt1.reshape(1, -1)
        lsum = logsumexp(terms, axis=0).reshape(t.shape)
        upper[j] = np.exp(np.logaddexp(lead, lsum))
        # (e^lead - e^lsum)_+ evaluated without cancellation blow-up
        with np.errstate(over="ignore", invalid="ignore"):
            diff = np.where(lead > lsum, np.exp(lead) * -np.expm1(lsum - lead), 0.0)
        lower[j] = np.nan_to_num(diff, nan=0.0)
    return lower, upper


# ---- the ladder identity f^{*j}(t) = E(at - S_j)_+^j / j!

def _marginal(ladder):
    return ladder.xi if isinstance(ladder, JointStepModel) else ladder


def fj_expectation_mc(ladder, a: float, j: int, t: float, n: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of E(at - S_j)_+^j / j!.

    ``ladder`` is either a marginal law or a JointStepModel whose xi marginal
    is used as the law of the ladder step S_1.
    """
    _check_jt(j, t)
    if n < 2:
        raise DomainError("need at least two replicas for a standard error")
    law = _marginal(ladder)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    S = np.zeros(n)
    for _ in range(j):
        S += law.ppf(_open_uniform(rng, n))
    x = a * t - S
    pos = x > 0
    logs = np.full(n, -np.inf)
    logs[pos] = j * np.log(x[pos]) - math.lgamma(j + 1)
    if not pos.any():
        return 0.0, 0.0
    # scale by the largest sample before leaving log space
    top = logs.max()
    w = np.exp(logs - top)
    mean = w.mean()
    sd = w.std(ddof=1)
    return float(math.exp(top) * mean), float(math.exp(top) * sd / math.sqrt(n))


def ladder_f_grid(ladder, a: float, h: float, T: float) -> GridFunction:
    """f(t) = a t - int_0^{a t} (1 - K(y)) dy for the ladder law K, sampled on [0, T]."""
    law = _marginal(ladder)
    k = np.arange(nodes_to(T, h) + 1)
    x = a * k * h
    vals = x - np.asarray(law.integrated_tail(x), dtype=float)
    return GridFunction(h, vals, monotone=True, name="f")


# ---- key renewal and comparisons

def predict_key_renewal(integral_f: float, m: float, v_prev_at_t: float) -> float:
    if integral_f < 0:
        raise DomainError("integral of f must be nonnegative")
    return integral_f / m * v_prev_at_t


def key_renewal_prediction(integral_f: float, m: float, v_prev_at_t: float, j: int, t: float,
                           label: str = "key_renewal") -> Prediction:
    val = predict_key_renewal(integral_f, m, v_prev_at_t)
    lv = math.log(val) if val > 0 else -math.inf
    return Prediction(lv, label, {"j": j, "t": t, "m": m, "integral_f": integral_f})


def compare(table_value: float, prediction: Prediction) -> RatioRecord:
    if not table_value > 0:
        raise DomainError(f"table value must be positive, got {table_value}")
    gap = math.log(table_value) - prediction.log_value
    return RatioRecord(math.exp(gap) if gap < 709 else math.inf, gap)


def schedule(t: float, p: float) -> int:
    """j(t) = floor(t^p), at least 1."""
    return max(1, int(math.floor(t**p + 1e-12)))
