import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import optimize

from prwlab.dist import JointStepModel
from prwlab.errors import BracketError, DomainError, UnimodalityWarning
from prwlab.gamma import gamma_rate, mu, mu_detail

from conftest import ALL_FAMILIES

DET_ETA = [m for m in ALL_FAMILIES if "c_eta" in m.params]
SMOOTH = [JointStepModel.gem(), JointStepModel.exp_exp(1, 1), JointStepModel.exp_exp(1, 2),
          JointStepModel.exp_exp(2, 0.5)]


def mu_oracle(model, z):
    """Independent route: bounded Brent minimisation on overlapping windows of log s."""
    def f(u):
        s = math.exp(u)
        return z * s + model.eta.log_laplace(s) - math.log(model.xi.one_minus_laplace(s))

    best = min(
        (optimize.minimize_scalar(f, bounds=(a, a + 3), method="bounded", options={"xatol": 1e-12})
         for a in np.arange(-14, 14, 3)),
        key=lambda r: r.fun,
    )
    return math.exp(best.fun)


# values from brentq on the oracle above
FROZEN_GAMMA = {
    "ExpExp(rate_xi=1,rate_eta=2)": 0.21887926938342434,
    "ExpExp(rate_xi=2,rate_eta=0.5)": 0.4823619314241981,
}


def test_gem_mu_examples():
    assert mu(JointStepModel.gem(), 1.0) == pytest.approx(math.e, abs=1e-6)
    assert mu(JointStepModel.gem(), math.exp(-1)) == pytest.approx(1.0, abs=1e-6)


def test_gem_gamma():
    r = gamma_rate(JointStepModel.gem())
    assert r.gamma == pytest.approx(math.exp(-1), abs=1e-6)
    lo, hi = r.bracket
    assert mu(JointStepModel.gem(), lo) < 1 <= mu(JointStepModel.gem(), hi)


@pytest.mark.parametrize("model", SMOOTH, ids=lambda m: m.model_id)
def test_continuous_mu_hits_one_at_gamma(model):
    r = gamma_rate(model)
    assert r.mu_at_gamma == pytest.approx(1.0, abs=1e-7)
    assert r.iterations > 0 and r.inner_minimizer_s > 0
    if model.model_id in FROZEN_GAMMA:
        assert r.gamma == pytest.approx(FROZEN_GAMMA[model.model_id], abs=1e-7)


@pytest.mark.parametrize("model", DET_ETA, ids=lambda m: m.family)
def test_deterministic_eta_gamma_is_the_jump(model):
    # with eta = c fixed, mu vanishes for z < c and is at least 1 beyond, so gamma = c
    c = model.params["c_eta"]
    r = gamma_rate(model)
    assert r.gamma == pytest.approx(c, abs=1e-7)
    assert mu(model, c * (1 - 1e-3)) < 1e-200  # the infimum is approached as s -> inf
    assert mu(model, c * (1 + 1e-3)) >= 1.0
    assert r.mu_at_gamma <= 1.0


@given(st.sampled_from(ALL_FAMILIES), st.floats(0.05, 5.0))
def test_mu_matches_oracle(model, z):
    # at z = c_eta the infimum sits at s = inf and each route reports its own cut-off
    assume(abs(z - model.params.get("c_eta", -1.0)) > 1e-3)
    assert mu(model, z) == pytest.approx(mu_oracle(model, z), rel=1e-9, abs=1e-300)


@pytest.mark.parametrize("model", ALL_FAMILIES, ids=lambda m: m.family)
def test_mu_nondecreasing_and_limits(model):
    zs = np.geomspace(1e-3, 50, 60)
    vals = [mu(model, z) for z in zs]
    assert np.all(np.diff(vals) >= -1e-12 * np.abs(vals[1:]))
    assert mu(model, 1e-4) < 0.5 and mu(model, 1e4) > 2


@pytest.mark.parametrize("model", ALL_FAMILIES, ids=lambda m: m.family)
def test_gamma_is_finite_positive(model):
    assert 0 < gamma_rate(model).gamma < math.inf


@pytest.mark.parametrize("model", [m for m in ALL_FAMILIES if m.family != "GEM"], ids=lambda m: m.family)
@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scaling_covariance(model, c):
    assert gamma_rate(model.scaled(c)).gamma == pytest.approx(c * gamma_rate(model).gamma, abs=1e-6)


@pytest.mark.parametrize("model", ALL_FAMILIES, ids=lambda m: m.family)
def test_inner_objective_is_unimodal(model):
    with warnings.catch_warnings():
        warnings.simplefilter("error", UnimodalityWarning)
        for z in (0.1, 0.7, 1.3, 4.0):
            assert mu_detail(model, z).unimodal


def test_errors():
    with pytest.raises(DomainError):
        mu(JointStepModel.gem(), 0.0)
    with pytest.raises(BracketError):
        gamma_rate(JointStepModel.exp_exp(1, 1).scaled(100.0), max_doublings=3)
