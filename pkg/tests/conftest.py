import warnings

import pytest
from hypothesis import HealthCheck, settings

from prwlab.dist import JointStepModel
from prwlab.errors import TailMassWarning
from prwlab.renewal import build_tables

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


ALL_FAMILIES = [
    JointStepModel.gem(),
    JointStepModel.exp_exp(1, 1),
    JointStepModel.det_det(1, 0.5),
    JointStepModel.exp_det(1, 0.5),
    JointStepModel.pareto_det(1.5, 1, 1),
    JointStepModel.uniform_det(0.5, 1.5, 1),
]
FINITE_VARIANCE = [m for m in ALL_FAMILIES if m.family != "ParetoDet"]
NONLATTICE = [m for m in ALL_FAMILIES if m.family not in ("DetDet", "ParetoDet")]


def tables(model, h=1e-2, T=50.0, jmax=1):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TailMassWarning)
        return build_tables(model, h, T, jmax)


_CACHE: dict = {}


def cached_tables(model, h=1e-2, T=201.0, jmax=1):
    """Tables shared across test modules; a larger jmax reuses nothing, it just rebuilds."""
    key = (model.model_id, h, T, jmax)
    if key not in _CACHE:
        _CACHE[key] = tables(model, h, T, jmax)
    return _CACHE[key]


@pytest.fixture(scope="session")
def gem_tables():
    return tables(JointStepModel.gem(), 1e-2, 50.0, 6)


@pytest.fixture(scope="session")
def expexp_tables():
    return tables(JointStepModel.exp_exp(1, 1), 1e-2, 50.0, 4)
