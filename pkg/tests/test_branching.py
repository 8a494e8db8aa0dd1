import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from prwlab import rng as prng
from prwlab.branching import (
    SimConfig,
    SimResult,
    clt_statistic,
    coupled_counts,
    leftmost_birth,
    simulate_ensemble,
    simulate_generations,
    simulate_prw_points,
)
from prwlab.dist import JointStepModel
from prwlab.errors import DomainError

from conftest import ALL_FAMILIES, cached_tables

GEM = JointStepModel.gem()
DD = JointStepModel.det_det(1, 0.5)


def roots(seed, n):
    return np.array([prng.tree_key(seed, r) for r in range(n)], dtype=np.uint64)


def reference_first_generation(model, key, t):
    """Plain numpy walk of the same per-child hash stream."""
    keys = np.array([key], dtype=np.uint64)
    out, S, i = [], 0.0, 0
    while S <= t:
        i += 1
        idx = np.array([i])
        u1 = prng.to_uniform(prng.mix(keys, idx, prng.XI))[0]
        u2 = prng.to_uniform(prng.mix(keys, idx, prng.ETA))[0]
        xi, eta = model.pairs_from_uniforms(u1, u2)
        if S + eta <= t:
            out.append(float(S + eta))
        S += float(xi)
    return out


# ---- the compiled hash against the numpy reference

@given(st.sampled_from(ALL_FAMILIES), st.integers(0, 2**64 - 1), st.floats(0.0, 30.0))
def test_first_generation_matches_reference(model, key, t):
    got = simulate_prw_points(model, t, key)
    ref = sorted(reference_first_generation(model, key, t))
    assert got == pytest.approx(ref, rel=1e-15, abs=0)


# ---- hand-enumerated examples

def test_detdet_points():
    assert simulate_prw_points(DD, 2.7, 0) == [0.5, 1.5, 2.5]
    assert simulate_prw_points(DD, 0.3, 0) == []


def test_detdet_generations():
    counts, height, tr = simulate_generations(DD, 1.2, 3, 0)
    assert counts.tolist() == [1, 1, 0] and height == 3 and not tr


def test_empty_first_generation():
    for model in (DD, JointStepModel.exp_det(1, 0.5), JointStepModel.uniform_det(0.5, 1.5, 1)):
        counts, height, _ = simulate_generations(model, 0.4, 2, 11)
        assert counts[0] == 0 and height == 1


def test_detdet_leftmost():
    # each generation adds one eta = 0.5 at best: the first child comes before any xi step
    assert leftmost_birth(DD, 4, 0) == (2.0, False)
    assert leftmost_birth(DD, 1, 0) == (0.5, False)


@pytest.mark.parametrize("model", ALL_FAMILIES, ids=lambda m: m.family)
def test_leftmost_one_is_smallest_point(model):
    for key in range(20):
        pts = simulate_prw_points(model, 100.0, key)
        if pts:
            assert leftmost_birth(model, 1, key)[0] == pts[0]


def test_domain_errors():
    with pytest.raises(DomainError):
        simulate_prw_points(GEM, -1.0, 0)
    with pytest.raises(DomainError):
        simulate_generations(GEM, 1.0, 0, 0)
    with pytest.raises(DomainError):
        leftmost_birth(GEM, 0, 0)
    with pytest.raises(DomainError):
        SimConfig(GEM, 1.0, 2, replicas=0)
    with pytest.raises(DomainError):
        coupled_counts(GEM, [], 2, [1])


def test_node_cap_truncates():
    counts, _, tr = simulate_generations(GEM, 12.0, 3, 5, max_nodes=1000)
    assert tr and counts.sum() <= 1000
    b, tr = leftmost_birth(GEM, 30, 5, max_nodes=50)
    assert tr and math.isfinite(b)


# ---- ensemble plumbing

def test_ensemble_determinism_and_single_replica():
    cfg = SimConfig(GEM, 4.0, 3, replicas=50, master_seed=9)
    a, b = simulate_ensemble(cfg), simulate_ensemble(cfg)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.heights, b.heights)
    one = simulate_ensemble(SimConfig(GEM, 4.0, 3, replicas=1, master_seed=9))
    c, h, _ = simulate_generations(GEM, 4.0, 3, prng.tree_key(9, 0))
    assert one.counts[0].tolist() == c.tolist() and one.heights[0] == h
    np.testing.assert_array_equal(one.counts[0], a.counts[0])


def test_ensemble_independent_of_workers():
    base = SimConfig(GEM, 2.0, 2, replicas=5000, master_seed=3)
    serial = simulate_ensemble(base)
    pooled = simulate_ensemble(SimConfig(GEM, 2.0, 2, replicas=5000, master_seed=3, workers=2))
    np.testing.assert_array_equal(serial.counts, pooled.counts)
    np.testing.assert_array_equal(serial.heights, pooled.heights)


def test_untracked_heights_keep_counts():
    a = simulate_ensemble(SimConfig(GEM, 5.0, 2, replicas=200, master_seed=1))
    b = simulate_ensemble(SimConfig(GEM, 5.0, 2, replicas=200, master_seed=1, track_height=False))
    np.testing.assert_array_equal(a.counts, b.counts)
    assert b.heights is None


@pytest.mark.parametrize("model", ALL_FAMILIES, ids=lambda m: m.family)
def test_counts_vanish_beyond_height(model):
    res = simulate_ensemble(SimConfig(model, 4.0, 12, replicas=300, master_seed=2))
    assert not res.truncated and np.all(res.heights >= 1)
    for c, h in zip(res.counts, res.heights):
        assert np.all(c[h - 1 :] == 0) and np.all(c[: h - 1] > 0)


# ---- coupling across horizons

@pytest.mark.parametrize("model", ALL_FAMILIES, ids=lambda m: m.family)
def test_counts_monotone_in_t(model):
    c, d, tr = coupled_counts(model, [1.0, 2.0, 3.5, 5.0], 6, roots(4, 200))
    assert not tr.any()
    assert np.all(np.diff(c, axis=1) >= 0) and np.all(np.diff(d, axis=1) >= 0)


def test_nested_horizons_equal_separate_runs():
    r = roots(8, 30)
    joint, _, _ = coupled_counts(GEM, [3.0, 6.0], 4, r)
    alone, _, _ = coupled_counts(GEM, [3.0], 4, r)
    np.testing.assert_array_equal(joint[:, 0], alone[:, 0])


@pytest.mark.parametrize("model,t", [(GEM, 6.0), (JointStepModel.exp_det(1, 0.5), 6.0),
                                     (JointStepModel.uniform_det(0.5, 1.5, 1), 8.0)],
                         ids=["GEM", "ExpDet", "UniformDet"])
def test_height_leftmost_duality(model, t):
    # {H(t) > n} = {B(n) <= t} on the same trees, n running one past the deepest height
    keys = roots(21, 100)
    _, deepest, tr = coupled_counts(model, [t], 1, keys)
    assert not tr.any()
    H = deepest[:, 0] + 1
    for r, key in enumerate(keys):
        for n in range(1, int(H.max()) + 2):
            b, trunc = leftmost_birth(model, n, int(key))
            assert not trunc
            assert (H[r] > n) == (b <= t)


# ---- means against the renewal tables

def test_expexp_first_generation_mean():
    c, _, _ = coupled_counts(JointStepModel.exp_exp(1, 1), [20.0], 1, roots(5, 10**5), depth=1)
    n1 = c[:, 0, 0]
    v = cached_tables(JointStepModel.exp_exp(1, 1), 1e-2, 21.0, 1).V.at(20.0)
    assert abs(n1.mean() - v) <= 3 * n1.std(ddof=1) / math.sqrt(n1.size)


def test_gem_third_generation_mean():
    c, _, _ = coupled_counts(GEM, [8.0], 3, roots(6, 10**5), depth=3)
    n3 = c[:, 0, 2]
    assert abs(n3.mean() - 8**3 / 6) <= 3 * n3.std(ddof=1) / math.sqrt(n3.size)


SUPPLEMENTARY = [JointStepModel.exp_det(1, 0.5), JointStepModel.uniform_det(0.5, 1.5, 1),
                 JointStepModel.pareto_det(1.5, 1, 1)]


@pytest.mark.parametrize("model", SUPPLEMENTARY, ids=lambda m: m.family)
def test_means_match_tables_reduced_replicas(model):
    tb = cached_tables(model, 1e-2, 11.0, 4)
    c, _, _ = coupled_counts(model, [5.0, 10.0], 4, roots(12, 2 * 10**4), depth=4)
    for h, t in enumerate((5.0, 10.0)):
        for j in range(1, 5):
            x = c[:, h, j - 1]
            assert abs(x.mean() - tb.V_at(j, t)) <= 3 * x.std(ddof=1) / math.sqrt(x.size) + 1e-3


def test_detdet_counts_are_the_tables():
    tb = cached_tables(DD, 0.5, 11.0, 4)
    c, _, _ = coupled_counts(DD, [5.0, 10.0], 4, roots(0, 3), depth=4)
    for h, t in enumerate((5.0, 10.0)):
        assert c[0, h].tolist() == [tb.V_at(j, t) for j in range(1, 5)]


# ---- heights and leftmost births

def test_gem_height_growth_at_t8():
    res = simulate_ensemble(SimConfig(GEM, 8.0, 1, replicas=10**5, master_seed=0))
    assert not res.truncated
    assert abs(res.heights.mean() / 8.0 / math.e - 1) <= 0.15


def test_gem_leftmost_decreases_towards_gamma():
    keys = roots(7, 1000)
    means = [np.mean([leftmost_birth(GEM, n, int(k))[0] for k in keys]) / n for n in (5, 10, 20)]
    assert means[0] > means[1] > means[2] > math.exp(-1)


@pytest.mark.xfail(strict=True, reason="finite-n mean of B(20)/20 is about 0.424, above the +15% edge 0.4231")
def test_gem_leftmost_band_at_20():
    keys = roots(0, 1000)
    mean = np.mean([leftmost_birth(GEM, 20, int(k))[0] for k in keys]) / 20
    assert abs(mean / math.exp(-1) - 1) <= 0.15


# ---- CLT statistic

def test_clt_statistic_centering_and_errors():
    tb = cached_tables(GEM, 1e-2, 11.0, 3)
    v = np.array([tb.V_at(j, 10.0) for j in (1, 2, 3)])
    res = SimResult(np.vstack([v, v + 1.0]), None, np.zeros(2, bool))
    z = clt_statistic(res, tb, 3, 10.0, 1.0, 1.0)
    assert z[0] == 0.0
    assert z[1] == pytest.approx(math.sqrt(3) * 2 / math.sqrt(10.0**5))
    with pytest.raises(DomainError):
        clt_statistic(res, tb, 4, 10.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        clt_statistic(res, tb, 2, 10.0, 0.0, 1.0)
