import math

import numpy as np
import pytest
from scipy import integrate, stats

from latskg.construction import random_generator
from latskg.errors import InvalidDistribution, RankDeficientCode
from latskg.flatness import quotient_capacity
from latskg.resolvability import (ModChannelSpec, channel_capacity, divergence_by_quadrature, psi,
                                  psi_block, psi_curvature_at_zero, psi_second_difference,
                                  rate_gap, renyi_entropy, resolvability_divergence,
                                  resolvability_exponent,
                                  transition_regularity_gap)


def periodic(period, sigma, y, K=40):
    k = np.arange(-K, K + 1)
    return float(np.sum(np.exp(-((y + period * k) ** 2) / (2 * sigma ** 2)))) / (math.sqrt(2 * math.pi) * sigma)


def psi_oracle(alpha, p, sigma, rho):
    """Direct adaptive quadrature of the defining integral."""
    P = alpha * p

    def out(y):
        return sum(periodic(P, sigma, y - alpha * x) for x in range(p)) / p

    total = 0.0
    for x in range(p):
        f = lambda y: periodic(P, sigma, y - alpha * x) ** (1 + rho) * out(y) ** (-rho)
        total += integrate.quad(f, 0, P, limit=400, epsabs=1e-13, points=[alpha * x])[0] / p
    return math.log(total)


def capacity_oracle(alpha, p, sigma):
    P = alpha * p
    f = lambda y: periodic(P, sigma, y) * math.log(periodic(P, sigma, y) * p / sum(
        periodic(P, sigma, y - alpha * x) for x in range(p)))
    return integrate.quad(f, 0, P, limit=400, epsabs=1e-13, points=[0.0])[0]


def test_renyi_examples():
    for rho in (0.1, 1.0):
        assert renyi_entropy(np.full(8, 1 / 8), rho) == pytest.approx(math.log(8), abs=1e-12)
    assert renyi_entropy([1.0, 0.0], 0.5) == pytest.approx(0.0, abs=1e-15)
    assert renyi_entropy([0.25, 0.75], 1.0) == pytest.approx(-math.log(0.625), abs=1e-6)
    with pytest.raises(InvalidDistribution):
        renyi_entropy([0.5, 0.6], 1.0)
    with pytest.raises(ValueError):
        renyi_entropy([1.0], 0.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModChannelSpec(1.0, 4, 0.5)
    with pytest.raises(ValueError):
        ModChannelSpec(1.0, 3, 0.0)


def test_psi_matches_quadrature():
    spec = ModChannelSpec(1.0, 3, 0.4)
    for rho in (0.2, 0.7, 1.0):
        assert psi(spec, rho) == pytest.approx(psi_oracle(1.0, 3, 0.4, rho), rel=1e-8)
    assert psi(spec, 0.0) == 0.0
    with pytest.raises(ValueError):
        psi(spec, 1.5)


def test_capacity_and_psi_limit():
    spec = ModChannelSpec(1.0, 3, 0.4)
    c = channel_capacity(spec)
    assert c == pytest.approx(capacity_oracle(1.0, 3, 0.4), rel=1e-9)
    assert psi(spec, 1e-4) / 1e-4 == pytest.approx(c, rel=1e-3)
    q = quotient_capacity(spec.fine, spec.coarse, 0.4, 50_000, np.random.default_rng(0))
    assert abs(psi(spec, 1e-4) / 1e-4 - q.direct.value) <= 1e-3 * c + 3 * q.direct.ci


def test_regular_channel():
    assert transition_regularity_gap(ModChannelSpec(0.7, 5, 0.3)) < 1e-12


def test_block_additivity():
    spec = ModChannelSpec(1.0, 2, 0.35)
    for rho in (0.3, 1.0):
        assert psi_block(spec, rho, 3) == pytest.approx(3 * psi(spec, rho), rel=1e-9)


def test_psi_convex_increasing():
    spec = ModChannelSpec(1.0, 3, 0.5)
    rhos = np.linspace(0.0, 1.0, 11)
    v = np.array([psi(spec, float(r)) for r in rhos])
    d = np.diff(v)
    assert np.all(d > 0) and np.all(np.diff(d) > -1e-12)


def test_curvature():
    spec = ModChannelSpec(1.0, 3, 0.7)
    c = psi_curvature_at_zero(spec)
    assert c >= 0
    assert psi_second_difference(spec) == pytest.approx(c, rel=1e-2)
    assert psi_curvature_at_zero(ModChannelSpec(1.0, 2, 0.01)) < 1e-6


def test_rate_gap_examples():
    spec = ModChannelSpec(1.0, 3, 0.5)
    for n in (1, 4):
        for gamma, want in ((2 * math.pi * math.e, 0.0), (2 * math.pi, 0.5),
                            (math.pi * math.e, 0.5 * math.log(2))):
            v = (gamma * spec.sigma ** 2) ** (n / 2)
            g = rate_gap(spec, n, v)
            assert g.delta0 == pytest.approx(want, abs=1e-12)
            assert g.gamma == pytest.approx(gamma)
    assert 0.5 * math.log(2) == pytest.approx(0.3466, abs=1e-4)
    with pytest.raises(ValueError):
        rate_gap(spec, 2, 0.0)


def test_divergence_extremes_and_middle():
    spec = ModChannelSpec(1.0, 3, 0.35)
    rng = np.random.default_rng(5)
    full = resolvability_divergence(spec, 2, np.eye(2, dtype=np.int64), 10_000, rng)
    assert full.value == 0.0
    none = resolvability_divergence(spec, 2, None, 40_000, rng)
    c = channel_capacity(spec)
    assert abs(none.value - 2 * c) <= 3 * none.ci
    code = np.array([[1, 2]])
    mid = resolvability_divergence(spec, 2, code, 40_000, rng)
    exact = divergence_by_quadrature(spec, code)
    assert 0 < exact < 2 * c
    assert abs(mid.value - exact) <= 3 * mid.ci
    # the all-zero code has a single codeword, so the divergence is the full capacity
    assert divergence_by_quadrature(spec, np.array([[0, 0]])) == pytest.approx(2 * c, rel=1e-8)


def test_rank_deficient_code():
    with pytest.raises(RankDeficientCode):
        resolvability_divergence(ModChannelSpec(1.0, 3, 0.5), 2, np.array([[1, 1], [2, 2]]), 1000)


def test_markov_tail():
    spec = ModChannelSpec(2 * math.sqrt(4) / 11, 11, 0.5)
    rng = np.random.default_rng(7)
    vals = [resolvability_divergence(spec, 4, random_generator(4, 2, 11, rng).T, 2000, rng).value
            for _ in range(20)]
    mean = np.mean(vals)
    above = int(np.sum(np.array(vals) > 2 * mean))
    assert stats.binomtest(above, 20).proportion_ci(0.95).low <= 0.5


def test_exponent_grid():
    spec = ModChannelSpec(1.0, 3, 0.5)
    c = channel_capacity(spec)
    rhos = np.linspace(0.05, 1.0, 20)
    rho, best = resolvability_exponent(spec, c + 0.3, rhos)
    assert best > 0 and rho in rhos
    assert all(best >= r * (c + 0.3) - psi(spec, float(r)) - 1e-15 for r in rhos)
    # below capacity no rho gives a positive exponent
    assert resolvability_exponent(spec, 0.9 * c)[1] < 0
