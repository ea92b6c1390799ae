"""The regular mod-(aZ / apZ) channel, its psi exponent and code resolvability.

The channel takes ``x`` in ``{0, a, ..., (p-1) a}`` and outputs
``y = x + noise mod apZ``; its transition density is
``W_x(y) = f_{sigma,apZ}(y - x)`` and under uniform input the output density
is ``f_{sigma,aZ}(y) / p``.  Integrals over one period are smooth and
periodic, so the trapezoid rule converges geometrically; the grid is doubled
until two passes agree.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import special

from .construction import construction_a, is_prime, rank_mod_p
from .errors import InvalidDistribution, QuadratureFailure, RankDeficientCode
from .estimates import Estimate, as_generator, map_chunks, mean_estimate
from .gaussian import _log_sum_1d, folded_log_ratio
from .lattice import Lattice

_MAX_GRID = 1 << 20


@dataclass(frozen=True)
class ModChannelSpec:
    alpha: float
    p: int
    sigma: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.sigma > 0):
            raise ValueError("alpha and sigma must be positive")
        if not is_prime(int(self.p)):
            raise ValueError(f"p = {self.p} is not prime")

    @property
    def fine(self):
        return Lattice(np.array([[self.alpha]]))

    @property
    def coarse(self):
        return Lattice(np.array([[self.alpha * self.p]]))

    @property
    def period(self):
        return self.alpha * self.p


def _log_transition(spec, y):
    """``log W_0(y)``: the coarse periodic density."""
    return _log_sum_1d(spec.period, spec.sigma, y) - math.log(math.sqrt(2 * math.pi) * spec.sigma)


def _log_output(spec, y):
    """``log (W o U)(y)``: the fine periodic density over ``p``."""
    return (_log_sum_1d(spec.alpha, spec.sigma, y)
            - math.log(math.sqrt(2 * math.pi) * spec.sigma) - math.log(spec.p))


def _converge(spec, evaluate, tol):
    """Double the grid (a multiple of ``p``) until ``evaluate`` stabilises."""
    m = 64 * spec.p
    prev = None
    while m <= _MAX_GRID:
        y = spec.period * np.arange(m) / m
        val = evaluate(y, m)
        if prev is not None and np.all(np.abs(val - prev) <= tol * np.maximum(1.0, np.abs(val))):
            return val
        prev = val
        m *= 2
    raise QuadratureFailure("periodic trapezoid rule did not reach tolerance")


def _psi_value(spec, rho, tol=1e-13):
    def evaluate(y, m):
        lw = _log_transition(spec, y)
        lq = _log_output(spec, y)
        step = m // spec.p
        logs = [special.logsumexp((1 + rho) * np.roll(lw, x * step) - rho * lq)
                for x in range(spec.p)]
        return special.logsumexp(logs) - math.log(spec.p) + math.log(spec.period / m)

    return float(_converge(spec, evaluate, tol))


def psi(spec, rho):
    """``psi(rho) = log sum_x p(x) int W_x^{1+rho} (W o p)^{-rho}`` for uniform ``p``."""
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    if rho == 0:
        return 0.0
    return _psi_value(spec, rho)


def psi_block(spec, rho, n, m=None):
    """``psi`` of the memoryless extension ``W^n`` evaluated on an n-dimensional grid.

    Nothing is factorised: the product densities are formed on the full
    tensor grid and every one of the ``p^n`` inputs is summed, so agreement
    with ``n psi(rho)`` is a genuine check of block additivity.
    """
    if n > 3:
        raise ValueError("block evaluation is limited to n <= 3")
    m = m or spec.p * 32
    if m % spec.p:
        raise ValueError("grid size must be a multiple of p")
    y = spec.period * np.arange(m) / m
    lw1 = _log_transition(spec, y)
    lq1 = _log_output(spec, y)
    shape = (m,) * n
    lw = np.zeros(shape)
    lq = np.zeros(shape)
    for axis in range(n):
        view = [1] * n
        view[axis] = m
        lw = lw + lw1.reshape(view)
        lq = lq + lq1.reshape(view)
    step = m // spec.p
    logs = []
    for x in np.ndindex(*([spec.p] * n)):
        shifted = np.roll(lw, tuple(xi * step for xi in x), axis=tuple(range(n)))
        logs.append(special.logsumexp((1 + rho) * shifted - rho * lq))
    cell = n * math.log(spec.period / m)
    return float(special.logsumexp(logs) - n * math.log(spec.p) + cell)


def channel_capacity(spec):
    """Mutual information under uniform input, ``C(aZ / apZ, sigma^2)``, by quadrature."""
    def evaluate(y, m):
        lw = _log_transition(spec, y)
        return np.sum(np.exp(lw) * (lw - _log_output(spec, y))) * spec.period / m

    return float(_converge(spec, evaluate, 1e-13))


def psi_curvature_at_zero(spec):
    """``psi''(0)`` as the variance of the information density under ``W_0``."""
    def evaluate(y, m):
        lw = _log_transition(spec, y)
        info = lw - _log_output(spec, y)
        w = np.exp(lw) * spec.period / m
        mean = np.sum(w * info)
        return np.array([np.sum(w * info * info) - mean * mean])

    return max(float(_converge(spec, evaluate, 1e-12)[0]), 0.0)


def psi_second_difference(spec, h=1e-3):
    """Central second difference of ``psi`` at 0 (``psi(-h)`` is evaluated directly)."""
    return (_psi_value(spec, h) - 2 * 0.0 + _psi_value(spec, -h)) / (h * h)


def transition_regularity_gap(spec, m=None):
    """Largest gap between ``W_x`` and the shifted ``W_0`` over a grid (should be ~0)."""
    m = m or spec.p * 64
    y = spec.period * np.arange(m) / m
    w0 = np.exp(_log_transition(spec, y))
    gaps = []
    for x in range(spec.p):
        wx = np.exp(_log_transition(spec, y - x * spec.alpha))
        gaps.append(np.max(np.abs(wx - np.roll(w0, x * (m // spec.p)))))
    return float(max(gaps))


def renyi_entropy(pmf, rho):
    """Order ``1 + rho`` Renyi entropy in nats."""
    p = np.asarray(pmf, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistribution("pmf must be non-negative and sum to 1")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    p = p[p > 0]
    return float(-special.logsumexp((1 + rho) * np.log(p)) / rho)


def resolvability_exponent(spec, rate, rhos=None):
    """Best ``rho R - psi(rho)`` over a grid of ``rho``: ``(rho, exponent)``."""
    rhos = np.linspace(0.05, 1.0, 20) if rhos is None else np.asarray(rhos)
    values = [r * rate - psi(spec, float(r)) for r in rhos]
    i = int(np.argmax(values))
    return float(rhos[i]), float(values[i])


@dataclass(frozen=True)
class RateGap:
    delta0: float
    gamma: float
    rate: float
    rate_condition: bool


def rate_gap(spec, n, v_target):
    """Gap ``delta0 = log(2 pi e / gamma) / 2`` of a target volume and the rate condition."""
    if not v_target > 0:
        raise ValueError("target volume must be positive")
    gamma = v_target ** (2.0 / n) / spec.sigma ** 2
    rate = math.log(spec.period) - math.log(v_target) / n
    return RateGap(0.5 * math.log(2 * math.pi * math.e / gamma), gamma, rate,
                   rate > channel_capacity(spec))


def code_lattice(spec, code):
    """``alpha (p Z^n + C)`` for a ``k x n`` generator ``code``."""
    code = np.atleast_2d(np.asarray(code, dtype=np.int64))
    k = code.shape[0]
    if k and rank_mod_p(code.T, spec.p) < k:
        raise RankDeficientCode("code generator is rank deficient")
    return construction_a(code.T, spec.p, spec.alpha)


def _empty_code(n):
    return np.zeros((0, n), dtype=np.int64)


@dataclass(frozen=True)
class ResolvabilityRun:
    n: int
    code: np.ndarray
    rate: float
    rate_gap: float
    divergence: Estimate


def resolvability_divergence(spec, n, code, samples=20_000, rng=None):
    """``D(W^n o U_C || W^n o U^n) = C(L_f^n / L)`` with ``L = alpha (p Z^n + C)``.

    The chain rule ``C(L) - C(L_f^n)`` is evaluated on shared Gaussian draws,
    so each sample contributes ``log V f_L(w) - log V_f f_{L_f^n}(w)``.
    """
    code = _empty_code(n) if code is None or np.size(code) == 0 else np.atleast_2d(code)
    L = code_lattice(spec, code)
    fine = Lattice(spec.alpha * np.eye(n))
    if L == fine:
        return Estimate(0.0, 0.0, samples)
    sigma = spec.sigma

    def draw(sub, m):
        w = sigma * sub.standard_normal((m, n))
        return folded_log_ratio(L, sigma, w) - folded_log_ratio(fine, sigma, w)

    est = mean_estimate(map_chunks(draw, samples, as_generator(rng)))
    return Estimate(max(est.value, 0.0), est.ci, est.samples)


def divergence_by_quadrature(spec, code, m=None):
    """Exhaustive-coset divergence for ``n <= 2`` on a periodic grid.

    The code output density is the average over all codewords ``c`` of the
    product densities ``prod_i W_{alpha c_i}(y_i)``.
    """
    code = np.atleast_2d(np.asarray(code, dtype=np.int64))
    k, n = code.shape
    if n > 2:
        raise ValueError("exhaustive evaluation is limited to n <= 2")
    m = m or spec.p * 128
    y = spec.period * np.arange(m) / m
    grids = np.meshgrid(*([y] * n), indexing="ij")
    words = {tuple((np.array(msg) @ code) % spec.p) for msg in np.ndindex(*([spec.p] * k))}
    logs = []
    for c in sorted(words):
        logs.append(sum(_log_transition(spec, grids[i] - spec.alpha * c[i]) for i in range(n)))
    log_pc = special.logsumexp(np.stack(logs), axis=0) - math.log(len(words))
    log_q = sum(_log_output(spec, grids[i]) for i in range(n))
    cell = (spec.period / m) ** n
    return float(np.sum(np.exp(log_pc) * (log_pc - log_q)) * cell)
